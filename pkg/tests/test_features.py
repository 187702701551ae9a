from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import toy_dataset
from oracles import quantile_midpoints
from virtimu.features import EcdfSpec, ecdf_features, feature_names, featurize_dataset, inverse_ecdf, write_feature_csv

finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(arrays(float, st.integers(1, 60), elements=finite), st.integers(1, 20))
def test_inverse_ecdf_matches_oracle_and_is_monotone(x, m):
    q = inverse_ecdf(x, m)
    np.testing.assert_allclose(q, quantile_midpoints(x, m), rtol=1e-12, atol=1e-9)
    assert np.all(np.diff(q) >= 0)
    assert q.min() >= x.min() and q.max() <= x.max()


def test_constant_channel_gives_constant_quantiles():
    np.testing.assert_array_equal(inverse_ecdf(np.full(40, 2.5), 15), np.full(15, 2.5))


def test_known_quantiles():
    # 0..39 with m = 4: positions (0.125, 0.375, 0.625, 0.875) * 39
    np.testing.assert_allclose(inverse_ecdf(np.arange(40.0), 4), [4.875, 14.625, 24.375, 34.125])


def test_feature_layout_per_channel():
    rng = np.random.default_rng(0)
    win = rng.normal(size=(40, 6))
    f = ecdf_features(win)
    assert f.shape == (6 * 16,)
    for c in range(6):
        block = f[c * 16:(c + 1) * 16]
        np.testing.assert_allclose(block[:15], inverse_ecdf(win[:, c], 15), rtol=0, atol=1e-12)
        assert block[15] == pytest.approx(win[:, c].mean())
    assert ecdf_features(win, EcdfSpec(10, False)).shape == (60,)
    assert feature_names(2, EcdfSpec(2, True)) == ("ch0_q1", "ch0_q2", "ch0_mean", "ch1_q1", "ch1_q2", "ch1_mean")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_equals_single_window(seed):
    ds = toy_dataset(5, seed=seed % 1000)
    table = featurize_dataset(ds)
    for i in range(len(ds)):
        np.testing.assert_allclose(table.X[i], ecdf_features(ds.segment(i)), rtol=0, atol=1e-12)


def test_permuting_time_does_not_change_features():
    rng = np.random.default_rng(1)
    win = rng.normal(size=(40, 6))
    np.testing.assert_allclose(ecdf_features(win[rng.permutation(40)]), ecdf_features(win), atol=1e-12)


def test_feature_csv_shape():
    table = featurize_dataset(toy_dataset(4))
    lines = write_feature_csv(table).splitlines()
    assert len(lines) == 5
    assert lines[0].endswith("label,subject,provenance")
    assert len(lines[1].split(",")) == 6 * 16 + 3


def test_invalid_spec():
    with pytest.raises(ValueError):
        EcdfSpec(0)
    with pytest.raises(ValueError):
        ecdf_features(np.zeros((0, 3)))
