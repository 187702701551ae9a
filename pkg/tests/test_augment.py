from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_dataset
from virtimu.augment import AugmentParams, add_bias, add_gaussian_noise, augment_dataset, rotate_z, rotation_z
from virtimu.dataset import SegmentMatrix, layout_for
from virtimu.provenance import Provenance

LAYOUT = layout_for(["wrist/acc", "wrist/gyro"])


def segment(values) -> SegmentMatrix:
    return SegmentMatrix(np.asarray(values, dtype=float), LAYOUT)


def test_rotation_of_unit_x():
    seg = segment([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]])
    out = rotate_z(seg, math.pi / 6).values[0]
    np.testing.assert_allclose(out[:3], [math.sqrt(3) / 2, 0.5, 0.0], atol=1e-9)
    np.testing.assert_allclose(out[3:], out[:3], atol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-math.pi, math.pi))
def test_rotation_keeps_norms_and_vertical_axis(seed, theta):
    vals = np.random.default_rng(seed).normal(size=(20, 6))
    out = rotate_z(segment(vals), theta).values
    for s in (slice(0, 3), slice(3, 6)):
        np.testing.assert_allclose(np.linalg.norm(out[:, s], axis=1), np.linalg.norm(vals[:, s], axis=1), atol=1e-12)
    np.testing.assert_array_equal(out[:, [2, 5]], vals[:, [2, 5]])
    # the formula X R^T, written out per row
    np.testing.assert_allclose(out[:, :3], vals[:, :3] @ rotation_z(theta).T, atol=1e-15)


def test_zero_sigma_and_zero_halfwidth_are_identities():
    seg = segment(np.random.default_rng(0).normal(size=(40, 6)))
    rng = np.random.default_rng(1)
    np.testing.assert_array_equal(add_gaussian_noise(seg, 0.0, rng).values, seg.values)
    np.testing.assert_array_equal(add_bias(seg, 0.0, rng).values, seg.values)
    np.testing.assert_array_equal(rotate_z(seg, 0.0).values, seg.values)


def test_bias_is_constant_in_time_and_bounded():
    seg = segment(np.zeros((40, 6)))
    out = add_bias(seg, 0.1, np.random.default_rng(5)).values
    assert np.all(out == out[0])
    assert np.all(np.abs(out) <= 0.1)
    assert len(set(out[0].tolist())) == 6  # independent per channel


def test_noise_statistics():
    seg = segment(np.zeros((20000, 6)))
    out = add_gaussian_noise(seg, 0.05, np.random.default_rng(2)).values
    np.testing.assert_allclose(out.std(axis=0), 0.05, rtol=0.03)
    assert np.abs(out.mean()) < 1e-3


def test_negative_parameters_rejected():
    with pytest.raises(ValueError):
        add_gaussian_noise(segment(np.zeros((2, 6))), -0.1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        AugmentParams(bias_halfwidth=-1)


def test_augment_quadruples_and_tags():
    ds = toy_dataset(10)
    out = augment_dataset(ds, AugmentParams(seed=3))
    assert len(out) == 4 * len(ds)
    assert out.provenance[:10].tolist() == ["real"] * 10
    assert set(out.provenance[10:].tolist()) == {Provenance.AUGMENTED.value}
    assert out.window_ids[10] == f"{ds.window_ids[0]}~rot"
    assert out.origin_ids[25] == ds.window_ids[5]
    np.testing.assert_array_equal(out.labels[10:20], ds.labels)
    np.testing.assert_array_equal(out.subject_ids[30:], ds.subject_ids)
    np.testing.assert_array_equal(out.windows[:10], ds.windows)


def test_augment_is_order_independent():
    ds = toy_dataset(10)
    perm = np.random.default_rng(0).permutation(10)
    a = augment_dataset(ds, AugmentParams(seed=3))
    b = augment_dataset(ds.subset(perm), AugmentParams(seed=3))
    pos_a = {w: i for i, w in enumerate(a.window_ids)}
    for i, w in enumerate(b.window_ids):
        np.testing.assert_array_equal(b.windows[i], a.windows[pos_a[w]])


def test_augment_seed_changes_noise_only():
    ds = toy_dataset(6)
    a = augment_dataset(ds, AugmentParams(seed=1))
    b = augment_dataset(ds, AugmentParams(seed=2))
    np.testing.assert_array_equal(a.windows[:12], b.windows[:12])
    assert not np.array_equal(a.windows[12:], b.windows[12:])
