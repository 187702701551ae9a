from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import toy_dataset
from oracles import brute_force_windows
from virtimu.dataset import WindowSpec, concat_datasets, layout_for
from virtimu.pipeline import (
    AdapterSpec,
    Configuration,
    DatasetFormatError,
    IngestError,
    Recording,
    compose_configuration,
    export_recording,
    ingest_column_mapped,
    load_dataset,
    recording_from_traces,
    resample_recording,
    restrict_to,
    save_dataset,
    sliding_windows,
    subsample_fraction,
    window_count,
)
from virtimu.imu_sim import ImuTrace

LAYOUT = layout_for(["wrist/acc"])


def ramp_recording(n: int, labels, rate: float = 20.0, source_id: str = "r") -> Recording:
    ch = np.arange(n, dtype=float)[:, None].repeat(3, axis=1)
    return Recording(rate, ch, LAYOUT, labels, subject_id="S1", source_id=source_id)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 400), st.integers(1, 60), st.data())
def test_window_boundaries_match_brute_force(n, length, data):
    stride = data.draw(st.integers(1, length))  # overlap can not be negative
    spec = WindowSpec(length / 20.0, (length - stride) / 20.0, 20.0)
    ds = sliding_windows(ramp_recording(n, "walk"), spec)
    expected = brute_force_windows(n, length, stride)
    assert len(ds) == len(expected) == window_count(n, length, stride)
    for w, (a, b) in zip(ds.windows, expected):
        np.testing.assert_array_equal(w[:, 0], np.arange(a, b))


def test_default_spec_is_forty_samples_at_stride_twenty():
    spec = WindowSpec()
    assert (spec.length, spec.stride) == (40, 20)
    ds = sliding_windows(ramp_recording(100, "walk"))
    assert [int(w[0, 0]) for w in ds.windows] == [0, 20, 40, 60]
    assert ds.window_ids.tolist() == ["r@000000", "r@000020", "r@000040", "r@000060"]


def test_majority_label_and_coverage():
    spec = WindowSpec(0.5, 0.0, 20.0)  # 10-sample windows
    labels = ["a"] * 6 + ["b"] * 4 + ["a"] * 3 + ["b"] * 3 + [None] * 4 + [None] * 6 + ["c"] * 4
    ds = sliding_windows(ramp_recording(30, labels), spec)
    # window 0: a wins 6/10; window 1: 3a,3b,4 unlabelled -> majority None -> dropped;
    # window 2: 6 unlabelled -> dropped
    assert ds.labels.tolist() == ["a"]


def test_tie_goes_to_earliest_label_and_low_coverage_drops():
    spec = WindowSpec(0.5, 0.0, 20.0)
    tie = ["b"] * 5 + ["a"] * 5
    assert sliding_windows(ramp_recording(10, tie), spec).labels.tolist() == ["b"]
    spread = ["a"] * 4 + ["b"] * 3 + ["c"] * 3
    assert len(sliding_windows(ramp_recording(10, spread), spec)) == 0


def test_window_rate_must_match():
    with pytest.raises(ValueError, match="resample"):
        sliding_windows(ramp_recording(50, "a", rate=50.0))


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec(2.0, 2.0)
    with pytest.raises(ValueError):
        WindowSpec(2.03, 1.0, 20.0)


ADAPTER = AdapterSpec(
    channels={"wrist/acc": ["ax", "ay", "az"], "wrist/gyro": ["gx", "gy", "gz"]},
    timestamp="time_ms",
    timestamp_scale=0.001,
    label="act",
    label_map={"1": "walk", "2": "run"},
    subject="who",
)


def vendor_csv(rows) -> str:
    head = "# exported by device\ntime_ms,who,act,ax,ay,az,gx,gy,gz\n"
    return head + "\n".join(",".join(map(str, r)) for r in rows) + "\n"


def test_ingest_maps_columns_labels_and_rate():
    rows = [(50 * k, "P7", "1" if k < 3 else "9", k, 2 * k, 3 * k, 0, 0, k) for k in range(5)]
    rec = ingest_column_mapped(vendor_csv(rows), ADAPTER)
    assert rec.sample_rate == pytest.approx(20.0)
    assert rec.subject_id == "P7"
    assert rec.labels.tolist() == ["walk", "walk", "walk", None, None]  # unmapped raw label
    np.testing.assert_array_equal(rec.channels[4], [4, 8, 12, 0, 0, 4])
    assert rec.channel_layout[3] == ("wrist/gyro", "x")


def test_ingest_drops_rows_with_unreadable_cells():
    rows = [(0, "P", 1, 0, 0, 0, 0, 0, 0), (50, "P", 1, "nan", 0, 0, 0, 0, 0), (100, "P", 1, 1, 1, 1, 1, 1, "x"),
            (150, "P", 1, 2, 2, 2, 2, 2, 2), (200, "P", 1, 3, 3, 3, 3, 3, 3)]
    rec = ingest_column_mapped(vendor_csv(rows), ADAPTER)
    assert rec.n_samples == 3 and rec.dropped_rows == 2


def test_ingest_errors():
    rows = [(0, "A", 1, 0, 0, 0, 0, 0, 0), (50, "B", 1, 0, 0, 0, 0, 0, 0)]
    with pytest.raises(IngestError, match="mixes"):
        ingest_column_mapped(vendor_csv(rows), ADAPTER)
    with pytest.raises(IngestError, match="missing mapped column"):
        ingest_column_mapped("a,b\n1,2\n", ADAPTER)
    with pytest.raises(IngestError, match="unknown adapter keys"):
        AdapterSpec.from_dict({"channels": {"w": ["a", "b", "c"]}, "colour": 1})
    with pytest.raises(IngestError, match="exactly 3"):
        AdapterSpec.from_dict({"channels": {"w": ["a", "b"]}})


def test_ingest_without_header_uses_positions():
    spec = AdapterSpec(channels={"hip/acc": [1, 2, 3]}, has_header=False, sample_rate=20.0, activity_label="sit")
    rec = ingest_column_mapped("9,1,2,3\n9,4,5,6\n", spec)
    np.testing.assert_array_equal(rec.channels, [[1, 2, 3], [4, 5, 6]])
    assert rec.labels.tolist() == ["sit", "sit"]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_export_then_ingest_is_exact(seed):
    rng = np.random.default_rng(seed)
    n = 30
    labels = [None if x < 0.2 else ("walk" if x < 0.6 else "run") for x in rng.random(n)]
    rec = Recording(20.0, rng.normal(size=(n, 6)), layout_for(["a/acc", "a/gyro"]), labels, subject_id="S9")
    text, spec = export_recording(rec)
    back = ingest_column_mapped(text, AdapterSpec.from_dict(spec.to_dict()))
    np.testing.assert_array_equal(back.channels, rec.channels)
    assert back.labels.tolist() == rec.labels.tolist()
    assert back.subject_id == "S9" and back.sample_rate == 20.0


def test_resample_recording_keeps_nearest_labels():
    rec = ramp_recording(11, ["a"] * 5 + ["b"] * 6, rate=100.0)
    out = resample_recording(rec, 20.0)
    assert out.n_samples == 3
    assert out.labels.tolist() == ["a", "b", "b"]
    np.testing.assert_allclose(out.channels[:, 0], [0, 5, 10])


def test_recording_from_traces_stacks_sensors():
    tr = [ImuTrace(20.0, np.ones((5, 3)) * k, np.zeros((5, 3)), joint_index=k, sensor_name=f"s{k}",
                   activity_label="walk", provenance="virtual_text") for k in range(2)]
    rec = recording_from_traces(tr, source_id="m")
    assert rec.channel_layout[:3] == (("s0/acc", "x"), ("s0/acc", "y"), ("s0/acc", "z"))
    assert rec.channels.shape == (5, 12) and rec.provenance.value == "virtual_text"


def test_subsample_is_stratified_and_deterministic():
    ds = toy_dataset(40)
    a = subsample_fraction(ds, 0.1, 17)
    assert sorted(a.labels.tolist()) == ["a", "a", "b", "b"]
    assert subsample_fraction(ds, 0.1, 17).window_ids.tolist() == a.window_ids.tolist()
    # membership does not depend on the input order
    flipped = subsample_fraction(ds.subset(np.arange(40)[::-1]), 0.1, 17)
    assert set(flipped.window_ids) == set(a.window_ids)
    assert subsample_fraction(ds, 1.0, 3) is ds
    assert len(subsample_fraction(toy_dataset(4), 0.01, 1)) == 2  # at least one per class
    with pytest.raises(ValueError):
        subsample_fraction(ds, 0.0, 1)


def test_compose_configurations():
    real = toy_dataset(6, classes=("a", "b"))
    text = toy_dataset(5, classes=("a", "b", "z"), provenance="virtual_text", prefix="txt")
    video = toy_dataset(4, provenance="virtual_video", prefix="vid")
    assert compose_configuration(real, text, video, "RealOnly") is real
    gpt = compose_configuration(real, text, video, Configuration.REAL_IMUGPT)
    assert len(gpt) == 6 + 4  # the unknown activity "z" is filtered out
    both = compose_configuration(real, text, video, "Real+IMUGPT+IMUTube")
    assert len(both) == 14 and set(both.provenance) == {"real", "virtual_text", "virtual_video"}
    assert len(compose_configuration(real, None, None, "Real+Augmentation")) == 24
    with pytest.raises(ValueError, match="needs a virtual_video"):
        compose_configuration(real, text, None, "Real+IMUTube")
    with pytest.raises(ValueError):
        compose_configuration(real, text, video, "Real+GAN")


def test_restrict_reorders_channels():
    real = toy_dataset(4, sensors=("wrist/acc",))
    virt = toy_dataset(4, sensors=("ankle/acc", "wrist/acc"), prefix="v")
    out = restrict_to(real, virt)
    assert out.channel_layout == real.channel_layout
    np.testing.assert_array_equal(out.windows, virt.windows[:, :, 3:])
    with pytest.raises(ValueError, match="layout mismatch"):
        restrict_to(toy_dataset(2, sensors=("hip/acc",)), virt)


def test_concat_rejects_mismatched_layouts():
    with pytest.raises(ValueError):
        concat_datasets([toy_dataset(2), toy_dataset(2, sensors=("x/acc",), prefix="q")])


def test_save_load_round_trip(tmp_path):
    ds = toy_dataset(5)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.equals(ds)


def test_load_detects_tampering(tmp_path):
    d = save_dataset(toy_dataset(3), tmp_path / "d")
    target = d / "windows" / "000001.csv"
    target.write_text(target.read_text().replace("\n", "\n ", 1))
    with pytest.raises(DatasetFormatError, match="checksum"):
        load_dataset(d)


def test_load_detects_count_mismatch(tmp_path):
    d = save_dataset(toy_dataset(3), tmp_path / "d")
    m = json.loads((d / "manifest.json").read_text())
    m["count"] = 4
    (d / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetFormatError, match="count"):
        load_dataset(d)
    (d / "manifest.json").write_text("{")
    with pytest.raises(DatasetFormatError):
        load_dataset(d)
