"""Stage functions shared by the CLI: motion loading, synthesis, ingest and windowing."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._util import derive_rng
from .dataset import Dataset, WindowSpec, concat_datasets, empty_dataset, layout_for
from .imu_sim import ImuTrace, SensorConfig, resample_trace, simulate_imu
from .kinematics import inverse_kinematics
from .motion_io import MotionSequence, Skeleton, forward_kinematics, parse_bvh, parse_joint_csv, to_z_up
from .pipeline import AdapterSpec, Recording, ingest_column_mapped, recording_from_traces, resample_recording, sliding_windows
from .provenance import Provenance
from .skeletons import BUILTIN_SKELETONS

DEFAULT_LABEL_PATTERN = r"^(?P<label>[A-Za-z0-9-]+)__"


def _axis_map(v: np.ndarray, up_axis: str) -> np.ndarray:
    up = up_axis.lower()
    if up == "z":
        return v
    if up == "y":
        return np.stack([v[..., 0], -v[..., 2], v[..., 1]], axis=-1)
    if up == "x":
        return np.stack([v[..., 1], v[..., 2], v[..., 0]], axis=-1)
    raise ValueError(f"unknown up axis {up_axis!r}")


def label_from_name(path: Path, pattern: str = DEFAULT_LABEL_PATTERN) -> str:
    m = re.search(pattern, path.name)
    if m is None or "label" not in m.groupdict():
        raise ValueError(f"cannot derive an activity label from file name {path.name!r}")
    return m.group("label")


def load_motion_file(
    path: str | Path,
    *,
    provenance: Provenance,
    skeleton: str | Skeleton = "smpl22",
    up_axis: str = "z",
    scale: float = 1.0,
    frame_rate: float | None = None,
    label_pattern: str = DEFAULT_LABEL_PATTERN,
) -> tuple[Skeleton, MotionSequence]:
    """Read a BVH or joint CSV motion into a z-up, metre-scaled sequence and its skeleton."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    label = label_from_name(path, label_pattern)
    if path.suffix.lower() == ".bvh":
        native, pose = parse_bvh(text, scale=scale)
        motion = to_z_up(forward_kinematics(native, pose), up_axis)
        skel = Skeleton(native.joint_names, native.parent_index, _axis_map(native.rest_offset, up_axis),
                        native.root_index)
    else:
        skel = BUILTIN_SKELETONS[skeleton]() if isinstance(skeleton, str) else skeleton
        raw = parse_joint_csv(text, skel.joint_names, frame_rate=frame_rate)
        motion = to_z_up(raw, up_axis, scale)
    motion = MotionSequence(motion.frame_rate, motion.positions, skel.joint_names, label, None, provenance)
    return skel, motion


@dataclass(frozen=True)
class SimSettings:
    accel_noise_std: float = 0.05
    gyro_noise_std: float = 0.01
    accel_bias_range: float = 0.0
    gyro_bias_range: float = 0.0
    seed: int = 0


def synthesize(
    skeleton: Skeleton,
    motion: MotionSequence,
    placements: Mapping[str, str],
    sim: SimSettings,
    trace_key: str,
    target_rate: float,
) -> list[ImuTrace]:
    """IK, then one simulated IMU per placement, resampled to ``target_rate``.

    Each placement draws noise from a generator keyed on (sim seed, trace key, placement).
    """
    rotations = inverse_kinematics(skeleton, motion)
    traces = []
    for sensor, joint in placements.items():
        cfg = SensorConfig(
            joint_index=skeleton.index(joint),
            accel_noise_std=sim.accel_noise_std,
            gyro_noise_std=sim.gyro_noise_std,
            accel_bias_range=sim.accel_bias_range,
            gyro_bias_range=sim.gyro_bias_range,
            seed=sim.seed,
        )
        tr = simulate_imu(motion, rotations, cfg, derive_rng(sim.seed, trace_key, sensor))
        tr = resample_trace(tr, target_rate)
        traces.append(replace(tr, sensor_name=sensor))
    return traces


def traces_to_dataset(
    groups: Sequence[tuple[str, Sequence[ImuTrace]]], spec: WindowSpec, placements: Sequence[str]
) -> Dataset:
    """Window each motion's stacked traces; ``groups`` pairs a source id with its traces."""
    parts = []
    for source_id, traces in groups:
        rec = recording_from_traces(traces, source_id=source_id)
        parts.append(sliding_windows(resample_recording(rec, spec.rate), spec))
    layout = layout_for([f"{p}/{k}" for p in placements for k in ("acc", "gyro")])
    if not parts:
        return empty_dataset(layout, spec)
    return concat_datasets([empty_dataset(layout, spec)] + parts)


def ingest_files(paths: Sequence[Path], adapter: AdapterSpec) -> list[Recording]:
    recs = []
    for p in paths:
        recs.append(ingest_column_mapped(Path(p).read_text(encoding="utf-8"), adapter, source_id=Path(p).stem))
    return recs


def recordings_to_dataset(recs: Sequence[Recording], spec: WindowSpec) -> Dataset:
    parts = [sliding_windows(resample_recording(r, spec.rate), spec) for r in recs]
    if not parts:
        raise ValueError("no recordings to window")
    return concat_datasets(parts)
