"""Virtual accelerometer/gyroscope readings from joint trajectories and orientations."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import RotationTrack, angular_velocity, quat_conj, quat_rotate
from .motion_io import MotionSequence
from .provenance import Provenance

STANDARD_GRAVITY = 9.81


@dataclass(frozen=True)
class SensorConfig:
    joint_index: int
    gravity: tuple[float, float, float] = (0.0, 0.0, -STANDARD_GRAVITY)
    accel_noise_std: float = 0.05  # m/s^2
    gyro_noise_std: float = 0.01  # rad/s
    accel_bias_range: float = 0.0  # half-width of the uniform per-axis bias draw
    gyro_bias_range: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("accel_noise_std", "gyro_noise_std", "accel_bias_range", "gyro_bias_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class ImuTrace:
    sample_rate: float
    accel: np.ndarray  # (N, 3) specific force, m/s^2, sensor frame
    gyro: np.ndarray  # (N, 3) rad/s, sensor frame
    joint_index: int = -1
    activity_label: str | None = None
    subject_id: str | None = None
    provenance: Provenance = Provenance.VIRTUAL_TEXT
    sensor_name: str = field(default="")

    def __post_init__(self):
        acc = np.asarray(self.accel, dtype=float)
        gyr = np.asarray(self.gyro, dtype=float)
        if acc.ndim != 2 or acc.shape[1] != 3 or acc.shape != gyr.shape:
            raise ValueError("accel and gyro must both be (samples, 3)")
        if not np.all(np.isfinite(acc)) or not np.all(np.isfinite(gyr)):
            raise ValueError("trace values must be finite")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "accel", acc)
        object.__setattr__(self, "gyro", gyr)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def n_samples(self) -> int:
        return self.accel.shape[0]


def linear_acceleration(motion: MotionSequence, joint: int) -> np.ndarray:
    """World-frame acceleration by central second differences; ends copy their neighbour."""
    if motion.n_frames < 3:
        raise ValueError("linear acceleration needs at least 3 frames")
    p = np.asarray(motion.positions[:, joint], dtype=float)
    acc = np.empty_like(p)
    acc[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) * motion.frame_rate**2
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    return acc


def simulate_imu(
    motion: MotionSequence,
    rotations: RotationTrack,
    config: SensorConfig,
    rng: np.random.Generator | None = None,
) -> ImuTrace:
    """Simulate one body-worn IMU rigidly attached at a joint centre.

    The sensor frame is the joint's world rotation. Noise is drawn in a fixed order
    (accel white noise, gyro white noise, accel bias, gyro bias) from ``rng``, or from a
    generator seeded with ``config.seed``.
    """
    j = config.joint_index
    if not 0 <= j < motion.n_joints:
        raise ValueError(f"joint index {j} out of range")
    if rotations.global_.shape[:2] != motion.positions.shape[:2]:
        raise ValueError("rotation track and motion are not aligned")
    q = rotations.global_[:, j]
    world_acc = linear_acceleration(motion, j)
    g = np.asarray(config.gravity, dtype=float)
    accel = quat_rotate(quat_conj(q), world_acc - g)
    gyro = angular_velocity(q, motion.frame_rate)

    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = accel.shape[0]
    accel = accel + rng.normal(0.0, 1.0, (n, 3)) * config.accel_noise_std
    gyro = gyro + rng.normal(0.0, 1.0, (n, 3)) * config.gyro_noise_std
    accel = accel + rng.uniform(-1.0, 1.0, 3) * config.accel_bias_range
    gyro = gyro + rng.uniform(-1.0, 1.0, 3) * config.gyro_bias_range
    return ImuTrace(
        sample_rate=motion.frame_rate,
        accel=accel,
        gyro=gyro,
        joint_index=j,
        activity_label=motion.activity_label,
        subject_id=motion.subject_id,
        provenance=motion.provenance,
        sensor_name=(motion.joint_names[j] if motion.joint_names else f"j{j}"),
    )


def resample_uniform(values: np.ndarray, source_rate: float, target_rate: float) -> np.ndarray:
    """Linear interpolation of (N, ...) samples onto a grid starting at t=0."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n == 0:
        raise ValueError("cannot resample an empty signal")
    if not target_rate > 0:
        raise ValueError("target rate must be positive")
    if target_rate == source_rate:
        return values.copy()
    duration = (n - 1) / source_rate
    n_out = int(np.floor(duration * target_rate + 1e-9)) + 1
    t_out = np.arange(n_out) / target_rate
    t_src = np.arange(n) / source_rate
    flat = values.reshape(n, -1)
    out = np.column_stack([np.interp(t_out, t_src, flat[:, c]) for c in range(flat.shape[1])])
    return out.reshape((n_out,) + values.shape[1:])


def resample_trace(trace: ImuTrace, target_rate: float) -> ImuTrace:
    if trace.n_samples == 0:
        raise ValueError("cannot resample an empty trace")
    both = np.concatenate([trace.accel, trace.gyro], axis=1)
    out = resample_uniform(both, trace.sample_rate, target_rate)
    return replace(trace, sample_rate=float(target_rate), accel=out[:, :3], gyro=out[:, 3:])


TRACE_COLUMNS = ("t", "ax", "ay", "az", "gx", "gy", "gz")


def write_trace_csv(trace: ImuTrace) -> str:
    out = io.StringIO()
    out.write(",".join(TRACE_COLUMNS) + "\n")
    t = np.arange(trace.n_samples) / trace.sample_rate
    for k in range(trace.n_samples):
        row = [t[k], *trace.accel[k], *trace.gyro[k]]
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def read_trace_csv(text: str, **meta) -> ImuTrace:
    """Parse a trace CSV; ``meta`` fills the non-signal ImuTrace fields."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = [h.strip() for h in lines[0].split(",")]
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"trace CSV header must be {','.join(TRACE_COLUMNS)}")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]], dtype=float)
    if data.shape[0] < 2:
        raise ValueError("trace CSV needs at least 2 samples")
    dt = np.diff(data[:, 0])
    rate = meta.pop("sample_rate", None) or 1.0 / float(np.mean(dt))
    return ImuTrace(sample_rate=rate, accel=data[:, 1:4], gyro=data[:, 4:7], **meta)
