from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from virtimu.dataset import Dataset, WindowSpec, layout_for  # noqa: E402
from virtimu.kinematics import forward_kinematics_quat, quat_from_axis_angle  # noqa: E402
from virtimu.motion_io import MotionSequence, Skeleton  # noqa: E402
from virtimu.skeletons import smpl22  # noqa: E402

MINI_BVH = """HIERARCHY
ROOT hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT spine
  {
    OFFSET 0 0 0.2
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 0 0.3
    }
  }
  JOINT leg
  {
    OFFSET 0.1 0 -0.1
    CHANNELS 3 Xrotation Yrotation Zrotation
    JOINT foot
    {
      OFFSET 0 0 -0.4
      CHANNELS 3 Zrotation Xrotation Yrotation
    }
  }
}
MOTION
Frames: 3
Frame Time: 0.04
0 0 1 0 0 0 0 0 0 0 0 0 0 0 0
0.1 0 1 10 0 0 5 5 5 30 0 0 0 0 90
0.2 0 1 20 0 0 10 10 10 60 0 0 0 0 -90
"""


def random_unit_quats(rng: np.random.Generator, shape) -> np.ndarray:
    q = rng.normal(size=tuple(shape) + (4,))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q * np.where(q[..., :1] < 0, -1.0, 1.0)


def smooth_local_track(rng: np.random.Generator, n_frames: int, n_joints: int, max_angle: float = 1.2) -> np.ndarray:
    """Smoothly varying local rotations: per joint a fixed axis with a sinusoidal angle."""
    t = np.arange(n_frames) / n_frames
    axes = rng.normal(size=(n_joints, 3))
    amp = rng.uniform(0, max_angle, n_joints)
    phase = rng.uniform(0, 2 * np.pi, n_joints)
    angle = amp[None] * np.sin(2 * np.pi * t[:, None] + phase[None])
    out = np.empty((n_frames, n_joints, 4))
    for j in range(n_joints):
        out[:, j] = quat_from_axis_angle(axes[j], angle[:, j])
    return out


def motion_from_local(skeleton: Skeleton, local: np.ndarray, root: np.ndarray, rate: float = 30.0) -> MotionSequence:
    return MotionSequence(rate, forward_kinematics_quat(skeleton, local, root), skeleton.joint_names)


@pytest.fixture
def body() -> Skeleton:
    return smpl22()


@pytest.fixture
def mini_bvh() -> str:
    return MINI_BVH


def toy_dataset(n: int = 12, length: int = 40, sensors=("wrist/acc", "wrist/gyro"), classes=("a", "b"),
                subjects=("S1", "S2", "S3"), seed: int = 0, provenance: str = "real", prefix: str = "rec"):
    """Random windows whose class shifts the channel means, so classes are learnable."""
    rng = np.random.default_rng(seed)
    layout = layout_for(sensors)
    labels = [classes[i % len(classes)] for i in range(n)]
    shift = np.array([classes.index(lab) for lab in labels], dtype=float)
    windows = rng.normal(size=(n, length, len(layout))) + 2.0 * shift[:, None, None]
    return Dataset(
        windows=windows,
        labels=labels,
        subject_ids=[subjects[i % len(subjects)] for i in range(n)],
        provenance=[provenance] * n,
        window_ids=[f"{prefix}@{i:06d}" for i in range(n)],
        channel_layout=layout,
        spec=WindowSpec(length / 20.0, length / 40.0, 20.0),
    )


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
