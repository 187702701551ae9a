"""Built-in skeleton definitions."""

from __future__ import annotations

import numpy as np

from .motion_io import Skeleton

# SMPL-style 22-joint body (the joint set text-to-motion generators emit), z-up,
# metres, T-pose, facing -y with the body's left on +x.
SMPL22_JOINTS = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)
SMPL22_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)
_SMPL22_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.09, 0.0, -0.08), (-0.09, 0.0, -0.08),
    (0.0, 0.0, 0.11),
    (0.0, 0.0, -0.40), (0.0, 0.0, -0.40),
    (0.0, 0.0, 0.13),
    (0.0, 0.0, -0.40), (0.0, 0.0, -0.40),
    (0.0, 0.0, 0.06),
    (0.0, -0.12, -0.06), (0.0, -0.12, -0.06),
    (0.0, 0.0, 0.22),
    (0.07, 0.0, 0.12), (-0.07, 0.0, 0.12),
    (0.0, 0.0, 0.10),
    (0.11, 0.0, 0.02), (-0.11, 0.0, 0.02),
    (0.26, 0.0, 0.0), (-0.26, 0.0, 0.0),
    (0.25, 0.0, 0.0), (-0.25, 0.0, 0.0),
)


def smpl22(scale: float = 1.0) -> Skeleton:
    return Skeleton(SMPL22_JOINTS, SMPL22_PARENTS, np.array(_SMPL22_OFFSETS) * scale, root_index=0)


BUILTIN_SKELETONS = {"smpl22": smpl22}
