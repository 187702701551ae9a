"""Quaternion algebra and pelvis-rooted inverse kinematics.

Quaternions are float arrays with trailing dimension 4 in ``(w, x, y, z)`` order and
always unit norm; every function here vectorizes over leading dimensions.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .motion_io import MotionSequence, Skeleton

log = logging.getLogger(__name__)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
_EPS = 1e-12


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / n


def quat_positive(q: np.ndarray) -> np.ndarray:
    """Choose the representative with w >= 0."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0, -q, q)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, renormalized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return quat_normalize(out)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis: Sequence[float] | np.ndarray, angle: float | np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return quat_normalize(np.concatenate([np.cos(half), np.sin(half) * axis / n], axis=-1))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion (Shepperd's branch selection), w >= 0."""
    m = np.asarray(m, dtype=float)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    tr = np.trace(flat, axis1=1, axis2=2)
    diag = np.stack([flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=1)
    choice = np.argmax(np.column_stack([tr, diag]), axis=1)
    for i, (r, c) in enumerate(zip(flat, choice)):
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[i])
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2])
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2])
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return quat_positive(quat_normalize(out)).reshape(m.shape[:-2] + (4,))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of the shortest rotation represented by ``q``."""
    q = quat_positive(q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    # angle/s -> 2/w as s -> 0
    small = s <= 1e-12
    scale = np.where(small, 2.0 / np.where(small, q[..., :1], 1.0), angle / np.where(small, 1.0, s))
    return v * scale


def quat_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking direction ``a`` onto direction ``b``.

    Antiparallel inputs rotate by pi about ``a × e_i`` for the lowest-index basis
    vector ``e_i`` not parallel to ``a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("quat_between needs nonzero vectors")
    a = a / na
    b = b / nb
    c = np.cross(a, b)
    d = np.sum(a * b, axis=-1, keepdims=True)
    s = np.linalg.norm(c, axis=-1, keepdims=True)
    half = 0.5 * np.arctan2(s, d)
    axis = c / np.where(s > _EPS, s, 1.0)
    q = np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)
    anti = (s[..., 0] <= _EPS) & (d[..., 0] < 0)
    if np.any(anti):
        aa = a[anti]
        perp = np.empty_like(aa)
        for i, v in enumerate(aa):
            for e in np.eye(3):
                if abs(v @ e) < 1.0 - 1e-6:
                    perp[i] = np.cross(v, e)
                    break
        perp /= np.linalg.norm(perp, axis=-1, keepdims=True)
        q[anti] = np.concatenate([np.zeros((len(aa), 1)), perp], axis=-1)
    return quat_normalize(q)


def hemisphere_align(q: np.ndarray) -> np.ndarray:
    """Flip signs along axis 0 so consecutive quaternions have non-negative dot products."""
    q = np.array(q, dtype=float)
    for k in range(1, q.shape[0]):
        flip = np.sum(q[k] * q[k - 1], axis=-1) < 0
        q[k][flip] *= -1.0
    return q


@dataclass(frozen=True)
class RotationTrack:
    """Per-frame, per-joint unit quaternions in the world frame and relative to the parent."""

    global_: np.ndarray  # (F, J, 4)
    local: np.ndarray  # (F, J, 4)
    diagnostics: tuple[tuple[int, str], ...] = field(default=())

    @property
    def n_frames(self) -> int:
        return self.global_.shape[0]


_LEFT_HIP = re.compile(r"^(l|left)_?(hip|upleg|upperleg|thigh)|^(hip|upleg|thigh)_?(l|left)$")
_RIGHT_HIP = re.compile(r"^(r|right)_?(hip|upleg|upperleg|thigh)|^(hip|upleg|thigh)_?(r|right)$")
_SPINE = re.compile(r"spine|chest|torso|back|abdomen|neck")


def find_root_frame_joints(skeleton: Skeleton) -> tuple[int, int, int]:
    """(left hip, right hip, spine) indices by conventional joint names."""
    norm = [re.sub(r"[^a-z_]", "", n.lower()).replace("__", "_") for n in skeleton.joint_names]
    squash = [n.replace("_", "") for n in norm]

    def first(pattern: re.Pattern, candidates) -> int | None:
        for j in candidates:
            if pattern.search(norm[j]) or pattern.search(squash[j]):
                return j
        return None

    kids = skeleton.children(skeleton.root_index)
    everyone = skeleton.topological_order()
    found = []
    for pattern in (_LEFT_HIP, _RIGHT_HIP, _SPINE):
        j = first(pattern, kids)
        found.append(first(pattern, everyone) if j is None else j)
    lh, rh, sp = found
    if lh is None or rh is None or sp is None:
        raise ValueError(
            "cannot identify left hip, right hip and spine joints by name; pass root_joints explicitly"
        )
    return lh, rh, sp


def _frame_from_axes(lateral: np.ndarray, longitudinal: np.ndarray):
    """Gram-Schmidt with the lateral axis primary. Returns (F, 3, 3) and a degeneracy mask."""
    ln = np.linalg.norm(lateral, axis=-1, keepdims=True)
    bad = ln[..., 0] < 1e-9
    x = lateral / np.where(bad[..., None], 1.0, ln)
    z = longitudinal - np.sum(longitudinal * x, axis=-1, keepdims=True) * x
    zn = np.linalg.norm(z, axis=-1, keepdims=True)
    bad |= zn[..., 0] < 1e-9
    z = z / np.where(zn < 1e-9, 1.0, zn)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1), bad


def inverse_kinematics(
    skeleton: Skeleton,
    motion: MotionSequence,
    root_joints: tuple[int, int, int] | None = None,
) -> RotationTrack:
    """Recover joint rotations from joint positions, with zero twist where it is unobservable.

    The pelvis (skeleton root) orientation comes from the hip-to-hip and pelvis-to-spine
    axes. Every other joint takes its parent's world rotation and swings it so the
    first child's rest bone points along the observed bone; joints with two or more
    non-collinear children then twist about that bone to align the next child. Leaf
    joints inherit the parent rotation. Degenerate frames reuse the previous frame.
    """
    if motion.n_joints != skeleton.n_joints:
        raise ValueError("motion joint count differs from skeleton")
    if motion.joint_names is not None and tuple(motion.joint_names) != skeleton.joint_names:
        raise ValueError("motion joint order differs from skeleton; canonicalize at ingest")
    lh, rh, sp = root_joints if root_joints is not None else find_root_frame_joints(skeleton)
    root = skeleton.root_index
    P = np.asarray(motion.positions)
    n_frames, n_joints = P.shape[:2]
    rest = skeleton.rest_positions()
    bad = np.zeros(n_frames, dtype=bool)
    reasons: dict[int, str] = {}

    def mark(mask: np.ndarray, why: str) -> None:
        for f in np.flatnonzero(mask & ~bad):
            reasons[int(f)] = why
        bad[mask] = True

    obs_frame, degenerate = _frame_from_axes(P[:, lh] - P[:, rh], P[:, sp] - P[:, root])
    mark(degenerate, "degenerate root frame (coincident hips or spine along hip axis)")
    rest_frame, rest_bad = _frame_from_axes((rest[lh] - rest[rh])[None], (rest[sp] - rest[root])[None])
    if rest_bad[0]:
        raise ValueError("rest pose has a degenerate root frame")
    G = np.empty((n_frames, n_joints, 4))
    obs_frame[degenerate] = np.eye(3)
    G[:, root] = quat_from_matrix(obs_frame @ rest_frame[0].T)

    for j in skeleton.topological_order():
        if j == root:
            continue
        base = G[:, skeleton.parent_index[j]]
        kids = skeleton.children(j)
        if not kids:
            G[:, j] = base
            continue
        c1 = kids[0]
        o1 = P[:, c1] - P[:, j]
        n1 = np.linalg.norm(o1, axis=-1)
        zero = n1 < 1e-9
        mark(zero, f"zero-length bone {skeleton.joint_names[j]}->{skeleton.joint_names[c1]}")
        o1 = np.where(zero[:, None], quat_rotate(base, skeleton.rest_offset[c1]), o1)
        g = quat_mul(quat_between(quat_rotate(base, skeleton.rest_offset[c1]), o1), base)
        d1 = skeleton.rest_offset[c1] / np.linalg.norm(skeleton.rest_offset[c1])
        c2 = next(
            (k for k in kids[1:]
             if np.linalg.norm(np.cross(d1, skeleton.rest_offset[k] / np.linalg.norm(skeleton.rest_offset[k]))) > 1e-6),
            None,
        )
        if c2 is not None:
            n = o1 / np.linalg.norm(o1, axis=-1, keepdims=True)
            r2 = quat_rotate(g, skeleton.rest_offset[c2])
            o2 = P[:, c2] - P[:, j]
            u = r2 - np.sum(r2 * n, axis=-1, keepdims=True) * n
            w = o2 - np.sum(o2 * n, axis=-1, keepdims=True) * n
            ok = (np.linalg.norm(u, axis=-1) > 1e-9) & (np.linalg.norm(w, axis=-1) > 1e-9)
            ang = np.arctan2(np.sum(n * np.cross(u, w), axis=-1), np.sum(u * w, axis=-1))
            ang = np.where(ok, ang, 0.0)
            g = quat_mul(quat_from_axis_angle(n, ang), g)
        G[:, j] = g

    G = quat_positive(G)
    for f in range(n_frames):
        if bad[f]:
            G[f] = G[f - 1] if f > 0 else IDENTITY
    parents = np.array(skeleton.parent_index)
    L = G.copy()
    nonroot = parents >= 0
    L[:, nonroot] = quat_mul(quat_conj(G[:, parents[nonroot]]), G[:, nonroot])
    L = quat_positive(L)
    diags = tuple(sorted(reasons.items()))
    for f, why in diags:
        log.warning("IK frame %d: %s; reusing previous frame", f, why)
    return RotationTrack(G, L, diags)


def forward_kinematics_quat(skeleton: Skeleton, local: np.ndarray, root_position: np.ndarray) -> np.ndarray:
    """World joint positions (F, J, 3) from local quaternions and root positions."""
    local = np.asarray(local, dtype=float)
    n_frames = local.shape[0]
    G = np.empty_like(local)
    pos = np.empty((n_frames, skeleton.n_joints, 3))
    for j in skeleton.topological_order():
        p = skeleton.parent_index[j]
        if p < 0:
            G[:, j] = local[:, j]
            pos[:, j] = root_position
        else:
            G[:, j] = quat_mul(G[:, p], local[:, j])
            pos[:, j] = pos[:, p] + quat_rotate(G[:, p], skeleton.rest_offset[j])
    return pos


def global_from_local(skeleton: Skeleton, local: np.ndarray) -> np.ndarray:
    local = np.asarray(local, dtype=float)
    G = np.empty_like(local)
    for j in skeleton.topological_order():
        p = skeleton.parent_index[j]
        G[:, j] = local[:, j] if p < 0 else quat_mul(G[:, p], local[:, j])
    return G


def angular_velocity(track: RotationTrack | np.ndarray, frame_rate: float) -> np.ndarray:
    """Body-frame angular velocity (rad/s) from world orientations.

    Interior frames use the centred pair (k-1, k+1) over two frame intervals; the end
    frames use their single neighbour. Accepts a track or an (F, ..., 4) array.
    """
    q = track.global_ if isinstance(track, RotationTrack) else np.asarray(track, dtype=float)
    if q.shape[0] < 2:
        raise ValueError("angular velocity needs at least 2 frames")
    q = hemisphere_align(q)
    omega = np.empty(q.shape[:-1] + (3,))
    omega[0] = quat_to_rotvec(quat_mul(quat_conj(q[0]), q[1])) * frame_rate
    omega[-1] = quat_to_rotvec(quat_mul(quat_conj(q[-2]), q[-1])) * frame_rate
    if q.shape[0] > 2:
        omega[1:-1] = quat_to_rotvec(quat_mul(quat_conj(q[:-2]), q[2:])) * (0.5 * frame_rate)
    return omega
