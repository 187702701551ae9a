"""Skeletons and joint-motion sequences: BVH and joint-trajectory CSV I/O, forward kinematics.

Supported BVH subset: a single ROOT, JOINT/End Site nesting, OFFSET, CHANNELS with
``Xposition``/``Yposition``/``Zposition`` (root only) and ``Xrotation``/``Yrotation``/
``Zrotation`` tokens, and a MOTION block with ``Frames:`` and ``Frame Time:`` lines.
Euler angles are in degrees and compose intrinsically in the order listed on the
CHANNELS line. End Sites are not joints; their offsets are ignored.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .provenance import Provenance

_AXES = "XYZ"
_VALID_ORDERS = ("XYZ", "XZY", "YXZ", "YZX", "ZXY", "ZYX")


class MotionFormatError(ValueError):
    """Malformed motion input. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class BvhParseError(MotionFormatError):
    pass


class JointCsvError(MotionFormatError):
    pass


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]  # -1 marks the root
    rest_offset: np.ndarray  # (J, 3) metres, offset from parent in the rest pose
    root_index: int = 0

    def __post_init__(self):
        names = tuple(self.joint_names)
        parents = tuple(int(p) for p in self.parent_index)
        offsets = np.asarray(self.rest_offset, dtype=float).reshape(len(names), 3)
        object.__setattr__(self, "joint_names", names)
        object.__setattr__(self, "parent_index", parents)
        object.__setattr__(self, "rest_offset", offsets)
        offsets.setflags(write=False)
        if len(set(names)) != len(names):
            raise ValueError("duplicate joint names")
        if len(parents) != len(names):
            raise ValueError("parent_index length differs from joint count")
        roots = [j for j, p in enumerate(parents) if p < 0]
        if roots != [self.root_index]:
            raise ValueError(f"skeleton must have exactly one root at index {self.root_index}, got {roots}")
        for j, p in enumerate(parents):
            if p >= len(names):
                raise ValueError(f"joint {names[j]!r} has out-of-range parent {p}")
        # every joint must reach the root without revisiting a node
        for j in range(len(names)):
            seen = set()
            k = j
            while k >= 0:
                if k in seen:
                    raise ValueError(f"cycle in skeleton hierarchy at joint {names[j]!r}")
                seen.add(k)
                k = parents[k]
        lengths = np.linalg.norm(offsets, axis=1)
        for j in range(len(names)):
            if j != self.root_index and not lengths[j] > 0:
                raise ValueError(f"joint {names[j]!r} has a zero-length rest offset")
        if not np.all(np.isfinite(offsets)):
            raise ValueError("rest offsets must be finite")

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"unknown joint {name!r}") from None

    def children(self, j: int) -> list[int]:
        return [k for k, p in enumerate(self.parent_index) if p == j]

    def topological_order(self) -> list[int]:
        """Joint indices with every parent listed before its children."""
        order = [self.root_index]
        i = 0
        while i < len(order):
            order.extend(self.children(order[i]))
            i += 1
        return order

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros((self.n_joints, 3))
        for j in self.topological_order():
            p = self.parent_index[j]
            pos[j] = self.rest_offset[j] if p < 0 else pos[p] + self.rest_offset[j]
        return pos


@dataclass(frozen=True)
class MotionSequence:
    frame_rate: float
    positions: np.ndarray  # (F, J, 3) metres, world frame
    joint_names: tuple[str, ...] | None = None
    activity_label: str | None = None
    subject_id: str | None = None
    provenance: Provenance = Provenance.VIRTUAL_TEXT

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError(f"positions must have shape (frames, joints, 3), got {pos.shape}")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        if pos.shape[0] < 2:
            raise ValueError("a motion sequence needs at least 2 frames")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if self.joint_names is not None:
            names = tuple(self.joint_names)
            if len(names) != pos.shape[1]:
                raise ValueError("joint_names length differs from joint count")
            object.__setattr__(self, "joint_names", names)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_joints(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_frames - 1) / self.frame_rate


@dataclass(frozen=True)
class ChannelPose:
    """Per-frame root translation and per-joint local Euler rotations (degrees)."""

    frame_rate: float
    root_translation: np.ndarray  # (F, 3)
    rotations: np.ndarray  # (F, J, 3), angle k belongs to axis rotation_orders[j][k]
    rotation_orders: tuple[str, ...] = field(default=())

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=float)
        if rot.ndim != 3 or rot.shape[2] != 3:
            raise ValueError("rotations must have shape (frames, joints, 3)")
        orders = tuple(self.rotation_orders) or ("ZXY",) * rot.shape[1]
        if len(orders) != rot.shape[1]:
            raise ValueError("one rotation order per joint required")
        for o in orders:
            if o not in _VALID_ORDERS:
                raise ValueError(f"invalid rotation order {o!r}")
        trans = np.asarray(self.root_translation, dtype=float).reshape(rot.shape[0], 3)
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "root_translation", trans)
        object.__setattr__(self, "rotation_orders", orders)

    @property
    def n_frames(self) -> int:
        return self.rotations.shape[0]


def axis_rotation_matrices(axis: str, angle_rad: np.ndarray) -> np.ndarray:
    """Stack of right-handed rotation matrices about a principal axis."""
    a = np.asarray(angle_rad, dtype=float)
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(a), np.zeros_like(a)
    if axis == "X":
        m = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == "Y":
        m = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    elif axis == "Z":
        m = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return np.moveaxis(np.array(m), (0, 1), (-2, -1))


def euler_to_matrix(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic Euler composition: R = R_order[0] @ R_order[1] @ R_order[2]."""
    angles = np.radians(np.asarray(angles_deg, dtype=float))
    out = axis_rotation_matrices(order[0], angles[..., 0])
    for k in (1, 2):
        out = out @ axis_rotation_matrices(order[k], angles[..., k])
    return out


def forward_kinematics(
    skeleton: Skeleton,
    pose: ChannelPose,
    *,
    activity_label: str | None = None,
    subject_id: str | None = None,
    provenance: Provenance = Provenance.VIRTUAL_TEXT,
) -> MotionSequence:
    """World joint positions from root translation and local Euler rotations."""
    if pose.rotations.shape[1] != skeleton.n_joints:
        raise ValueError("pose joint count differs from skeleton")
    n_frames = pose.n_frames
    world_rot = np.zeros((n_frames, skeleton.n_joints, 3, 3))
    world_pos = np.zeros((n_frames, skeleton.n_joints, 3))
    for j in skeleton.topological_order():
        local = euler_to_matrix(pose.rotations[:, j], pose.rotation_orders[j])
        p = skeleton.parent_index[j]
        if p < 0:
            world_rot[:, j] = local
            world_pos[:, j] = pose.root_translation
        else:
            world_rot[:, j] = world_rot[:, p] @ local
            world_pos[:, j] = world_pos[:, p] + world_rot[:, p] @ skeleton.rest_offset[j]
    return MotionSequence(
        frame_rate=pose.frame_rate,
        positions=world_pos,
        joint_names=skeleton.joint_names,
        activity_label=activity_label,
        subject_id=subject_id,
        provenance=provenance,
    )


# --------------------------------------------------------------------------- BVH


_CHANNEL_TOKENS = {
    "Xposition": ("pos", 0),
    "Yposition": ("pos", 1),
    "Zposition": ("pos", 2),
    "Xrotation": ("rot", "X"),
    "Yrotation": ("rot", "Y"),
    "Zrotation": ("rot", "Z"),
}


def _tokens_with_lines(lines: Sequence[str], start: int, stop: int):
    for lineno in range(start, stop):
        for tok in lines[lineno].split():
            yield tok, lineno + 1


def _parse_float(tok: str, line: int, cls=BvhParseError) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise cls(f"expected a number, got {tok!r}", line) from None
    if not math.isfinite(v):
        raise cls(f"non-finite number {tok!r}", line)
    return v


def parse_bvh(text: str, *, scale: float = 1.0) -> tuple[Skeleton, ChannelPose]:
    """Parse BVH text into a skeleton and its per-frame channel values.

    ``scale`` multiplies offsets and root translations (e.g. 0.01 for centimetre files).
    """
    lines = text.splitlines()
    motion_line = next((i for i, ln in enumerate(lines) if ln.strip().upper().startswith("MOTION")), None)
    if motion_line is None:
        raise BvhParseError("missing MOTION section", len(lines) or 1)
    toks = list(_tokens_with_lines(lines, 0, motion_line))
    if not toks or toks[0][0].upper() != "HIERARCHY":
        raise BvhParseError("file must start with HIERARCHY", toks[0][1] if toks else 1)

    names: list[str] = []
    parents: list[int] = []
    offsets: list[list[float]] = []
    joint_channels: list[list[tuple[str, object]]] = []
    offset_lines: list[int] = []
    pos = 1

    def take(expected: str | None = None) -> tuple[str, int]:
        nonlocal pos
        if pos >= len(toks):
            last = toks[-1][1] if toks else 1
            raise BvhParseError(f"unexpected end of hierarchy (expected {expected or 'token'})", last)
        tok, ln = toks[pos]
        if expected is not None and tok != expected:
            raise BvhParseError(f"expected {expected!r}, got {tok!r}", ln)
        pos += 1
        return tok, ln

    def parse_joint(parent: int, is_root: bool) -> None:
        name, ln = take()
        if name in ("{", "}"):
            raise BvhParseError("missing joint name", ln)
        if name in names:
            raise BvhParseError(f"duplicate joint name {name!r}", ln)
        idx = len(names)
        names.append(name)
        parents.append(parent)
        offsets.append([0.0, 0.0, 0.0])
        joint_channels.append([])
        offset_lines.append(ln)
        take("{")
        _, ln = take("OFFSET")
        offset_lines[idx] = ln
        offsets[idx] = [_parse_float(take()[0], ln) * scale for _ in range(3)]
        tok, ln = take()
        if tok == "CHANNELS":
            count_tok, ln = take()
            try:
                count = int(count_tok)
            except ValueError:
                raise BvhParseError(f"bad channel count {count_tok!r}", ln) from None
            if count < 0 or count > 6:
                raise BvhParseError(f"channel count {count} out of range", ln)
            for _ in range(count):
                ch, cln = take()
                if ch not in _CHANNEL_TOKENS:
                    raise BvhParseError(f"unknown channel token {ch!r}", cln)
                kind, which = _CHANNEL_TOKENS[ch]
                if kind == "pos" and not is_root:
                    raise BvhParseError(f"position channel {ch!r} only supported on the root", cln)
                if any(c == (kind, which) for c in joint_channels[idx]):
                    raise BvhParseError(f"duplicate channel {ch!r}", cln)
                joint_channels[idx].append((kind, which))
            tok, ln = take()
        while tok != "}":
            if tok == "JOINT":
                parse_joint(idx, False)
            elif tok == "End":
                take("Site")
                take("{")
                _, oln = take("OFFSET")
                for _ in range(3):
                    _parse_float(take()[0], oln)
                take("}")
            else:
                raise BvhParseError(f"unexpected token {tok!r} in joint {name!r}", ln)
            tok, ln = take()

    take("ROOT")
    parse_joint(-1, True)
    if pos != len(toks):
        tok, ln = toks[pos]
        raise BvhParseError(f"unexpected token {tok!r} after root joint (multiple roots are not supported)", ln)

    # MOTION block
    i = motion_line + 1
    while i < len(lines) and not lines[i].strip():
        i += 1
    m = re.match(r"^\s*Frames:\s*(\S+)\s*$", lines[i]) if i < len(lines) else None
    if m is None:
        raise BvhParseError("expected 'Frames: <count>'", min(i + 1, len(lines)))
    try:
        n_frames = int(m.group(1))
    except ValueError:
        raise BvhParseError(f"bad frame count {m.group(1)!r}", i + 1) from None
    if n_frames < 1:
        raise BvhParseError("frame count must be positive", i + 1)
    i += 1
    m = re.match(r"^\s*Frame\s+Time:\s*(\S+)\s*$", lines[i]) if i < len(lines) else None
    if m is None:
        raise BvhParseError("expected 'Frame Time: <seconds>'", min(i + 1, len(lines)))
    frame_time = _parse_float(m.group(1), i + 1)
    if frame_time <= 0:
        raise BvhParseError("frame time must be positive", i + 1)
    i += 1

    n_channels = sum(len(c) for c in joint_channels)
    rows: list[list[float]] = []
    for lineno in range(i, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) != n_channels:
            raise BvhParseError(f"frame row has {len(parts)} values, expected {n_channels}", lineno + 1)
        if len(rows) >= n_frames:
            raise BvhParseError(f"more frame rows than declared Frames: {n_frames}", lineno + 1)
        rows.append([_parse_float(p, lineno + 1) for p in parts])
    if len(rows) != n_frames:
        raise BvhParseError(f"declared {n_frames} frames but found {len(rows)}", len(lines))

    data = np.array(rows, dtype=float).reshape(n_frames, n_channels)
    n_joints = len(names)
    rotations = np.zeros((n_frames, n_joints, 3))
    root_translation = np.tile(np.array(offsets[0]), (n_frames, 1))
    orders: list[str] = []
    col = 0
    for j, chans in enumerate(joint_channels):
        rot_axes = [w for k, w in chans if k == "rot"]
        order = "".join(rot_axes) + "".join(a for a in _AXES if a not in rot_axes)
        orders.append(order)
        for kind, which in chans:
            if kind == "pos":
                root_translation[:, which] = data[:, col] * scale
            else:
                rotations[:, j, order.index(which)] = data[:, col]
            col += 1

    try:
        skeleton = Skeleton(tuple(names), tuple(parents), np.array(offsets), root_index=0)
    except ValueError as exc:
        bad = next((j for j in range(1, n_joints) if not np.linalg.norm(offsets[j]) > 0), None)
        raise BvhParseError(str(exc), offset_lines[bad] if bad is not None else None) from None
    pose = ChannelPose(1.0 / frame_time, root_translation, rotations, tuple(orders))
    return skeleton, pose


def write_bvh(skeleton: Skeleton, pose: ChannelPose, *, precision: int = 9) -> str:
    """Serialize to BVH. Root carries 6 channels, all other joints 3 rotation channels."""
    out = io.StringIO()
    out.write("HIERARCHY\n")
    children = {j: skeleton.children(j) for j in range(skeleton.n_joints)}
    order_of_emission: list[int] = []

    def fmt(v: float) -> str:
        return f"{v:.{precision}g}"

    def emit(j: int, depth: int) -> None:
        ind = "  " * depth
        kw = "ROOT" if skeleton.parent_index[j] < 0 else "JOINT"
        out.write(f"{ind}{kw} {skeleton.joint_names[j]}\n{ind}{{\n")
        off = skeleton.rest_offset[j]
        out.write(f"{ind}  OFFSET {fmt(off[0])} {fmt(off[1])} {fmt(off[2])}\n")
        rot = " ".join(f"{a}rotation" for a in pose.rotation_orders[j])
        if kw == "ROOT":
            out.write(f"{ind}  CHANNELS 6 Xposition Yposition Zposition {rot}\n")
        else:
            out.write(f"{ind}  CHANNELS 3 {rot}\n")
        order_of_emission.append(j)
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1)
        else:
            out.write(f"{ind}  End Site\n{ind}  {{\n{ind}    OFFSET 0 0 0\n{ind}  }}\n")
        out.write(f"{ind}}}\n")

    emit(skeleton.root_index, 0)
    out.write("MOTION\n")
    out.write(f"Frames: {pose.n_frames}\n")
    out.write(f"Frame Time: {fmt(1.0 / pose.frame_rate)}\n")
    for f in range(pose.n_frames):
        vals = list(pose.root_translation[f])
        for j in order_of_emission:
            vals.extend(pose.rotations[f, j])
        out.write(" ".join(fmt(v) for v in vals) + "\n")
    return out.getvalue()


def reorder_skeleton_pose(skeleton: Skeleton, pose: ChannelPose, names: Sequence[str]) -> tuple[Skeleton, ChannelPose]:
    """Permute joints into ``names`` order (must be a permutation of the skeleton's joints)."""
    perm = [skeleton.index(n) for n in names]
    if sorted(perm) != list(range(skeleton.n_joints)):
        raise ValueError("names must be a permutation of the skeleton joints")
    inv = {old: new for new, old in enumerate(perm)}
    parents = tuple(-1 if skeleton.parent_index[o] < 0 else inv[skeleton.parent_index[o]] for o in perm)
    skel = Skeleton(tuple(names), parents, skeleton.rest_offset[perm], root_index=inv[skeleton.root_index])
    p = ChannelPose(pose.frame_rate, pose.root_translation, pose.rotations[:, perm],
                    tuple(pose.rotation_orders[o] for o in perm))
    return skel, p


# --------------------------------------------------------------------------- CSV

_FRAME_RATE_RE = re.compile(r"^\s*#\s*frame_rate\s*=\s*(\S+)\s*$")


def parse_joint_csv(
    text: str,
    joints: Sequence[str] | None = None,
    *,
    frame_rate: float | None = None,
    activity_label: str | None = None,
    subject_id: str | None = None,
    provenance: Provenance = Provenance.VIRTUAL_TEXT,
) -> MotionSequence:
    """Parse a joint-trajectory CSV with ``<joint>_x,<joint>_y,<joint>_z`` columns.

    ``joints`` fixes the output joint order (e.g. a skeleton's joint names); by default
    joints appear in header order. An explicit ``frame_rate`` overrides the optional
    ``# frame_rate=<Hz>`` comment line.
    """
    lines = text.splitlines()
    idx = 0
    file_rate = None
    if lines and lines[0].lstrip().startswith("#"):
        m = _FRAME_RATE_RE.match(lines[0])
        if m is None:
            raise JointCsvError("malformed metadata line, expected '# frame_rate=<Hz>'", 1)
        file_rate = _parse_float(m.group(1), 1, JointCsvError)
        idx = 1
    rate = frame_rate if frame_rate is not None else file_rate
    if rate is None:
        raise JointCsvError("frame rate not given in file or arguments")
    if not rate > 0:
        raise JointCsvError("frame rate must be positive", 1)
    if idx >= len(lines):
        raise JointCsvError("missing header row", idx + 1)
    reader = csv.reader(lines[idx:])
    header = [h.strip() for h in next(reader)]
    col = {h: i for i, h in enumerate(header)}

    if joints is None:
        joints = []
        for h in header:
            if h.endswith("_x") and h[:-2] not in joints:
                joints.append(h[:-2])
        if not joints:
            raise JointCsvError("header names no '<joint>_x' columns", idx + 1)
    cols = []
    for name in joints:
        for ax in "xyz":
            key = f"{name}_{ax}"
            if key not in col:
                raise JointCsvError(f"missing column {key!r}", idx + 1)
            cols.append(col[key])

    rows = []
    for offset, row in enumerate(reader):
        lineno = idx + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise JointCsvError(f"row has {len(row)} cells, header has {len(header)}", lineno)
        vals = []
        for c in cols:
            cell = row[c].strip()
            if not cell:
                raise JointCsvError(f"missing value in column {header[c]!r}", lineno)
            vals.append(_parse_float(cell, lineno, JointCsvError))
        rows.append(vals)
    if len(rows) < 2:
        raise JointCsvError(f"need at least 2 frames, found {len(rows)}")
    positions = np.array(rows).reshape(len(rows), len(joints), 3)
    return MotionSequence(rate, positions, tuple(joints), activity_label, subject_id, provenance)


def write_joint_csv(motion: MotionSequence) -> str:
    names = motion.joint_names or tuple(f"j{k}" for k in range(motion.n_joints))
    out = io.StringIO()
    out.write(f"# frame_rate={motion.frame_rate!r}\n")
    out.write(",".join(f"{n}_{a}" for n in names for a in "xyz") + "\n")
    for frame in motion.positions:
        out.write(",".join(repr(float(v)) for v in frame.reshape(-1)) + "\n")
    return out.getvalue()


def to_z_up(motion: MotionSequence, up_axis: str = "z", scale: float = 1.0) -> MotionSequence:
    """Re-express positions in a right-handed z-up frame, scaled to metres."""
    p = np.asarray(motion.positions) * scale
    up = up_axis.lower()
    if up == "z":
        q = p
    elif up == "y":
        # (x, y, z)_yup -> (x, -z, y)_zup keeps handedness
        q = np.stack([p[..., 0], -p[..., 2], p[..., 1]], axis=-1)
    elif up == "x":
        q = np.stack([p[..., 1], p[..., 2], p[..., 0]], axis=-1)
    else:
        raise ValueError(f"unknown up axis {up_axis!r}")
    return MotionSequence(motion.frame_rate, q, motion.joint_names, motion.activity_label,
                          motion.subject_id, motion.provenance)
