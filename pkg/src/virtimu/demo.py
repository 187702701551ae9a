"""Desk-scale synthetic HAR task.

Procedural motions for four activities on the 22-joint body stand in for generated
motion sequences. "Real" recordings are simulated IMU streams from four subjects, each
with a personal movement style, a rotated wrist/ankle mounting, extra sensor noise
and a 50 Hz vendor-style CSV layout. Virtual motions are drawn from the population
style distribution and saved as BVH (text-derived) or y-up joint CSV (video-derived).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ._util import derive_rng
from .imu_sim import SensorConfig, resample_uniform, simulate_imu
from .kinematics import inverse_kinematics
from .motion_io import ChannelPose, MotionSequence, forward_kinematics, write_bvh, write_joint_csv
from .provenance import Provenance
from .skeletons import SMPL22_JOINTS, smpl22

ACTIVITIES = ("walking", "jogging", "squat", "boxing")
PLACEMENTS = {"wrist": "right_wrist", "ankle": "right_ankle"}
J = {name: k for k, name in enumerate(SMPL22_JOINTS)}


@dataclass(frozen=True)
class Style:
    tempo: float  # multiplies the activity's base frequency
    amplitude: float  # multiplies joint excursions
    arm_carry: float  # degrees of constant elbow flexion added
    lean: float  # degrees of forward trunk lean
    scale: float  # body size
    asym: float  # left/right amplitude asymmetry


def draw_style(rng: np.random.Generator, spread: float = 1.0) -> Style:
    return Style(
        tempo=float(np.exp(rng.normal(0.0, 0.12 * spread))),
        amplitude=float(np.exp(rng.normal(0.0, 0.2 * spread))),
        arm_carry=float(rng.normal(15.0, 12.0 * spread)),
        lean=float(rng.normal(5.0, 5.0 * spread)),
        scale=float(np.exp(rng.normal(0.0, 0.06 * spread))),
        asym=float(rng.normal(0.0, 0.1 * spread)),
    )


def _smooth_noise(rng: np.random.Generator, n: int, rate: float, std: float, cutoff: float = 1.0) -> np.ndarray:
    """Low-frequency Gaussian wander (moving average of white noise)."""
    width = max(1, int(rate / cutoff))
    white = rng.normal(0.0, 1.0, n + width)
    kernel = np.ones(width) / math.sqrt(width)
    return np.convolve(white, kernel, mode="valid")[:n] * std


def activity_pose(activity: str, style: Style, duration: float, rate: float, rng: np.random.Generator) -> ChannelPose:
    """Local ZXY Euler angles (degrees) plus root translation for one activity bout."""
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    rot = np.zeros((n, len(SMPL22_JOINTS), 3))  # columns: Z, X, Y angles
    a = style.amplitude
    phase = rng.uniform(0, 2 * math.pi)
    heading = rng.uniform(-180, 180)
    wander = lambda std: _smooth_noise(rng, n, rate, std)  # noqa: E731

    Z, X, Y = 0, 1, 2
    # arms hang from T-pose
    rot[:, J["left_shoulder"], Y] = 75.0
    rot[:, J["right_shoulder"], Y] = -75.0
    rot[:, J["left_elbow"], Z] = style.arm_carry
    rot[:, J["right_elbow"], Z] = -style.arm_carry
    rot[:, J["spine1"], X] = -style.lean
    root = np.zeros((n, 3))
    root[:, 2] = 0.93 * style.scale
    rot[:, J["pelvis"], Z] = heading

    if activity in ("walking", "jogging"):
        jog = activity == "jogging"
        f = (1.3 if jog else 1.0) * style.tempo
        w = 2 * math.pi * f * t + phase
        hip = (38.0 if jog else 24.0) * a
        knee = (75.0 if jog else 45.0) * a
        left_amp, right_amp = 1 + style.asym, 1 - style.asym
        rot[:, J["left_hip"], X] = -hip * left_amp * np.sin(w) + wander(2.0)
        rot[:, J["right_hip"], X] = hip * right_amp * np.sin(w) + wander(2.0)
        rot[:, J["left_knee"], X] = knee * np.clip(np.sin(w + 0.9), 0, None) ** 1.5 + (15 if jog else 3)
        rot[:, J["right_knee"], X] = knee * np.clip(np.sin(w + 0.9 + math.pi), 0, None) ** 1.5 + (15 if jog else 3)
        rot[:, J["left_ankle"], X] = -12 * a * np.sin(w - 0.5)
        rot[:, J["right_ankle"], X] = 12 * a * np.sin(w - 0.5)
        arm = (35.0 if jog else 18.0) * a
        rot[:, J["left_shoulder"], X] = arm * np.sin(w) + wander(3.0)
        rot[:, J["right_shoulder"], X] = -arm * np.sin(w) + wander(3.0)
        if jog:
            rot[:, J["left_elbow"], Z] += 70.0
            rot[:, J["right_elbow"], Z] -= 70.0
        rot[:, J["spine2"], Z] = (8.0 if jog else 5.0) * a * np.sin(w)
        speed = (2.6 if jog else 1.25) * style.tempo * style.scale
        hd = math.radians(heading)
        root[:, 0] = -speed * t * math.sin(-hd)
        root[:, 1] = -speed * t * math.cos(hd)
        root[:, 2] += (0.05 if jog else 0.02) * a * np.cos(2 * w)
    elif activity == "squat":
        f = 0.32 * style.tempo
        w = 2 * math.pi * f * t + phase
        depth = 0.5 * (1 - np.cos(w)) * min(1.3, a)
        rot[:, J["left_hip"], X] = -95.0 * depth
        rot[:, J["right_hip"], X] = -95.0 * depth
        rot[:, J["left_knee"], X] = 120.0 * depth
        rot[:, J["right_knee"], X] = 120.0 * depth
        rot[:, J["left_ankle"], X] = -30.0 * depth
        rot[:, J["right_ankle"], X] = -30.0 * depth
        rot[:, J["spine1"], X] += -25.0 * depth
        rot[:, J["left_shoulder"], X] = -70.0 * depth + wander(3.0)
        rot[:, J["right_shoulder"], X] = -70.0 * depth + wander(3.0)
        root[:, 2] -= 0.42 * style.scale * depth
    elif activity == "boxing":
        f = 0.8 * style.tempo
        w = 2 * math.pi * f * t + phase
        guard = 100.0
        rot[:, J["left_shoulder"], X] = -55.0 + wander(4.0)
        rot[:, J["right_shoulder"], X] = -55.0 + wander(4.0)
        left_punch = np.clip(np.sin(w), 0, None) ** 3 * a
        right_punch = np.clip(np.sin(w + math.pi), 0, None) ** 3 * a
        rot[:, J["left_shoulder"], X] -= 35.0 * left_punch
        rot[:, J["right_shoulder"], X] -= 35.0 * right_punch
        rot[:, J["left_elbow"], Z] = guard * (1 - 0.85 * left_punch)
        rot[:, J["right_elbow"], Z] = -guard * (1 - 0.85 * right_punch)
        rot[:, J["spine2"], Z] = 15.0 * (left_punch - right_punch)
        rot[:, J["left_knee"], X] = 15.0 + 5.0 * np.sin(4 * w)
        rot[:, J["right_knee"], X] = 15.0 + 5.0 * np.sin(4 * w)
        root[:, 2] += 0.015 * np.sin(4 * w) - 0.03
    else:
        raise ValueError(f"unknown activity {activity!r}")
    return ChannelPose(rate, root, rot, ("ZXY",) * len(SMPL22_JOINTS))


def activity_motion(activity, style, duration, rate, rng, provenance, subject=None):
    skel = smpl22(style.scale)
    pose = activity_pose(activity, style, duration, rate, rng)
    motion = forward_kinematics(skel, pose, activity_label=activity, subject_id=subject, provenance=provenance)
    return skel, pose, motion


def _rotate_about_z(v: np.ndarray, deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return v @ r.T


def real_recording_csv(subject: int, rng: np.random.Generator, bout_seconds: float = 30.0,
                       rate: float = 50.0, sim_rate: float = 100.0) -> str:
    """One subject's session: all activities in random order separated by still transients."""
    style = draw_style(rng, 1.6)
    mounting = {p: float(rng.uniform(-30, 30)) for p in PLACEMENTS}
    order = [ACTIVITIES[i] for i in rng.permutation(len(ACTIVITIES))]
    label_ids = {a: i + 1 for i, a in enumerate(ACTIVITIES)}
    blocks = []
    for act in order:
        bout = Style(**{**style.__dict__, "tempo": style.tempo * float(np.exp(rng.normal(0, 0.03)))})
        skel, _, motion = activity_motion(act, bout, bout_seconds, sim_rate, rng, Provenance.REAL)
        rots = inverse_kinematics(skel, motion)
        cols = []
        for name, joint in PLACEMENTS.items():
            cfg = SensorConfig(J[joint], accel_noise_std=0.15, gyro_noise_std=0.03,
                               accel_bias_range=0.2, gyro_bias_range=0.02)
            tr = simulate_imu(motion, rots, cfg, rng)
            cols += [_rotate_about_z(tr.accel, mounting[name]), _rotate_about_z(tr.gyro, mounting[name])]
        sig = resample_uniform(np.concatenate(cols, axis=1), sim_rate, rate)
        still_n = int(3 * rate)
        still = np.tile(sig[:1], (still_n, 1)) + rng.normal(0, 0.05, (still_n, sig.shape[1]))
        blocks.append((0, still))
        blocks.append((label_ids[act], sig))
    lines = ["timestamp_ms,activity_id,subject," + ",".join(
        f"{p}_{kind}_{ax}" for p in PLACEMENTS for kind in ("acc", "gyro") for ax in "xyz")]
    k = 0
    for label, sig in blocks:
        for row in sig:
            lines.append(f"{k * 1000.0 / rate:.1f},{label},S{subject:02d}," + ",".join(f"{v:.6f}" for v in row))
            k += 1
    # a vendor glitch: one unreadable row
    lines.insert(len(lines) // 2, f"{-1.0},1,S{subject:02d}," + ",".join(["nan"] * 12))
    return "\n".join(lines) + "\n"


def real_adapter() -> dict:
    channels = {f"{p}/{kind}": [f"{p}_{kind}_{ax}" for ax in "xyz"] for p in PLACEMENTS for kind in ("acc", "gyro")}
    return {
        "delimiter": ",",
        "timestamp": "timestamp_ms",
        "timestamp_scale": 0.001,
        "sample_rate": 50.0,
        "label": "activity_id",
        "label_map": {str(i + 1): a for i, a in enumerate(ACTIVITIES)},
        "subject": "subject",
        "channels": channels,
        "provenance": "real",
    }


def default_config() -> dict:
    return {
        "output_dir": "out",
        "skeleton": "smpl22",
        "placements": dict(PLACEMENTS),
        "sources": {
            "real": {"adapter": "real/adapter.yaml", "files": ["real/*.csv"]},
            "virtual_text": {"motions": ["motions/text/*.bvh"], "up_axis": "z", "scale": 1.0},
            "virtual_video": {"motions": ["motions/video/*.csv"], "up_axis": "y", "scale": 1.0},
        },
        "simulation": {"accel_noise_std": 0.05, "gyro_noise_std": 0.01, "accel_bias_range": 0.0,
                       "gyro_bias_range": 0.0, "seed": 7},
        "window": {"window_seconds": 2.0, "overlap_seconds": 1.0, "rate": 20.0},
        "augment": {"theta": math.pi / 6, "noise_std": 0.05, "bias_halfwidth": 0.1},
        "features": {"n_components": 15, "include_mean": True},
        "forest": {"n_trees": 40, "max_depth": 20, "min_samples_leaf": 2, "features_per_split": "sqrt"},
        "fold": {"kind": "loso", "k": 5},
        "configurations": ["RealOnly", "Real+IMUGPT", "Real+IMUTube", "Real+IMUGPT+IMUTube", "Real+Augmentation"],
        "fractions": [1.0, 0.1],
        "seeds": [17, 29, 43],
    }


def write_demo(root: str | Path, *, seed: int = 2025, n_subjects: int = 4, n_text: int = 12,
               n_video: int = 8, motion_seconds: float = 8.0) -> Path:
    """Write the bundled task (real CSVs + adapter, BVH and CSV motions, config.yaml)."""
    root = Path(root)
    (root / "real").mkdir(parents=True, exist_ok=True)
    (root / "motions" / "text").mkdir(parents=True, exist_ok=True)
    (root / "motions" / "video").mkdir(parents=True, exist_ok=True)
    for s in range(1, n_subjects + 1):
        text = real_recording_csv(s, derive_rng(seed, "real", s))
        (root / "real" / f"subject_{s:02d}.csv").write_text(text, encoding="utf-8")
    (root / "real" / "adapter.yaml").write_text(yaml.safe_dump(real_adapter(), sort_keys=True), encoding="utf-8")

    for act in ACTIVITIES:
        for i in range(n_text):
            rng = derive_rng(seed, "text", act, i)
            skel, pose, _ = activity_motion(act, draw_style(rng, 1.6), motion_seconds, 30.0, rng, Provenance.VIRTUAL_TEXT)
            (root / "motions" / "text" / f"{act}__{i:03d}.bvh").write_text(write_bvh(skel, pose), encoding="utf-8")
        for i in range(n_video):
            rng = derive_rng(seed, "video", act, i)
            _, _, motion = activity_motion(act, draw_style(rng, 1.6), motion_seconds, 25.0, rng, Provenance.VIRTUAL_VIDEO)
            # pose-tracking wander, then express in a y-up camera-style frame
            p = np.array(motion.positions)
            for jn in range(p.shape[1]):
                for ax in range(3):
                    p[:, jn, ax] += _smooth_noise(rng, p.shape[0], 25.0, 0.004, cutoff=2.0)
            yup = np.stack([p[..., 0], p[..., 2], -p[..., 1]], axis=-1)
            out = MotionSequence(25.0, yup, motion.joint_names)
            (root / "motions" / "video" / f"{act}__{i:03d}.csv").write_text(write_joint_csv(out), encoding="utf-8")

    (root / "config.yaml").write_text(yaml.safe_dump(default_config(), sort_keys=False), encoding="utf-8")
    (root / "README.txt").write_text(
        "Synthetic desk-scale task generated by `virtimu demo`.\n"
        + json.dumps({"activities": ACTIVITIES, "subjects": n_subjects, "seed": seed}) + "\n",
        encoding="utf-8",
    )
    return root


def gaussian_blobs(n_points: int = 200, *, sigma: float = 0.3, separation: float = 4.0,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Two isotropic 2-D Gaussian classes whose centres lie ``separation`` apart.

    Returns (X, labels) with ``n_points`` rows split evenly between classes "a" and "b".
    """
    rng = derive_rng(seed, "blobs")
    half = n_points // 2
    centres = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    X = np.concatenate([rng.normal(centres[0], sigma, (half, 2)), rng.normal(centres[1], sigma, (n_points - half, 2))])
    labels = np.array(["a"] * half + ["b"] * (n_points - half), dtype=object)
    return X, labels
