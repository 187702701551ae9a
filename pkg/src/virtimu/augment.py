"""Sensor-level augmentation: fixed z-rotation, Gaussian jitter, constant channel bias."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._util import derive_rng
from .dataset import Dataset, SegmentMatrix, check_layout, concat_datasets
from .provenance import Provenance


@dataclass(frozen=True)
class AugmentParams:
    theta: float = math.pi / 6
    noise_std: float = 0.05
    bias_halfwidth: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.bias_halfwidth < 0:
            raise ValueError("bias_halfwidth must be >= 0")


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotate_values(values: np.ndarray, theta: float) -> np.ndarray:
    """Rotate every (x, y, z) triple along the last axis: X_s @ R_z^T per sensor."""
    shape = values.shape
    triples = values.reshape(shape[:-1] + (shape[-1] // 3, 3))
    return (triples @ rotation_z(theta).T).reshape(shape)


def rotate_z(segment: SegmentMatrix, theta: float) -> SegmentMatrix:
    check_layout(segment.channel_layout)
    return SegmentMatrix(_rotate_values(segment.values, theta), segment.channel_layout)


def add_gaussian_noise(segment: SegmentMatrix, sigma: float, rng: np.random.Generator) -> SegmentMatrix:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return SegmentMatrix(segment.values.copy(), segment.channel_layout)
    eps = rng.normal(0.0, sigma, segment.values.shape)
    return SegmentMatrix(segment.values + eps, segment.channel_layout)


def add_bias(segment: SegmentMatrix, halfwidth: float, rng: np.random.Generator) -> SegmentMatrix:
    if halfwidth < 0:
        raise ValueError("halfwidth must be >= 0")
    if halfwidth == 0:
        return SegmentMatrix(segment.values.copy(), segment.channel_layout)
    b = rng.uniform(-halfwidth, halfwidth, (1, segment.values.shape[1]))
    return SegmentMatrix(segment.values + np.ones((segment.n_samples, 1)) @ b, segment.channel_layout)


def _tagged(ds: Dataset, windows: np.ndarray, tag: str) -> Dataset:
    return Dataset(
        windows=windows,
        labels=ds.labels,
        subject_ids=ds.subject_ids,
        provenance=[Provenance.AUGMENTED] * len(ds),
        window_ids=[f"{wid}~{tag}" for wid in ds.window_ids],
        origin_ids=ds.window_ids,
        channel_layout=ds.channel_layout,
        spec=ds.spec,
        meta=dict(ds.meta),
    )


def augment_dataset(windows: Dataset, params: AugmentParams = AugmentParams()) -> Dataset:
    """Original windows followed by their rotated, jittered and biased copies.

    Each window draws noise and bias from its own generator keyed on (seed, window id,
    transform), so results do not depend on dataset order or batching.
    """
    if len(windows) == 0:
        raise ValueError("cannot augment an empty dataset")
    check_layout(windows.channel_layout)
    rot = _rotate_values(windows.windows, params.theta)
    noisy = np.empty_like(windows.windows)
    biased = np.empty_like(windows.windows)
    for i, wid in enumerate(windows.window_ids):
        seg = windows.segment(i)
        noisy[i] = add_gaussian_noise(seg, params.noise_std, derive_rng(params.seed, wid, "noise")).values
        biased[i] = add_bias(seg, params.bias_halfwidth, derive_rng(params.seed, wid, "bias")).values
    return concat_datasets([
        windows,
        _tagged(windows, rot, "rot"),
        _tagged(windows, noisy, "noise"),
        _tagged(windows, biased, "bias"),
    ])
