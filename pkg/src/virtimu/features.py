"""ECDF (inverse empirical CDF) features for windowed sensor data."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, SegmentMatrix


@dataclass(frozen=True)
class EcdfSpec:
    n_components: int = 15
    include_mean: bool = True

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")

    @property
    def per_channel(self) -> int:
        return self.n_components + int(self.include_mean)


def quantile_positions(m: int) -> np.ndarray:
    return (np.arange(1, m + 1) - 0.5) / m


def inverse_ecdf(channel: np.ndarray, m: int) -> np.ndarray:
    """Empirical quantile function at (i - 0.5)/m, interpolating between order statistics."""
    x = np.sort(np.asarray(channel, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("channel must have at least one sample")
    pos = quantile_positions(m) * (x.size - 1)
    return np.interp(pos, np.arange(x.size), x)


def _batch_features(windows: np.ndarray, spec: EcdfSpec) -> np.ndarray:
    """(N, T, C) -> (N, C * per_channel), vectorized equivalent of ecdf_features."""
    n, t, c = windows.shape
    if t == 0:
        raise ValueError("windows must be nonempty")
    srt = np.sort(windows, axis=1)
    pos = quantile_positions(spec.n_components) * (t - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, t - 1)
    frac = pos - lo
    q = srt[:, lo, :] * (1.0 - frac)[None, :, None] + srt[:, hi, :] * frac[None, :, None]
    # np.interp returns the knot value exactly when frac == 0
    exact = frac == 0
    q[:, exact, :] = srt[:, lo[exact], :]
    parts = [q]
    if spec.include_mean:
        parts.append(windows.mean(axis=1, keepdims=True))
    feats = np.concatenate(parts, axis=1)  # (N, per_channel, C)
    return feats.transpose(0, 2, 1).reshape(n, c * spec.per_channel)


def ecdf_features(window: SegmentMatrix | np.ndarray, spec: EcdfSpec = EcdfSpec()) -> np.ndarray:
    """Per channel: ``n_components`` quantiles then (optionally) the mean; channels in layout order."""
    values = window.values if isinstance(window, SegmentMatrix) else np.asarray(window, dtype=float)
    if values.ndim != 2 or values.shape[0] == 0:
        raise ValueError("window must be a nonempty (T, C) matrix")
    return _batch_features(values[None], spec)[0]


@dataclass(frozen=True, eq=False)
class FeatureTable:
    X: np.ndarray  # (N, D)
    labels: np.ndarray
    subject_ids: np.ndarray
    provenance: np.ndarray
    window_ids: np.ndarray
    names: tuple[str, ...]

    def __len__(self) -> int:
        return self.X.shape[0]


def feature_names(n_channels: int, spec: EcdfSpec) -> tuple[str, ...]:
    names = []
    for k in range(n_channels):
        names.extend(f"ch{k}_q{i}" for i in range(1, spec.n_components + 1))
        if spec.include_mean:
            names.append(f"ch{k}_mean")
    return tuple(names)


def featurize_dataset(ds: Dataset, spec: EcdfSpec = EcdfSpec()) -> FeatureTable:
    X = _batch_features(ds.windows, spec) if len(ds) else np.zeros((0, ds.n_channels * spec.per_channel))
    return FeatureTable(X, ds.labels, ds.subject_ids, ds.provenance, ds.window_ids,
                        feature_names(ds.n_channels, spec))


def write_feature_csv(table: FeatureTable) -> str:
    out = io.StringIO()
    out.write(",".join(table.names + ("label", "subject", "provenance")) + "\n")
    for i in range(len(table)):
        cells = [repr(float(v)) for v in table.X[i]]
        cells += [table.labels[i], table.subject_ids[i], table.provenance[i]]
        out.write(",".join(cells) + "\n")
    return out.getvalue()
