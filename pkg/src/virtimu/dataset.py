"""Windowed sensor data containers shared by augmentation, features and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .provenance import Provenance

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class WindowSpec:
    window_seconds: float = 2.0
    overlap_seconds: float = 1.0
    rate: float = 20.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if not 0 <= self.overlap_seconds < self.window_seconds:
            raise ValueError("overlap must satisfy 0 <= overlap < window")
        for name, secs in (("window", self.window_seconds), ("stride", self.window_seconds - self.overlap_seconds)):
            n = secs * self.rate
            if abs(n - round(n)) > 1e-9 or round(n) < 1:
                raise ValueError(f"{name} length {secs} s at {self.rate} Hz is not a positive whole number of samples")

    @property
    def length(self) -> int:
        return int(round(self.window_seconds * self.rate))

    @property
    def stride(self) -> int:
        return int(round((self.window_seconds - self.overlap_seconds) * self.rate))

    def to_dict(self) -> dict:
        return {"window_seconds": self.window_seconds, "overlap_seconds": self.overlap_seconds, "rate": self.rate}


def check_layout(layout: Sequence[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
    """Validate that channels come in contiguous (x, y, z) triples per sensor."""
    layout = tuple((str(s), str(a)) for s, a in layout)
    if len(layout) % 3:
        raise ValueError("channel count is not a multiple of 3")
    for k in range(0, len(layout), 3):
        triple = layout[k:k + 3]
        if tuple(a for _, a in triple) != AXES or len({s for s, _ in triple}) != 1:
            raise ValueError(f"channels {k}..{k + 2} are not an (x, y, z) triple of one sensor: {triple}")
    sensors = [layout[k][0] for k in range(0, len(layout), 3)]
    if len(set(sensors)) != len(sensors):
        raise ValueError("sensor names repeat in the channel layout")
    return layout


def layout_for(sensors: Iterable[str]) -> tuple[tuple[str, str], ...]:
    return tuple((s, a) for s in sensors for a in AXES)


def layout_sensors(layout: Sequence[tuple[str, str]]) -> list[str]:
    return [layout[k][0] for k in range(0, len(layout), 3)]


@dataclass(frozen=True)
class SegmentMatrix:
    values: np.ndarray  # (T, C)
    channel_layout: tuple[tuple[str, str], ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("segment values must be (T, C)")
        layout = tuple((str(s), str(a)) for s, a in self.channel_layout)
        if v.shape[1] != len(layout):
            raise ValueError("channel count differs from layout length")
        if len(layout) % 3:
            raise ValueError("channel count must be 3 per sensor")
        if not np.all(np.isfinite(v)):
            raise ValueError("segment values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_layout", layout)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1] // 3


def _str_array(values: Iterable[Any], n: int, name: str) -> np.ndarray:
    arr = np.array(["" if v is None else str(v) for v in values], dtype=object)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have one entry per window")
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled windows with subjects, provenance and stable ids.

    Windows live in one (N, T, C) array; an empty string in ``subject_ids`` or
    ``origin_ids`` means "none".
    """

    windows: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    provenance: np.ndarray
    window_ids: np.ndarray
    channel_layout: tuple[tuple[str, str], ...]
    origin_ids: np.ndarray | None = None
    spec: WindowSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=float)
        if w.ndim != 3:
            if w.size == 0:
                w = w.reshape(0, self.spec.length if self.spec else 0, len(self.channel_layout))
            else:
                raise ValueError("windows must be (N, T, C)")
        n = w.shape[0]
        layout = tuple((str(s), str(a)) for s, a in self.channel_layout)
        if w.shape[2] != len(layout):
            raise ValueError("window channel count differs from layout")
        if self.spec is not None and n and w.shape[1] != self.spec.length:
            raise ValueError(f"windows have {w.shape[1]} rows, spec requires {self.spec.length}")
        if not np.all(np.isfinite(w)):
            raise ValueError("window values must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "windows", w)
        object.__setattr__(self, "channel_layout", layout)
        object.__setattr__(self, "labels", _str_array(self.labels, n, "labels"))
        object.__setattr__(self, "subject_ids", _str_array(self.subject_ids, n, "subject_ids"))
        prov = [Provenance(p).value for p in self.provenance]
        object.__setattr__(self, "provenance", _str_array(prov, n, "provenance"))
        ids = _str_array(self.window_ids, n, "window_ids")
        if len(set(ids)) != n:
            raise ValueError("window ids must be unique")
        object.__setattr__(self, "window_ids", ids)
        origin = self.origin_ids if self.origin_ids is not None else [""] * n
        object.__setattr__(self, "origin_ids", _str_array(origin, n, "origin_ids"))

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channel_layout)

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.labels.tolist()))

    def segment(self, i: int) -> SegmentMatrix:
        return SegmentMatrix(self.windows[i], self.channel_layout)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        idx = idx.astype(int)
        return replace(
            self,
            windows=self.windows[idx],
            labels=self.labels[idx],
            subject_ids=self.subject_ids[idx],
            provenance=self.provenance[idx],
            window_ids=self.window_ids[idx],
            origin_ids=self.origin_ids[idx],
            meta=dict(self.meta),
        )

    def select_channels(self, layout: Sequence[tuple[str, str]]) -> "Dataset":
        """Restrict/reorder channels to ``layout``; every requested channel must exist."""
        pos = {ch: k for k, ch in enumerate(self.channel_layout)}
        missing = [ch for ch in layout if tuple(ch) not in pos]
        if missing:
            raise ValueError(f"channels missing from dataset: {missing}")
        cols = [pos[tuple(ch)] for ch in layout]
        return replace(self, windows=self.windows[:, :, cols], channel_layout=tuple(map(tuple, layout)),
                       meta=dict(self.meta))

    def equals(self, other: "Dataset") -> bool:
        return (
            self.channel_layout == other.channel_layout
            and self.windows.shape == other.windows.shape
            and np.array_equal(self.windows, other.windows)
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("labels", "subject_ids", "provenance", "window_ids", "origin_ids")
            )
            and self.spec == other.spec
        )


def concat_datasets(parts: Sequence[Dataset]) -> Dataset:
    parts = [p for p in parts if p is not None]
    if not parts:
        raise ValueError("nothing to concatenate")
    layout = parts[0].channel_layout
    for p in parts[1:]:
        if p.channel_layout != layout:
            raise ValueError("channel layouts differ between datasets")
    nonempty = [p for p in parts if len(p)]
    if not nonempty:
        return parts[0]
    lengths = {p.windows.shape[1] for p in nonempty}
    if len(lengths) != 1:
        raise ValueError("window lengths differ between datasets")
    return Dataset(
        windows=np.concatenate([p.windows for p in nonempty]),
        labels=np.concatenate([p.labels for p in nonempty]),
        subject_ids=np.concatenate([p.subject_ids for p in nonempty]),
        provenance=np.concatenate([p.provenance for p in nonempty]),
        window_ids=np.concatenate([p.window_ids for p in nonempty]),
        origin_ids=np.concatenate([p.origin_ids for p in nonempty]),
        channel_layout=layout,
        spec=parts[0].spec,
        meta=dict(parts[0].meta),
    )


def empty_dataset(layout: Sequence[tuple[str, str]], spec: WindowSpec | None = None) -> Dataset:
    t = spec.length if spec else 0
    return Dataset(np.zeros((0, t, len(layout))), [], [], [], [], tuple(layout), spec=spec)
