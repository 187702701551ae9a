"""Dataset assembly: column-mapped ingest, resampling, windowing, training-set composition,
stratified subsampling and on-disk persistence.

Dataset directory layout::

    manifest.json          schema_version, window_spec, channel_layout, seeds, sources,
                           count, and one entry per window (file, id, label, subject,
                           provenance, origin, sha256 of the window file)
    windows/000000.csv     one header row naming the channels, then T rows
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ._util import derive_rng, sha256_bytes
from .augment import AugmentParams, augment_dataset
from .dataset import Dataset, WindowSpec, check_layout, concat_datasets, empty_dataset, layout_for
from .imu_sim import ImuTrace, resample_uniform
from .provenance import Provenance

MANIFEST_SCHEMA_VERSION = 1


class IngestError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Recording:
    sample_rate: float
    channels: np.ndarray  # (N, C)
    channel_layout: tuple[tuple[str, str], ...]
    labels: np.ndarray  # (N,) object array, None = unlabelled sample
    subject_id: str | None = None
    provenance: Provenance = Provenance.REAL
    source_id: str = "rec"
    dropped_rows: int = 0

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim != 2 or ch.shape[1] != len(self.channel_layout):
            raise ValueError("channels must be (samples, len(channel_layout))")
        if not np.all(np.isfinite(ch)):
            raise ValueError("recording values must be finite")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        labels = self.labels
        if labels is None or isinstance(labels, str):
            labels = [labels] * ch.shape[0]
        labels = np.array(list(labels), dtype=object)
        if labels.shape != (ch.shape[0],):
            raise ValueError("label stream length differs from sample count")
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "channel_layout", check_layout(self.channel_layout))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def n_samples(self) -> int:
        return self.channels.shape[0]


# ----------------------------------------------------------------------------- ingest


@dataclass(frozen=True)
class AdapterSpec:
    """How to read one vendor's delimited sensor file.

    Column references are header names when ``has_header`` is true, else 0-based
    integer positions. ``label_map`` (raw value -> class name) doubles as the activity
    filter: samples whose raw label is not mapped become unlabelled.
    """

    channels: Mapping[str, Sequence[str | int]]
    sample_rate: float | None = None
    delimiter: str = ","
    has_header: bool = True
    comment: str = "#"
    timestamp: str | int | None = None
    timestamp_scale: float = 1.0  # multiply raw timestamps by this to get seconds
    label: str | int | None = None
    activity_label: str | None = None
    label_map: Mapping[str, str] | None = None
    subject: str | int | None = None
    subject_id: str | None = None
    provenance: str = "real"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AdapterSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise IngestError(f"unknown adapter keys: {sorted(unknown)}")
        if "channels" not in d or not d["channels"]:
            raise IngestError("adapter spec needs a non-empty 'channels' map")
        for sensor, cols in d["channels"].items():
            if len(cols) != 3:
                raise IngestError(f"sensor {sensor!r} must map exactly 3 columns")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "AdapterSpec":
        import yaml

        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["channels"] = {k: list(v) for k, v in self.channels.items()}
        if self.label_map is not None:
            out["label_map"] = dict(self.label_map)
        return out


def _finite_float(cell: str) -> float | None:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def ingest_column_mapped(text: str, spec: AdapterSpec, *, source_id: str = "rec") -> Recording:
    """Read a delimited file into a Recording; rows with an unreadable selected cell are dropped."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not (spec.comment and ln.lstrip().startswith(spec.comment))]
    reader = csv.reader(lines, delimiter=spec.delimiter)
    rows = list(reader)
    if not rows:
        raise IngestError("file contains no rows")
    if spec.has_header:
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
        position = {h: i for i, h in enumerate(header)}

        def col(ref):
            if ref not in position:
                raise IngestError(f"missing mapped column {ref!r}")
            return position[ref]
    else:
        width = max(len(r) for r in rows)

        def col(ref):
            if not isinstance(ref, int) or not 0 <= ref < width:
                raise IngestError(f"missing mapped column {ref!r}")
            return ref

    sensors = list(spec.channels)
    layout = layout_for(sensors)
    chan_cols = [col(c) for s in sensors for c in spec.channels[s]]
    label_col = col(spec.label) if spec.label is not None else None
    subject_col = col(spec.subject) if spec.subject is not None else None
    time_col = col(spec.timestamp) if spec.timestamp is not None else None

    values, labels, subjects, times = [], [], set(), []
    dropped = 0
    for row in rows:
        try:
            vals = [_finite_float(row[c]) for c in chan_cols]
            t = _finite_float(row[time_col]) if time_col is not None else 0.0
            raw_label = row[label_col].strip() if label_col is not None else None
            subj = row[subject_col].strip() if subject_col is not None else None
        except IndexError:
            dropped += 1
            continue
        if any(v is None for v in vals) or t is None:
            dropped += 1
            continue
        values.append(vals)
        times.append(t * spec.timestamp_scale)
        if label_col is not None:
            if not raw_label:
                labels.append(None)  # an empty cell means "not annotated"
            elif spec.label_map is not None:
                labels.append(spec.label_map.get(raw_label))
            else:
                labels.append(raw_label)
        else:
            labels.append(spec.activity_label)
        if subj is not None:
            subjects.add(subj)
    if not values:
        raise IngestError("no usable rows after dropping unreadable ones")
    if len(subjects) > 1:
        raise IngestError(f"file mixes several subjects {sorted(subjects)}; split it per subject")
    subject_id = subjects.pop() if subjects else spec.subject_id

    rate = spec.sample_rate
    if rate is None:
        if time_col is None or len(times) < 2:
            raise IngestError("adapter gives neither sample_rate nor a usable timestamp column")
        step = float(np.median(np.diff(times)))
        if not step > 0:
            raise IngestError("timestamps are not increasing")
        rate = 1.0 / step
    return Recording(
        sample_rate=float(rate),
        channels=np.array(values, dtype=float),
        channel_layout=layout,
        labels=labels,
        subject_id=subject_id,
        provenance=Provenance(spec.provenance),
        source_id=source_id,
        dropped_rows=dropped,
    )


def export_recording(rec: Recording) -> tuple[str, AdapterSpec]:
    """Write a recording as CSV plus the adapter spec that reads it back."""
    sensors = [rec.channel_layout[k][0] for k in range(0, len(rec.channel_layout), 3)]
    names = {s: [f"{s}_{a}" for a in "xyz"] for s in sensors}
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "label", "subject", *[c for s in sensors for c in names[s]]])
    for k in range(rec.n_samples):
        lab = rec.labels[k]
        w.writerow([repr(k / rec.sample_rate), "" if lab is None else lab, rec.subject_id or "",
                    *[repr(float(v)) for v in rec.channels[k]]])
    spec = AdapterSpec(
        channels=names,
        sample_rate=rec.sample_rate,
        timestamp="t",
        label="label" if any(lab is not None for lab in rec.labels) else None,
        subject="subject" if rec.subject_id else None,
        provenance=rec.provenance.value,
    )
    return out.getvalue(), spec


def resample_recording(rec: Recording, target_rate: float) -> Recording:
    """Linear interpolation of channels; labels take the nearest source sample."""
    if rec.n_samples == 0:
        raise ValueError("cannot resample an empty recording")
    if target_rate == rec.sample_rate:
        return rec
    channels = resample_uniform(rec.channels, rec.sample_rate, target_rate)
    t_out = np.arange(channels.shape[0]) / target_rate
    nearest = np.clip(np.rint(t_out * rec.sample_rate).astype(int), 0, rec.n_samples - 1)
    return replace(rec, sample_rate=float(target_rate), channels=channels, labels=rec.labels[nearest])


def recording_from_traces(traces: Sequence[ImuTrace], *, source_id: str) -> Recording:
    """Stack equally long traces of one motion into a multi-sensor recording.

    Each trace contributes ``<sensor>/acc`` and ``<sensor>/gyro`` triples.
    """
    if not traces:
        raise ValueError("no traces given")
    n = traces[0].n_samples
    rate = traces[0].sample_rate
    for tr in traces:
        if tr.n_samples != n or tr.sample_rate != rate:
            raise ValueError("traces of one motion must share length and rate")
    sensors = []
    cols = []
    for tr in traces:
        name = tr.sensor_name or f"j{tr.joint_index}"
        sensors += [f"{name}/acc", f"{name}/gyro"]
        cols += [tr.accel, tr.gyro]
    first = traces[0]
    return Recording(
        sample_rate=rate,
        channels=np.concatenate(cols, axis=1),
        channel_layout=layout_for(sensors),
        labels=first.activity_label,
        subject_id=first.subject_id,
        provenance=first.provenance,
        source_id=source_id,
    )


# ---------------------------------------------------------------------------- windows


def window_count(n: int, length: int, stride: int) -> int:
    return (n - length) // stride + 1 if n >= length else 0


def _majority(labels: Sequence) -> tuple[Any, int]:
    counts = Counter(labels)
    best = max(counts.values())
    for lab in labels:  # earliest-occurring label wins ties
        if counts[lab] == best:
            return lab, best
    raise AssertionError("unreachable")


def sliding_windows(rec: Recording, spec: WindowSpec = WindowSpec()) -> Dataset:
    """Fixed-length windows at a fixed stride, labelled by majority vote.

    Windows whose majority label covers less than half the samples, or whose majority
    is "unlabelled", are dropped.
    """
    if abs(rec.sample_rate - spec.rate) > 1e-9 * spec.rate:
        raise ValueError(f"recording is at {rec.sample_rate} Hz; resample to {spec.rate} Hz first")
    T, stride = spec.length, spec.stride
    keep_w, keep_l, keep_id = [], [], []
    for k in range(window_count(rec.n_samples, T, stride)):
        start = k * stride
        lab, cnt = _majority(list(rec.labels[start:start + T]))
        if lab is None or 2 * cnt < T:
            continue
        keep_w.append(rec.channels[start:start + T])
        keep_l.append(lab)
        keep_id.append(f"{rec.source_id}@{start:06d}")
    if not keep_w:
        return empty_dataset(rec.channel_layout, spec)
    n = len(keep_w)
    return Dataset(
        windows=np.stack(keep_w),
        labels=keep_l,
        subject_ids=[rec.subject_id] * n,
        provenance=[rec.provenance] * n,
        window_ids=keep_id,
        channel_layout=rec.channel_layout,
        spec=spec,
        meta={"sources": [rec.source_id]},
    )


# ------------------------------------------------------------------ configurations


class Configuration(str, Enum):
    REAL_ONLY = "RealOnly"
    REAL_IMUGPT = "Real+IMUGPT"
    REAL_IMUTUBE = "Real+IMUTube"
    REAL_IMUGPT_IMUTUBE = "Real+IMUGPT+IMUTube"
    REAL_AUGMENTATION = "Real+Augmentation"

    def __str__(self) -> str:
        return self.value


CONFIGURATIONS = tuple(c.value for c in Configuration)


def restrict_to(real: Dataset, virtual: Dataset) -> Dataset:
    """Virtual windows limited to the real dataset's activities and channel layout."""
    try:
        matched = virtual.select_channels(real.channel_layout)
    except ValueError as exc:
        raise ValueError(f"layout mismatch between real and virtual data: {exc}") from None
    keep = np.isin(matched.labels, np.array(real.classes, dtype=object))
    return matched.subset(np.flatnonzero(keep))


def compose_configuration(
    real: Dataset,
    virtual_text: Dataset | None,
    virtual_video: Dataset | None,
    cfg: Configuration | str,
    augment_params: AugmentParams = AugmentParams(),
) -> Dataset:
    cfg = Configuration(cfg)
    if len(real) == 0:
        raise ValueError("real training dataset is empty")
    if cfg is Configuration.REAL_ONLY:
        return real
    if cfg is Configuration.REAL_AUGMENTATION:
        return augment_dataset(real, augment_params)
    parts = [real]
    wanted = {
        Configuration.REAL_IMUGPT: [("virtual_text", virtual_text)],
        Configuration.REAL_IMUTUBE: [("virtual_video", virtual_video)],
        Configuration.REAL_IMUGPT_IMUTUBE: [("virtual_text", virtual_text), ("virtual_video", virtual_video)],
    }[cfg]
    for name, ds in wanted:
        if ds is None:
            raise ValueError(f"configuration {cfg.value} needs a {name} dataset")
        if len(ds):
            parts.append(restrict_to(real, ds))
    return concat_datasets(parts)


def subsample_fraction(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Per-class stratified random subset of round(fraction * n_class) windows (>= 1 per class)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return ds
    chosen = []
    for cls in ds.classes:
        members = np.flatnonzero(ds.labels == cls)
        members = members[np.argsort(ds.window_ids[members].astype(str), kind="stable")]
        k = max(1, int(math.floor(fraction * len(members) + 0.5)))
        rng = derive_rng(seed, "subsample", cls)
        chosen.append(members[rng.choice(len(members), k, replace=False)])
    picked = np.sort(np.concatenate(chosen))
    return ds.subset(picked)


# ------------------------------------------------------------------------ persistence


def _channel_header(layout) -> list[str]:
    return [f"{s}.{a}" for s, a in layout]


def _window_csv(values: np.ndarray, layout) -> bytes:
    out = io.StringIO()
    out.write(",".join(_channel_header(layout)) + "\n")
    for row in values:
        out.write(",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue().encode("utf-8")


def save_dataset(ds: Dataset, directory: str | Path) -> Path:
    directory = Path(directory)
    wdir = directory / "windows"
    wdir.mkdir(parents=True, exist_ok=True)
    for stale in wdir.glob("*.csv"):
        stale.unlink()
    entries = []
    for i in range(len(ds)):
        name = f"windows/{i:06d}.csv"
        payload = _window_csv(ds.windows[i], ds.channel_layout)
        (directory / name).write_bytes(payload)
        entries.append({
            "file": name,
            "id": ds.window_ids[i],
            "label": ds.labels[i],
            "subject": ds.subject_ids[i],
            "provenance": ds.provenance[i],
            "origin": ds.origin_ids[i],
            "sha256": sha256_bytes(payload),
        })
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "window_spec": ds.spec.to_dict() if ds.spec else None,
        "window_length": int(ds.windows.shape[1]),
        "channel_layout": [list(ch) for ch in ds.channel_layout],
        "seeds": ds.meta.get("seeds", {}),
        "sources": ds.meta.get("sources", []),
        "meta": ds.meta,
        "count": len(ds),
        "windows": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return directory


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"cannot read manifest in {directory}: {exc}") from None
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise DatasetFormatError(f"unsupported schema_version {manifest.get('schema_version')!r}")
    try:
        entries = manifest["windows"]
        layout = tuple(tuple(ch) for ch in manifest["channel_layout"])
        count = manifest["count"]
        length = manifest["window_length"]
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"manifest missing field {exc}") from None
    if count != len(entries):
        raise DatasetFormatError(f"manifest count {count} disagrees with {len(entries)} window entries")
    header = ",".join(_channel_header(layout))
    windows = np.zeros((len(entries), length, len(layout)))
    for i, e in enumerate(entries):
        payload = (directory / e["file"]).read_bytes()
        if sha256_bytes(payload) != e["sha256"]:
            raise DatasetFormatError(f"checksum mismatch for {e['file']}")
        lines = payload.decode("utf-8").splitlines()
        if lines[0] != header:
            raise DatasetFormatError(f"{e['file']}: header does not match channel layout")
        arr = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]], dtype=float)
        if arr.shape != (length, len(layout)):
            raise DatasetFormatError(f"{e['file']}: expected {length}x{len(layout)} values, got {arr.shape}")
        windows[i] = arr
    spec = WindowSpec(**manifest["window_spec"]) if manifest.get("window_spec") else None
    return Dataset(
        windows=windows,
        labels=[e["label"] for e in entries],
        subject_ids=[e["subject"] for e in entries],
        provenance=[e["provenance"] for e in entries],
        window_ids=[e["id"] for e in entries],
        origin_ids=[e["origin"] for e in entries],
        channel_layout=layout,
        spec=spec,
        meta=manifest.get("meta", {}),
    )
