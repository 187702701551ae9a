"""Cross-validation protocols, macro F1, the configuration x fraction experiment matrix,
and report files.

Report files (UTF-8, comma separated, '.' decimal point):

``results.csv``
    config, fraction, repeat, seed, fold, n_train, n_test, macro_f1. One row per fold,
    then one row with fold ``all`` per repeat: macro F1 of the confusion matrix
    accumulated over that repeat's folds (the headline number).
``per_class.csv``
    config, fraction, class, f1_mean, f1_std, n_repeats; per-class F1 from the
    accumulated confusion, summarized over repeats. Empty cells mark classes with no
    true and no predicted windows.
``summary.md``
    Markdown table, one row per (config, fraction): mean and standard deviation
    (population, over repeats) of the headline macro F1, in percent.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import derive_rng, derive_seed
from .augment import AugmentParams
from .classifier import TrainParams, predict, train_forest
from .dataset import Dataset
from .features import EcdfSpec, featurize_dataset
from .pipeline import Configuration, compose_configuration, subsample_fraction
from .provenance import Provenance

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (17, 29, 43)

Fold = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class FoldSpec:
    kind: str = "loso"  # "loso" or "stratified"
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("loso", "stratified"):
            raise ValueError(f"unknown fold kind {self.kind!r}")
        if self.kind == "stratified" and self.k < 2:
            raise ValueError("stratified k-fold needs k >= 2")

    @property
    def label(self) -> str:
        return "LOSO" if self.kind == "loso" else f"StratifiedKFold({self.k})"


def _real_mask(ds: Dataset) -> np.ndarray:
    return ds.provenance == Provenance.REAL.value


def loso_folds(ds: Dataset) -> list[Fold]:
    """One fold per real subject; non-real windows always stay in training."""
    real = _real_mask(ds)
    subjects = sorted({s for s in ds.subject_ids[real] if s})
    if len(subjects) < 2:
        raise ValueError(f"leave-one-subject-out needs >= 2 subjects, found {len(subjects)}")
    folds = []
    for s in subjects:
        test = real & (ds.subject_ids == s)
        folds.append((np.flatnonzero(~test), np.flatnonzero(test)))
    return folds


def stratified_kfold(ds: Dataset, k: int, seed: int) -> list[Fold]:
    """Seeded per-class shuffle, then round-robin fold assignment of real windows."""
    if k < 2:
        raise ValueError("k must be >= 2")
    real = np.flatnonzero(_real_mask(ds))
    assign = np.full(len(ds), -1)
    offset = 0
    for cls in sorted(set(ds.labels[real].tolist())):
        members = real[ds.labels[real] == cls]
        if len(members) < k:
            raise ValueError(f"class {cls!r} has {len(members)} windows, fewer than k={k}")
        members = members[np.argsort(ds.window_ids[members].astype(str), kind="stable")]
        members = members[derive_rng(seed, "kfold", cls).permutation(len(members))]
        assign[members] = (offset + np.arange(len(members))) % k
        offset += len(members)
    return [(np.flatnonzero(assign != f), np.flatnonzero(assign == f)) for f in range(k)]


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # (K, K), rows = truth, columns = prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise ValueError("class dictionaries differ")
        return ConfusionMatrix(self.classes, self.counts + other.counts)


def confusion_matrix(y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]) -> ConfusionMatrix:
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def macro_f1(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Macro F1 and the per-class F1 vector.

    Classes that are neither present nor predicted get NaN and are left out of the
    average; classes that are present but never predicted score 0.
    """
    c = np.asarray(cm.counts, dtype=float)
    if c.sum() <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.full(len(tp), np.nan)
    used = denom > 0
    per_class[used] = 2 * tp[used] / denom[used]
    return float(np.mean(per_class[used])), per_class


@dataclass(frozen=True)
class FoldResult:
    config: str
    fraction: float
    repeat: int
    seed: int
    fold: int
    n_train: int
    n_test: int
    macro_f1: float


@dataclass(frozen=True, eq=False)
class RepeatResult:
    config: str
    fraction: float
    repeat: int
    seed: int
    confusion: ConfusionMatrix
    macro_f1: float
    per_class_f1: np.ndarray


@dataclass(eq=False)
class EvalReport:
    fold_kind: str
    classes: tuple[str, ...]
    configs: tuple[str, ...]
    fractions: tuple[float, ...]
    folds: list[FoldResult] = field(default_factory=list)
    repeats: list[RepeatResult] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def scores(self, config: str, fraction: float) -> np.ndarray:
        return np.array([r.macro_f1 for r in self.repeats if r.config == config and r.fraction == fraction])

    def summary(self) -> list[tuple[str, float, float, float]]:
        """(config, fraction, mean, std) for every cell of the matrix."""
        rows = []
        for cfg in self.configs:
            for frac in self.fractions:
                s = self.scores(cfg, frac)
                rows.append((cfg, frac, float(np.mean(s)), float(np.std(s))))
        return rows

    def to_dict(self) -> dict:
        """JSON-safe form; undefined per-class F1 values become ``None``."""
        return {
            "fold_kind": self.fold_kind,
            "classes": list(self.classes),
            "configs": list(self.configs),
            "fractions": list(self.fractions),
            "folds": [f.__dict__.copy() for f in self.folds],
            "repeats": [
                {
                    "config": r.config, "fraction": r.fraction, "repeat": r.repeat, "seed": r.seed,
                    "confusion": r.confusion.counts.tolist(), "macro_f1": r.macro_f1,
                    "per_class_f1": [None if np.isnan(v) else float(v) for v in r.per_class_f1],
                }
                for r in self.repeats
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        classes = tuple(d["classes"])
        repeats = [
            RepeatResult(
                r["config"], float(r["fraction"]), int(r["repeat"]), int(r["seed"]),
                ConfusionMatrix(classes, np.asarray(r["confusion"], dtype=np.int64)), float(r["macro_f1"]),
                np.array([np.nan if v is None else v for v in r["per_class_f1"]], dtype=float),
            )
            for r in d["repeats"]
        ]
        return cls(
            fold_kind=d["fold_kind"], classes=classes, configs=tuple(d["configs"]),
            fractions=tuple(float(f) for f in d["fractions"]),
            folds=[FoldResult(**f) for f in d["folds"]], repeats=repeats, metadata=dict(d.get("metadata", {})),
        )


def _provenance_check(test: Dataset) -> None:
    if not np.all(test.provenance == Provenance.REAL.value):
        raise AssertionError("test split contains non-real windows")


def run_experiment_matrix(
    real: Dataset,
    virtual_text: Dataset | None,
    virtual_video: Dataset | None,
    configs: Sequence[str] = tuple(c.value for c in Configuration),
    fold: FoldSpec = FoldSpec(),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    fractions: Sequence[float] = (1.0, 0.1),
    feature_spec: EcdfSpec = EcdfSpec(),
    forest: TrainParams = TrainParams(),
    augment: AugmentParams = AugmentParams(),
    n_jobs: int = 1,
) -> EvalReport:
    """Cross-validate every (configuration, real fraction) cell ``len(seeds)`` times.

    Only the real training split is subsampled or augmented and virtual data only
    ever joins training; test splits are untouched real windows.
    """
    configs = tuple(Configuration(c).value for c in configs)
    if not np.all(real.provenance == Provenance.REAL.value):
        raise ValueError("the real dataset contains non-real windows")
    classes = tuple(real.classes)
    report = EvalReport(
        fold_kind=fold.label,
        classes=classes,
        configs=configs,
        fractions=tuple(float(f) for f in fractions),
        metadata={
            "seeds": list(seeds),
            "feature_spec": {"n_components": feature_spec.n_components, "include_mean": feature_spec.include_mean},
            "forest": {k: getattr(forest, k) for k in forest.__dataclass_fields__ if k != "seed"},
            "augment": {k: getattr(augment, k) for k in ("theta", "noise_std", "bias_halfwidth")},
        },
    )
    started = time.perf_counter()
    for r, seed in enumerate(seeds):
        splits = loso_folds(real) if fold.kind == "loso" else stratified_kfold(real, fold.k, seed)
        tests = []
        for tr, te in splits:
            test = real.subset(te)
            _provenance_check(test)
            tests.append((tr, test, featurize_dataset(test, feature_spec)))
        for cfg in configs:
            for frac in report.fractions:
                total = ConfusionMatrix(classes, np.zeros((len(classes),) * 2, dtype=np.int64))
                for i, (tr, test, test_feats) in enumerate(tests):
                    train_real = real.subset(tr)
                    if frac < 1:
                        train_real = subsample_fraction(train_real, frac, derive_seed(seed, "subsample", i))
                    train = compose_configuration(
                        train_real, virtual_text, virtual_video, cfg,
                        replace(augment, seed=derive_seed(seed, "augment", i)),
                    )
                    feats = featurize_dataset(train, feature_spec)
                    model = train_forest(
                        feats.X, feats.labels, replace(forest, seed=derive_seed(seed, "forest", i)),
                        ids=feats.window_ids, n_jobs=n_jobs,
                    )
                    pred, _ = predict(model, test_feats.X)
                    cm = confusion_matrix(test.labels, pred, classes)
                    total = total + cm
                    report.folds.append(FoldResult(cfg, frac, r, seed, i, len(train), len(test), macro_f1(cm)[0]))
                score, per_class = macro_f1(total)
                report.repeats.append(RepeatResult(cfg, frac, r, seed, total, score, per_class))
                log.info("repeat %d seed %d %s fraction %g: macro F1 %.4f", r, seed, cfg, frac, score)
    log.info("experiment matrix finished in %.1f s", time.perf_counter() - started)
    return report


def _fmt(x: float) -> str:
    return repr(float(x))


def render_results_csv(report: EvalReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["config", "fraction", "repeat", "seed", "fold", "n_train", "n_test", "macro_f1"])
    for rep in report.repeats:
        rows = [f for f in report.folds if (f.config, f.fraction, f.repeat) == (rep.config, rep.fraction, rep.repeat)]
        for f in sorted(rows, key=lambda f: f.fold):
            w.writerow([f.config, _fmt(f.fraction), f.repeat, f.seed, f.fold, f.n_train, f.n_test, _fmt(f.macro_f1)])
        w.writerow([rep.config, _fmt(rep.fraction), rep.repeat, rep.seed, "all",
                    sum(f.n_train for f in rows), rep.confusion.total, _fmt(rep.macro_f1)])
    return out.getvalue()


def render_per_class_csv(report: EvalReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["config", "fraction", "class", "f1_mean", "f1_std", "n_repeats"])
    for cfg in report.configs:
        for frac in report.fractions:
            reps = [r for r in report.repeats if r.config == cfg and r.fraction == frac]
            table = np.array([r.per_class_f1 for r in reps])
            for k, cls in enumerate(report.classes):
                col = table[:, k]
                col = col[~np.isnan(col)]
                if col.size:
                    w.writerow([cfg, _fmt(frac), cls, _fmt(col.mean()), _fmt(col.std()), col.size])
                else:
                    w.writerow([cfg, _fmt(frac), cls, "", "", 0])
    return out.getvalue()


def render_summary_md(report: EvalReport) -> str:
    lines = [
        f"# Macro F1 ({report.fold_kind}, {len(report.metadata.get('seeds', []))} repeats)",
        "",
        "| Configuration | Real data | Macro F1 (%) |",
        "|---|---|---|",
    ]
    for cfg, frac, mean, std in report.summary():
        lines.append(f"| {cfg} | {frac * 100:g}% | {mean * 100:.2f} ± {std * 100:.2f} |")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, directory: str | Path) -> dict[str, Path]:
    if not report.repeats:
        raise ValueError("refusing to write an empty report")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {
        "results.csv": render_results_csv(report),
        "per_class.csv": render_per_class_csv(report),
        "summary.md": render_summary_md(report),
    }
    written = {}
    for name, text in files.items():
        path = directory / name
        path.write_text(text, encoding="utf-8", newline="")
        written[name] = path
    return written
