"""Declarative experiment configuration: loading, overrides and pre-flight validation.

A config is a YAML (or JSON) mapping. Relative paths are resolved against the
directory that holds the config file. Validation never raises for bad content;
it returns every violation with the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import glob
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from ._util import sha256_json
from .augment import AugmentParams
from .classifier import TrainParams
from .dataset import WindowSpec
from .evaluation import DEFAULT_SEEDS, FoldSpec
from .features import EcdfSpec
from .pipeline import CONFIGURATIONS, AdapterSpec
from .skeletons import BUILTIN_SKELETONS
from .workflow import SimSettings

TOP_LEVEL_KEYS = {
    "output_dir", "skeleton", "placements", "sources", "simulation", "window", "augment",
    "features", "forest", "fold", "configurations", "fractions", "seeds", "n_jobs",
}
SOURCE_KEYS = {
    "real": {"adapter", "files"},
    "virtual_text": {"motions", "up_axis", "scale", "frame_rate"},
    "virtual_video": {"motions", "up_axis", "scale", "frame_rate"},
}
# which virtual sources each configuration needs
NEEDS = {
    "Real+IMUGPT": ("virtual_text",),
    "Real+IMUTube": ("virtual_video",),
    "Real+IMUGPT+IMUTube": ("virtual_text", "virtual_video"),
}


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  {v}" for v in self.violations))


@dataclass(frozen=True)
class MotionSource:
    patterns: tuple[str, ...]
    up_axis: str = "z"
    scale: float = 1.0
    frame_rate: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, typed view of a config mapping."""

    raw: dict
    base_dir: Path
    output_dir: Path
    skeleton: str
    placements: dict[str, str]
    real_adapter: Path
    real_files: tuple[str, ...]
    motions: dict[str, MotionSource]
    simulation: SimSettings
    window: WindowSpec
    augment: AugmentParams
    features: EcdfSpec
    forest: TrainParams
    fold: FoldSpec
    configurations: tuple[str, ...]
    fractions: tuple[float, ...]
    seeds: tuple[int, ...]
    n_jobs: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return sha256_json(self.raw)

    def real_paths(self) -> list[Path]:
        return _expand(self.base_dir, self.real_files)

    def motion_paths(self, source: str) -> list[Path]:
        src = self.motions.get(source)
        return _expand(self.base_dir, src.patterns) if src else []


def _expand(base: Path, patterns: Sequence[str]) -> list[Path]:
    found: set[Path] = set()
    for pat in patterns:
        full = pat if Path(pat).is_absolute() else str(base / pat)
        found.update(Path(p) for p in glob.glob(full))
    return sorted(found)


def read_config(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError([Violation("<root>", "config must be a mapping")])
    return data


def apply_overrides(raw: Mapping[str, Any], overrides: Sequence[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    out = copy.deepcopy(dict(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError([Violation(item, "override must look like key=value")])
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            child = node.get(p)
            if child is None:
                child = node[p] = {}
            if not isinstance(child, dict):
                raise ConfigError([Violation(key, f"{p!r} is not a mapping")])
            node = child
        node[parts[-1]] = yaml.safe_load(value)
    return out


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_config(raw: Mapping[str, Any], base_dir: str | Path) -> list[Violation]:
    """Every problem found in ``raw``; an empty list means the config is usable."""
    base = Path(base_dir)
    errs: list[Violation] = []

    def bad(path: str, msg: str) -> None:
        errs.append(Violation(path, msg))

    for k in sorted(set(raw) - TOP_LEVEL_KEYS):
        bad(k, "unknown key")

    if not isinstance(raw.get("output_dir", "out"), str):
        bad("output_dir", "must be a path string")

    skeleton = raw.get("skeleton", "smpl22")
    if skeleton not in BUILTIN_SKELETONS:
        bad("skeleton", f"unknown skeleton {skeleton!r}; known: {sorted(BUILTIN_SKELETONS)}")

    placements = raw.get("placements")
    if not isinstance(placements, dict) or not placements:
        bad("placements", "must be a nonempty mapping of sensor name to joint")
    else:
        joints = set(BUILTIN_SKELETONS[skeleton]().joint_names) if skeleton in BUILTIN_SKELETONS else set()
        for name, joint in placements.items():
            if not isinstance(name, str) or not name or "/" in name or "." in name:
                bad(f"placements.{name}", "sensor name must be a nonempty string without '/' or '.'")
            if joints and joint not in joints:
                bad(f"placements.{name}", f"unknown joint {joint!r}")

    configurations = raw.get("configurations")
    if not isinstance(configurations, list) or not configurations:
        bad("configurations", "must be a nonempty list")
        configurations = []
    for i, name in enumerate(configurations):
        if name not in CONFIGURATIONS:
            bad(f"configurations[{i}]", f"unknown configuration {name!r}; expected one of {list(CONFIGURATIONS)}")

    sources = raw.get("sources")
    if not isinstance(sources, dict):
        bad("sources", "must be a mapping")
        sources = {}
    for name in sorted(set(sources) - set(SOURCE_KEYS)):
        bad(f"sources.{name}", "unknown source")
    real = sources.get("real")
    if not isinstance(real, dict):
        bad("sources.real", "a real source is required")
    else:
        for k in sorted(set(real) - SOURCE_KEYS["real"]):
            bad(f"sources.real.{k}", "unknown key")
        adapter = real.get("adapter")
        if not isinstance(adapter, str):
            bad("sources.real.adapter", "must be a path to an adapter file")
        elif not (base / adapter).is_file():
            bad("sources.real.adapter", f"file not found: {adapter}")
        else:
            try:
                AdapterSpec.load(base / adapter)
            except (ValueError, KeyError, TypeError, yaml.YAMLError) as exc:
                bad("sources.real.adapter", f"invalid adapter: {exc}")
        files = real.get("files")
        if not isinstance(files, list) or not files:
            bad("sources.real.files", "must be a nonempty list of paths or glob patterns")
        elif not _expand(base, files):
            bad("sources.real.files", f"no files match {files}")
    needed = {s for c in configurations for s in NEEDS.get(c, ())}
    for name in ("virtual_text", "virtual_video"):
        src = sources.get(name)
        if src is None:
            if name in needed:
                bad(f"sources.{name}", "required by the selected configurations")
            continue
        if not isinstance(src, dict):
            bad(f"sources.{name}", "must be a mapping")
            continue
        for k in sorted(set(src) - SOURCE_KEYS[name]):
            bad(f"sources.{name}.{k}", "unknown key")
        motions = src.get("motions")
        if not isinstance(motions, list) or not motions:
            bad(f"sources.{name}.motions", "must be a nonempty list of paths or glob patterns")
        elif name in needed and not _expand(base, motions):
            bad(f"sources.{name}.motions", f"no files match {motions}")
        if src.get("up_axis", "z") not in ("x", "y", "z"):
            bad(f"sources.{name}.up_axis", "must be x, y or z")
        if not _is_number(src.get("scale", 1.0)) or src.get("scale", 1.0) <= 0:
            bad(f"sources.{name}.scale", "must be a positive number")
        fr = src.get("frame_rate")
        if fr is not None and (not _is_number(fr) or fr <= 0):
            bad(f"sources.{name}.frame_rate", "must be a positive number")

    def section(name: str, build) -> None:
        value = raw.get(name, {})
        if not isinstance(value, dict):
            bad(name, "must be a mapping")
            return
        try:
            build(**value)
        except TypeError as exc:
            bad(name, f"bad field: {exc}")
        except ValueError as exc:
            bad(name, str(exc))

    window = raw.get("window", {})
    if isinstance(window, dict):
        w, o = window.get("window_seconds", 2.0), window.get("overlap_seconds", 1.0)
        if _is_number(w) and _is_number(o) and o >= w:
            bad("window.overlap_seconds", f"overlap ({o} s) must be shorter than the window ({w} s)")
        else:
            section("window", WindowSpec)
    else:
        bad("window", "must be a mapping")
    section("simulation", SimSettings)
    section("augment", AugmentParams)
    section("features", EcdfSpec)
    section("forest", TrainParams)
    section("fold", FoldSpec)

    fractions = raw.get("fractions", [1.0])
    if not isinstance(fractions, list) or not fractions:
        bad("fractions", "must be a nonempty list")
    else:
        for i, f in enumerate(fractions):
            if not _is_number(f) or not 0 < f <= 1:
                bad(f"fractions[{i}]", f"must lie in (0, 1], got {f!r}")
    seeds = raw.get("seeds", list(DEFAULT_SEEDS))
    if not isinstance(seeds, list) or not seeds:
        bad("seeds", "must be a nonempty list of integers")
    else:
        for i, s in enumerate(seeds):
            if not isinstance(s, int) or isinstance(s, bool) or s < 0:
                bad(f"seeds[{i}]", f"must be a non-negative integer, got {s!r}")
    n_jobs = raw.get("n_jobs", 1)
    if not isinstance(n_jobs, int) or isinstance(n_jobs, bool) or n_jobs < 1:
        bad("n_jobs", "must be a positive integer")
    return errs


def build_config(raw: Mapping[str, Any], base_dir: str | Path) -> ExperimentConfig:
    """Validate and convert; raises :class:`ConfigError` listing every violation."""
    errs = validate_config(raw, base_dir)
    if errs:
        raise ConfigError(errs)
    base = Path(base_dir).resolve()
    sources = raw["sources"]
    motions = {
        name: MotionSource(tuple(src["motions"]), src.get("up_axis", "z"), float(src.get("scale", 1.0)),
                           src.get("frame_rate"))
        for name, src in sources.items()
        if name != "real"
    }
    out = Path(raw.get("output_dir", "out"))
    return ExperimentConfig(
        raw=copy.deepcopy(dict(raw)),
        base_dir=base,
        output_dir=out if out.is_absolute() else base / out,
        skeleton=raw.get("skeleton", "smpl22"),
        placements=dict(raw["placements"]),
        real_adapter=base / sources["real"]["adapter"],
        real_files=tuple(sources["real"]["files"]),
        motions=motions,
        simulation=SimSettings(**raw.get("simulation", {})),
        window=WindowSpec(**raw.get("window", {})),
        augment=AugmentParams(**raw.get("augment", {})),
        features=EcdfSpec(**raw.get("features", {})),
        forest=TrainParams(**raw.get("forest", {})),
        fold=FoldSpec(**raw.get("fold", {})),
        configurations=tuple(raw["configurations"]),
        fractions=tuple(float(f) for f in raw.get("fractions", [1.0])),
        seeds=tuple(int(s) for s in raw.get("seeds", list(DEFAULT_SEEDS))),
        n_jobs=int(raw.get("n_jobs", 1)),
    )


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    raw = apply_overrides(read_config(path), overrides)
    return build_config(raw, path.resolve().parent)
