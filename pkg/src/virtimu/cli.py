"""``virtimu`` command line: config-driven stages with an on-disk cache and a run manifest.

Every stage writes into ``<output_dir>`` and keeps a copy in the cache
(``$VIRTIMU_CACHE_DIR`` or ``<output_dir>/cache``) under a key built from the
hashes of its inputs and parameters. Subcommands run whatever earlier stages
they need; cached stages are restored instead of recomputed.

Output layout::

    traces/<source>/<motion>/                one trace CSV per sensor (plus traces/manifest.json)
    ingested/real/<file>/                    normalized CSV and the adapter that reads it
    datasets/<name>/                         windowed datasets (manifest.json + windows/)
    features/<name>.csv                      ECDF feature tables
    models/                                  forests trained on all real windows, plus index.json
    report/                                  results.csv, per_class.csv, summary.md, report.json
    run_manifest.json                        hashes of every artifact above

Exit status: 0 success, 1 invalid config, 2 a stage failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import yaml

from . import __version__
from ._util import sha256_file, sha256_json
from .augment import augment_dataset
from .classifier import train_forest
from .config import ConfigError, ExperimentConfig, apply_overrides, build_config, read_config, validate_config
from .dataset import Dataset
from .evaluation import EvalReport, emit_report, render_summary_md, run_experiment_matrix
from .features import featurize_dataset, write_feature_csv
from .imu_sim import read_trace_csv, write_trace_csv
from .pipeline import (
    AdapterSpec, Recording, compose_configuration, export_recording, ingest_column_mapped, load_dataset, save_dataset,
)
from .provenance import Provenance
from .workflow import load_motion_file, recordings_to_dataset, synthesize, traces_to_dataset

log = logging.getLogger("virtimu")

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 1, 2
CACHE_ENV = "VIRTIMU_CACHE_DIR"
VIRTUAL_SOURCES = {"virtual_text": Provenance.VIRTUAL_TEXT, "virtual_video": Provenance.VIRTUAL_VIDEO}
TRACE_RATE = 20.0


class StageError(RuntimeError):
    def __init__(self, stage: str, path: str | Path, message: str):
        self.stage, self.path = stage, str(path)
        super().__init__(f"stage {stage!r} failed on {path}: {message}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _tree_hashes(root: Path) -> dict[str, str]:
    """sha256 of every file below ``root``, keyed by POSIX relative path."""
    return {p.relative_to(root).as_posix(): sha256_file(p) for p in sorted(root.rglob("*")) if p.is_file()}


# ------------------------------------------------------------------------- caching


@dataclass
class StageRecord:
    name: str
    key: str
    cached: bool
    inputs: dict[str, str]
    outputs: dict[str, str]
    started: str
    finished: str


@dataclass
class Runner:
    """Runs keyed stages against the cache and records what it did."""

    cfg: ExperimentConfig
    cache_dir: Path
    records: list[StageRecord] = field(default_factory=list)

    @classmethod
    def for_config(cls, cfg: ExperimentConfig) -> "Runner":
        env = os.environ.get(CACHE_ENV)
        return cls(cfg, Path(env) if env else cfg.output_dir / "cache")

    def out(self, *parts: str) -> Path:
        return self.cfg.output_dir.joinpath(*parts)

    def stage(self, name: str, dest: Path, inputs: dict[str, str], params: dict,
              produce: Callable[[Path], None]) -> Path:
        """Fill directory ``dest`` from cache, or by calling ``produce(tmpdir)``.

        The cache key covers the stage name, toolkit version, input hashes and params,
        so an entry is reused only when all of them match.
        """
        started = _now()
        key = sha256_json({"stage": name, "version": __version__, "inputs": inputs, "params": params})
        entry = self.cache_dir / name.split(":")[0] / key
        listing = entry / "entry.json"
        cached = False
        if listing.is_file():
            recorded = json.loads(listing.read_text(encoding="utf-8"))["files"]
            if _tree_hashes(entry / "files") == recorded:
                cached = True
            else:
                log.warning("cache entry %s is corrupt; recomputing", entry)
                shutil.rmtree(entry)
        if not cached:
            entry.parent.mkdir(parents=True, exist_ok=True)
            tmp = Path(tempfile.mkdtemp(prefix=f".{key[:12]}-", dir=entry.parent))
            try:
                (tmp / "files").mkdir()
                produce(tmp / "files")
                files = _tree_hashes(tmp / "files")
                (tmp / "entry.json").write_text(json.dumps({"stage": name, "files": files}, indent=1, sort_keys=True),
                                                encoding="utf-8")
                if entry.exists():
                    shutil.rmtree(entry)
                tmp.rename(entry)
            finally:
                if tmp.exists():
                    shutil.rmtree(tmp)
        if dest.exists():
            shutil.rmtree(dest)
        shutil.copytree(entry / "files", dest)
        rel = dest.relative_to(self.cfg.output_dir).as_posix()
        outputs = {f"{rel}/{f}": digest for f, digest in _tree_hashes(dest).items()}
        self.records.append(StageRecord(name, key, cached, inputs, outputs, started, _now()))
        log.info("%s %s", "restored" if cached else "computed", name)
        return dest

    def manifest(self, started: str) -> dict:
        return {
            "schema": "virtimu.run/1",
            "toolkit_version": __version__,
            "config_hash": self.cfg.config_hash,
            "output_dir": str(self.cfg.output_dir),
            "started": started,
            "finished": _now(),
            "stages": [asdict(r) for r in self.records],
        }


# -------------------------------------------------------------------------- stages


def _motion_params(cfg: ExperimentConfig, source: str) -> dict:
    src = cfg.motions[source]
    return {
        "skeleton": cfg.skeleton,
        "placements": cfg.placements,
        "simulation": asdict(cfg.simulation),
        "up_axis": src.up_axis,
        "scale": src.scale,
        "frame_rate": src.frame_rate,
        "rate": TRACE_RATE,
    }


def synth_motion(runner: Runner, source: str, path: Path) -> Path:
    """One motion file to one trace CSV per placement under traces/<source>/<stem>/."""
    cfg = runner.cfg
    prov = VIRTUAL_SOURCES[source]
    src = cfg.motions[source]
    trace_key = f"{prov.value}/{path.stem}"

    def produce(tmp: Path) -> None:
        try:
            skel, motion = load_motion_file(path, provenance=prov, skeleton=cfg.skeleton, up_axis=src.up_axis,
                                            scale=src.scale, frame_rate=src.frame_rate)
            traces = synthesize(skel, motion, cfg.placements, cfg.simulation, trace_key, TRACE_RATE)
        except (ValueError, KeyError, IndexError, OSError, FloatingPointError) as exc:
            raise StageError("synth", path, str(exc)) from exc
        meta = {"motion": path.name, "label": motion.activity_label, "provenance": prov.value, "traces": {}}
        for tr in traces:
            name = f"{path.stem}__{tr.sensor_name}.csv"
            (tmp / name).write_text(write_trace_csv(tr), encoding="utf-8")
            meta["traces"][tr.sensor_name] = name
        (tmp / "motion.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")

    dest = runner.out("traces", source, path.stem)
    return runner.stage(f"synth:{source}/{path.name}", dest, {path.name: sha256_file(path)},
                        _motion_params(cfg, source), produce)


@dataclass
class SynthOutcome:
    produced: list[Path]
    errors: list[dict]


def run_synth(runner: Runner, sources: Sequence[str] | None = None,
              files: Sequence[Path] | None = None) -> SynthOutcome:
    """Synthesize every motion of the selected sources; failures are collected, not raised."""
    cfg = runner.cfg
    sources = [s for s in (sources or list(VIRTUAL_SOURCES)) if s in cfg.motions]
    jobs = []
    for s in sources:
        for p in files if files is not None else cfg.motion_paths(s):
            jobs.append((s, Path(p)))

    def one(job):
        s, p = job
        try:
            return synth_motion(runner, s, p), None
        except StageError as exc:
            log.error("%s", exc)
            return None, {"source": s, "file": str(p), "error": str(exc)}

    # worker threads append stage records in completion order; restore a fixed order
    first = len(runner.records)
    with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
        results = list(pool.map(one, jobs))
    runner.records[first:] = sorted(runner.records[first:], key=lambda r: r.name)
    produced = [d for d, err in results if d is not None]
    errors = [err for _, err in results if err is not None]
    manifest = {"rate": TRACE_RATE, "motions": [], "errors": errors}
    for d in produced:
        meta = json.loads((d / "motion.json").read_text(encoding="utf-8"))
        meta["directory"] = d.relative_to(runner.out("traces")).as_posix()
        meta["sha256"] = {f: sha256_file(d / f) for f in sorted(meta["traces"].values())}
        manifest["motions"].append(meta)
    runner.out("traces").mkdir(parents=True, exist_ok=True)
    runner.out("traces", "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return SynthOutcome(produced, errors)


def run_ingest(runner: Runner) -> list[Path]:
    """Normalize each real file into ingested/real/<stem>/ (CSV plus the adapter that reads it)."""
    cfg = runner.cfg
    adapter_hash = sha256_file(cfg.real_adapter)
    outs = []
    for path in cfg.real_paths():
        def produce(tmp: Path, path: Path = path) -> None:
            try:
                adapter = AdapterSpec.load(cfg.real_adapter)
                rec = ingest_column_mapped(path.read_text(encoding="utf-8"), adapter, source_id=path.stem)
            except (ValueError, KeyError, OSError) as exc:
                raise StageError("ingest", path, str(exc)) from exc
            if rec.dropped_rows:
                log.warning("%s: dropped %d unreadable rows", path.name, rec.dropped_rows)
            text, spec = export_recording(rec)
            (tmp / f"{path.stem}.csv").write_text(text, encoding="utf-8")
            (tmp / f"{path.stem}.adapter.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False),
                                                          encoding="utf-8")

        outs.append(runner.stage(f"ingest:{path.name}", runner.out("ingested", "real", path.stem),
                                 {path.name: sha256_file(path), "adapter": adapter_hash}, {}, produce))
    if not outs:
        raise StageError("ingest", cfg.real_adapter, "no real files matched")
    return outs


def _load_ingested(d: Path) -> Recording:
    csv_path = next(d.glob("*.csv"))
    adapter = AdapterSpec.load(d / f"{csv_path.stem}.adapter.yaml")
    return ingest_column_mapped(csv_path.read_text(encoding="utf-8"), adapter, source_id=csv_path.stem)


def _dir_inputs(dirs: Sequence[Path], root: Path) -> dict[str, str]:
    out = {}
    for d in dirs:
        for rel, digest in _tree_hashes(d).items():
            out[f"{d.relative_to(root).as_posix()}/{rel}"] = digest
    return out


def run_window(runner: Runner) -> dict[str, Path]:
    """Window the ingested real data and every synthesized virtual source into datasets/<name>/."""
    cfg = runner.cfg
    real_dirs = run_ingest(runner)
    synth = run_synth(runner)
    if synth.errors:
        first = synth.errors[0]
        raise StageError("synth", first["file"], f"{len(synth.errors)} motion file(s) failed; first: {first['error']}")
    root = cfg.output_dir
    spec = cfg.window
    datasets = {}

    def produce_real(tmp: Path) -> None:
        try:
            ds = recordings_to_dataset([_load_ingested(d) for d in real_dirs], spec)
        except ValueError as exc:
            raise StageError("window", runner.out("ingested", "real"), str(exc)) from exc
        save_dataset(replace(ds, meta={"sources": sorted(d.name for d in real_dirs)}), tmp)

    datasets["real"] = runner.stage("window:real", runner.out("datasets", "real"), _dir_inputs(real_dirs, root),
                                    spec.to_dict(), produce_real)

    for source in VIRTUAL_SOURCES:
        dirs = sorted(d for d in synth.produced if d.parent.name == source)
        if source not in cfg.motions or not dirs:
            continue

        def produce_virtual(tmp: Path, dirs: list[Path] = dirs, source: str = source) -> None:
            groups = []
            for d in dirs:
                meta = json.loads((d / "motion.json").read_text(encoding="utf-8"))
                traces = [
                    read_trace_csv((d / meta["traces"][sensor]).read_text(encoding="utf-8"), sample_rate=TRACE_RATE,
                                   joint_index=-1, activity_label=meta["label"], provenance=Provenance(meta["provenance"]),
                                   sensor_name=sensor)
                    for sensor in cfg.placements
                ]
                groups.append((f"{meta['provenance']}/{d.name}", traces))
            ds = traces_to_dataset(groups, spec, list(cfg.placements))
            save_dataset(replace(ds, meta={"sources": [d.name for d in dirs]}), tmp)

        datasets[source] = runner.stage(f"window:{source}", runner.out("datasets", source), _dir_inputs(dirs, root),
                                        spec.to_dict(), produce_virtual)
    return datasets


def _load_all(paths: dict[str, Path]) -> dict[str, Dataset]:
    return {name: load_dataset(p) for name, p in paths.items()}


def run_augment(runner: Runner, datasets: dict[str, Path]) -> Path:
    params = runner.cfg.augment

    def produce(tmp: Path) -> None:
        save_dataset(augment_dataset(load_dataset(datasets["real"]), params), tmp)

    return runner.stage("augment", runner.out("datasets", "real_augmented"),
                        _dir_inputs([datasets["real"]], runner.cfg.output_dir), asdict(params), produce)


def run_featurize(runner: Runner, datasets: dict[str, Path]) -> Path:
    spec = runner.cfg.features

    def produce(tmp: Path) -> None:
        for name, path in sorted(datasets.items()):
            (tmp / f"{name}.csv").write_text(write_feature_csv(featurize_dataset(load_dataset(path), spec)),
                                             encoding="utf-8")

    return runner.stage("featurize", runner.out("features"), _dir_inputs(list(datasets.values()), runner.cfg.output_dir),
                        asdict(spec), produce)


def _eval_params(cfg: ExperimentConfig) -> dict:
    return {
        "configurations": list(cfg.configurations),
        "fractions": list(cfg.fractions),
        "seeds": list(cfg.seeds),
        "fold": asdict(cfg.fold),
        "features": asdict(cfg.features),
        "forest": asdict(cfg.forest),
        "augment": asdict(cfg.augment),
    }


def run_train(runner: Runner, datasets: dict[str, Path], configurations: Sequence[str], seed: int) -> Path:
    """One forest per configuration, trained on every real window (no held-out split)."""
    cfg = runner.cfg
    params = {**_eval_params(cfg), "configurations": list(configurations), "seed": seed}

    def produce(tmp: Path) -> None:
        data = _load_all(datasets)
        index = {}
        for name in configurations:
            train = compose_configuration(data["real"], data.get("virtual_text"), data.get("virtual_video"), name,
                                          replace(cfg.augment, seed=seed))
            feats = featurize_dataset(train, cfg.features)
            model = train_forest(feats.X, feats.labels, replace(cfg.forest, seed=seed), ids=feats.window_ids,
                                 n_jobs=cfg.n_jobs)
            fname = name.replace("+", "_") + ".json"
            model.save(tmp / fname)
            index[name] = {"file": fname, "model_hash": model.model_hash(), "n_train": len(train)}
        (tmp / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True), encoding="utf-8")

    return runner.stage("train", runner.out("models"), _dir_inputs(list(datasets.values()), cfg.output_dir),
                        params, produce)


def run_eval(runner: Runner, datasets: dict[str, Path]) -> Path:
    cfg = runner.cfg

    def produce(tmp: Path) -> None:
        data = _load_all(datasets)
        try:
            report = run_experiment_matrix(
                data["real"], data.get("virtual_text"), data.get("virtual_video"),
                configs=cfg.configurations, fold=cfg.fold, seeds=cfg.seeds, fractions=cfg.fractions,
                feature_spec=cfg.features, forest=cfg.forest, augment=cfg.augment, n_jobs=cfg.n_jobs,
            )
        except ValueError as exc:
            raise StageError("eval", runner.out("datasets"), str(exc)) from exc
        emit_report(report, tmp)
        (tmp / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True), encoding="utf-8")

    inputs = _dir_inputs([datasets[k] for k in sorted(datasets)], cfg.output_dir)
    return runner.stage("eval", runner.out("report"), inputs, _eval_params(cfg), produce)


# ------------------------------------------------------------------------ commands


def _load(args: argparse.Namespace) -> ExperimentConfig:
    return build_config(apply_overrides(read_config(args.config), args.set), Path(args.config).resolve().parent)


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        raw = apply_overrides(read_config(args.config), args.set)
    except (OSError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"<file>: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    errs = validate_config(raw, Path(args.config).resolve().parent)
    for v in errs:
        print(v, file=sys.stderr)
    if not errs:
        print(f"ok: {args.config}")
    return EXIT_INVALID if errs else EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    runner = Runner.for_config(_load(args))
    sources = [args.source] if args.source else None
    files = [Path(f).resolve() for f in args.motions] if args.motions else None
    outcome = run_synth(runner, sources, files)
    n_files = sum(len(json.loads((d / "motion.json").read_text())["traces"]) for d in outcome.produced)
    print(f"{n_files} trace file(s) from {len(outcome.produced)} motion(s); {len(outcome.errors)} failed")
    return EXIT_STAGE if outcome.errors else EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    outs = run_ingest(Runner.for_config(_load(args)))
    print(f"ingested {len(outs)} recording(s)")
    return EXIT_OK


def cmd_window(args: argparse.Namespace) -> int:
    for name, path in run_window(Runner.for_config(_load(args))).items():
        print(f"{name}: {json.loads((path / 'manifest.json').read_text())['count']} windows")
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    runner = Runner.for_config(_load(args))
    path = run_augment(runner, run_window(runner))
    print(f"real_augmented: {json.loads((path / 'manifest.json').read_text())['count']} windows")
    return EXIT_OK


def cmd_featurize(args: argparse.Namespace) -> int:
    runner = Runner.for_config(_load(args))
    datasets = run_window(runner)
    datasets["real_augmented"] = run_augment(runner, datasets)
    path = run_featurize(runner, datasets)
    print(f"feature tables in {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    runner = Runner.for_config(_load(args))
    names = args.configuration or list(runner.cfg.configurations)
    path = run_train(runner, run_window(runner), names, args.seed)
    for name, info in json.loads((path / "index.json").read_text()).items():
        print(f"{name}: {info['file']} {info['model_hash']}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    runner = Runner.for_config(_load(args))
    path = run_eval(runner, run_window(runner))
    sys.stdout.write((path / "summary.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    started = _now()
    runner = Runner.for_config(cfg)
    t0 = time.perf_counter()
    path = run_eval(runner, run_window(runner))
    manifest = runner.manifest(started)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "config.resolved.json").write_text(json.dumps(cfg.raw, indent=1, sort_keys=True),
                                                         encoding="utf-8")
    manifest["config"] = "config.resolved.json"
    (cfg.output_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    log.info("run finished in %.1f s", time.perf_counter() - t0)
    sys.stdout.write((path / "summary.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    src = Path(args.report)
    if src.is_dir():
        src = src / "report.json"
    report = EvalReport.from_dict(json.loads(src.read_text(encoding="utf-8")))
    if args.out:
        emit_report(report, args.out)
    sys.stdout.write(render_summary_md(report))
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    from .demo import write_demo

    root = write_demo(args.directory, seed=args.seed)
    print(f"wrote demo task to {root}; try: virtimu run {root / 'config.yaml'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="virtimu", description="Virtual IMU data for activity recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    with_config = argparse.ArgumentParser(add_help=False)
    with_config.add_argument("config", help="experiment config (YAML or JSON)")
    with_config.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                             help="override a config field, e.g. forest.n_trees=10")

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[with_config], help=help_text)
        p.set_defaults(func=func)
        return p

    add("validate", cmd_validate, "check a config and report every violation")
    p = add("synth", cmd_synth, "simulate IMU traces from motion files")
    p.add_argument("--source", choices=sorted(VIRTUAL_SOURCES), help="restrict to one virtual source")
    p.add_argument("motions", nargs="*", help="explicit motion files (requires --source)")
    add("ingest", cmd_ingest, "read real recordings through their adapter")
    add("window", cmd_window, "segment real and virtual streams into windows")
    add("augment", cmd_augment, "write the 4x augmented real dataset")
    add("featurize", cmd_featurize, "compute ECDF feature tables")
    p = add("train", cmd_train, "train one forest per configuration on all real windows")
    p.add_argument("--configuration", action="append", help="configuration name (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    add("eval", cmd_eval, "cross-validate the configuration x fraction matrix")
    add("run", cmd_run, "full pipeline plus run manifest")

    p = sub.add_parser("report", help="re-render report files from report.json")
    p.add_argument("report", help="report.json or the directory containing it")
    p.add_argument("--out", help="write results.csv, per_class.csv and summary.md here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="write the bundled desk-scale task")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=2025)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command == "synth":
        # motion files may follow --source; argparse leaves those for us to collect
        stray = [a for a in extra if a.startswith("-")]
        if stray:
            parser.error(f"unrecognized arguments: {' '.join(stray)}")
        args.motions = list(args.motions) + extra
    elif extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "synth" and args.motions and not args.source:
        parser.error("explicit motion files need --source")
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
