from __future__ import annotations

import json
import shutil

import pytest
import yaml

from virtimu.cli import EXIT_INVALID, EXIT_OK, EXIT_STAGE, main
from virtimu.config import ConfigError, apply_overrides, load_config, validate_config
from virtimu.demo import write_demo

FAST = ["--set", "seeds=[17]", "--set", "fractions=[1.0]", "--set", "forest.n_trees=5",
        "--set", "configurations=[RealOnly, Real+IMUGPT+IMUTube]"]


@pytest.fixture(scope="module")
def small_task(tmp_path_factory):
    root = write_demo(tmp_path_factory.mktemp("task"), n_subjects=3, n_text=2, n_video=2, motion_seconds=4.0)
    return root


def fresh_copy(src, dst):
    shutil.copytree(src, dst, ignore=shutil.ignore_patterns("out"))
    return dst / "config.yaml"


def test_validate_ok(small_task, capsys):
    assert main(["validate", str(small_task / "config.yaml")]) == EXIT_OK
    assert capsys.readouterr().out.startswith("ok:")


def test_validate_lists_every_violation(small_task, capsys):
    code = main(["validate", str(small_task / "config.yaml"), "--set", "configurations=[RealOnly, Real+GAN]",
                 "--set", "window.overlap_seconds=2.0", "--set", "bogus=1"])
    assert code == EXIT_INVALID
    err = capsys.readouterr().err
    assert "configurations[1]: unknown configuration 'Real+GAN'" in err
    assert "window.overlap_seconds" in err
    assert "bogus" in err


def test_overrides_parse_yaml_values():
    raw = apply_overrides({"forest": {"n_trees": 40}}, ["forest.n_trees=7", "seeds=[1, 2]", "fold.kind=stratified"])
    assert raw == {"forest": {"n_trees": 7}, "seeds": [1, 2], "fold": {"kind": "stratified"}}


def test_missing_files_are_violations(small_task, tmp_path):
    raw = yaml.safe_load((small_task / "config.yaml").read_text())
    raw["sources"]["real"]["files"] = ["nowhere/*.csv"]
    errs = validate_config(raw, small_task)
    assert any("nowhere" in str(v) for v in errs)
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")


def test_run_command_with_invalid_config_exits_one(small_task):
    assert main(["run", str(small_task / "config.yaml"), "--set", "fractions=[1.5]"]) == EXIT_INVALID


def test_synth_writes_one_trace_per_placement(small_task, tmp_path, capsys):
    cfg = fresh_copy(small_task, tmp_path / "t")
    motions = sorted((tmp_path / "t" / "motions" / "text").glob("*.bvh"))[:2]
    three = "placements={wrist: right_wrist, ankle: right_ankle, hip: pelvis}"
    code = main(["synth", str(cfg), "--set", three, "--source", "virtual_text", *map(str, motions)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("6 trace file(s) from 2 motion(s)")
    traces = sorted((tmp_path / "t" / "out" / "traces" / "virtual_text").rglob("*.csv"))
    assert len(traces) == 6


def test_corrupt_motion_is_reported_and_batch_continues(small_task, tmp_path, capsys):
    cfg = fresh_copy(small_task, tmp_path / "t")
    bad = tmp_path / "t" / "motions" / "text" / "walking__999.bvh"
    bad.write_text("HIERARCHY\nROOT hips\n{\nOFFSET 0 0 zero\n}\n")
    assert main(["synth", str(cfg), "--source", "virtual_text"]) == EXIT_STAGE
    manifest = json.loads((tmp_path / "t" / "out" / "traces" / "manifest.json").read_text())
    assert len(manifest["errors"]) == 1 and "walking__999" in json.dumps(manifest["errors"])
    assert len(manifest["motions"]) == 8
    assert "1 failed" in capsys.readouterr().out


def test_run_then_cached_rerun_and_cache_rebuild(small_task, tmp_path):
    cfg = fresh_copy(small_task, tmp_path / "t")
    out = tmp_path / "t" / "out"
    assert main(["run", str(cfg), *FAST]) == EXIT_OK
    first = {n: (out / "report" / n).read_bytes() for n in ("results.csv", "per_class.csv", "summary.md")}
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["stages"] and not any(s["cached"] for s in manifest["stages"])
    assert (out / "config.resolved.json").exists()

    assert main(["run", str(cfg), *FAST]) == EXIT_OK
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert all(s["cached"] for s in manifest["stages"])

    shutil.rmtree(out / "cache")
    shutil.rmtree(out / "report")
    assert main(["run", str(cfg), *FAST]) == EXIT_OK
    assert {n: (out / "report" / n).read_bytes() for n in first} == first

    # the report subcommand re-renders identical files from report.json
    assert main(["report", str(out / "report"), "--out", str(tmp_path / "again")]) == EXIT_OK
    for n, data in first.items():
        assert (tmp_path / "again" / n).read_bytes() == data


def test_train_prints_model_hashes(small_task, tmp_path, capsys):
    cfg = fresh_copy(small_task, tmp_path / "t")
    assert main(["train", str(cfg), *FAST, "--configuration", "RealOnly"]) == EXIT_OK
    line = capsys.readouterr().out.strip().splitlines()[-1]
    name, _, digest = line.split()
    assert name == "RealOnly:" and len(digest) == 64
    index = json.loads((tmp_path / "t" / "out" / "models" / "index.json").read_text())
    assert list(index) == ["RealOnly"]


def test_cache_dir_from_environment(small_task, tmp_path, monkeypatch):
    cfg = fresh_copy(small_task, tmp_path / "t")
    monkeypatch.setenv("VIRTIMU_CACHE_DIR", str(tmp_path / "shared"))
    assert main(["ingest", str(cfg)]) == EXIT_OK
    assert any((tmp_path / "shared").iterdir())
    assert not (tmp_path / "t" / "out" / "cache").exists()


def test_synth_files_need_source(small_task):
    with pytest.raises(SystemExit):
        main(["synth", str(small_task / "config.yaml"), "x.bvh"])
