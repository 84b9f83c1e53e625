from __future__ import annotations

import csv
import hashlib
import json

import pytest

from shorthorizon.cli import main
from shorthorizon.config import ConfigError, PipelineConfig
from shorthorizon.models import load_model

CONFIG = {
    "synthetic": {"n_students": 50, "n_units": 10, "sessions_min": 2, "sessions_max": 3},
    "horizons": [1, "full"],
    "families": ["linear", "forest", "baseline"],
    "grids": {"forest": {"max_depth": [2, 4], "n_trees": [10]}},
    "feature_sets": ["short", "short+pretest"],
    "seed": 3,
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(CONFIG))
    return path


def manifest(out, name="manifest.json"):
    return json.loads((out / name).read_text())


def test_evaluate_writes_reports(cfg_path, tmp_path, capsys):
    assert main(["evaluate", "--config", str(cfg_path)]) == 0
    summary = capsys.readouterr().out.strip().splitlines()
    assert len(summary) == 1 and summary[0].startswith("evaluate:")
    out = tmp_path / "output"
    with open(out / "report" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 3 * 2
    assert list(rows[0])[:7] == ["horizon", "family", "feature_set", "rmse_mean", "rmse_se", "r2_mean", "r2_se"]
    doc = manifest(out)
    for rel, digest in doc["files"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    assert {"config_hash", "seeds", "normalization_extrema", "runtime_s", "manifest_hash"} <= set(doc)
    assert any(k.startswith("report/confusion/quintile_") for k in doc["files"])
    assert any(k.startswith("report/confusion/on_track_") for k in doc["files"])
    assert "data/events.jsonl" in doc["files"]

    assert main(["report", "--config", str(cfg_path)]) == 0
    assert "report: 12 rows" in capsys.readouterr().out


def test_rerun_gives_identical_manifest_hash(cfg_path, tmp_path):
    assert main(["evaluate", "--config", str(cfg_path), "--output", str(tmp_path / "a")]) == 0
    assert main(["evaluate", "--config", str(cfg_path), "--output", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert manifest(tmp_path / "a")["manifest_hash"] == manifest(tmp_path / "b")["manifest_hash"]
    assert main(["evaluate", "--config", str(cfg_path), "--output", str(tmp_path / "c"), "--seed", "4"]) == 0
    assert manifest(tmp_path / "c")["manifest_hash"] != manifest(tmp_path / "a")["manifest_hash"]


def test_staged_commands(cfg_path, tmp_path, capsys):
    out = tmp_path / "output"
    for cmd in ("synth", "ingest", "featurize", "mine-patterns", "train"):
        assert main([cmd, "--config", str(cfg_path)]) == 0, cmd
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split(":")[0] for ln in lines] == ["synth", "ingest", "featurize", "mine-patterns", "train"]
    assert "0 event rejects" in lines[1]
    with open(out / "features" / "features_1h.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "student_id" and header[-1] == "posttest"
    assert header[1:17][:2] == ["num_problem", "num_success_problem"]
    with open(out / "models" / "forest_1h.json") as fh:
        model = load_model(fh)
    assert model.feature_names == header[1:-1]
    # the featurized patterns are the ones mine-patterns selects
    assert (out / "features" / "patterns_1h.json").read_text() == (out / "patterns" / "patterns_1h.json").read_text()
    for name in ("synth", "featurize", "mine-patterns", "train"):
        assert manifest(out, f"manifest.{name}.json")["files"]


def test_train_without_features_is_pipeline_error(cfg_path, capsys):
    assert main(["train", "--config", str(cfg_path)]) == 1
    assert "featurize" in capsys.readouterr().err


def test_missing_input_file_is_pipeline_error(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"events": "nope.jsonl", "outcomes": "nope.csv"}))
    assert main(["ingest", "--config", str(path)]) == 1


@pytest.mark.parametrize("argv", [
    ["evaluate"],
    ["evaluate", "--config", "missing.json"],
    ["evaluate", "--config", "x", "--bogus"],
    ["frobnicate", "--config", "x"],
    ["evaluate", "--config", "x", "--jobs", "0"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"synthetic": {}, "horizons": []}))
    assert main(["evaluate", "--config", str(path)]) == 2
    path.write_text("{not json")
    assert main(["evaluate", "--config", str(path)]) == 2


def test_config_parsing(tmp_path):
    cfg = PipelineConfig.from_dict({"synthetic": {"n_students": 30}, "seed": 5}, tmp_path)
    assert cfg.synthetic.seed == 5 and [h.label for h in cfg.horizons] == ["1h", "2h", "3h", "4h", "5h", "12h", "full"]
    assert cfg.level_cuts == (0.3, 0.45, 0.6, 0.75) and cfg.normalize_scope == "train_fold"
    assert cfg.with_overrides(seed=6).synthetic.seed == 6
    assert cfg.with_overrides(jobs=4).content_hash() == cfg.content_hash()
    assert cfg.with_overrides(seed=6).content_hash() != cfg.content_hash()
    for bad in ({"synthetic": {}, "colour": 1}, {}, {"synthetic": {}, "normalize_scope": "x"},
                {"synthetic": {}, "families": ["gbdt"]}):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(bad, tmp_path)
