"""Report files: metric tables, confusion matrices, importances, patterns, manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .evaluation import EvaluationReport, ReportRow, bin_precision, on_track_from_matrix
from .features import FeatureTable
from .patterns import dump_patterns

METRIC_COLUMNS = (
    "horizon", "family", "feature_set", "rmse_mean", "rmse_se", "r2_mean", "r2_se",
    "cod_mean", "cod_se", "n_folds",
)
QUINTILE_LABELS = ("Q1", "Q2", "Q3", "Q4", "Q5")


def _slug(*parts: str) -> str:
    return "_".join(p.replace("+", "-").replace(":", "-").replace("/", "-") for p in parts)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_metrics(rows: Sequence[ReportRow], path: Path) -> Path:
    return _write_csv(path, METRIC_COLUMNS, ([getattr(r, c) for c in METRIC_COLUMNS] for r in rows))


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_feature_table(table: FeatureTable, path: Path, target: np.ndarray | None = None) -> Path:
    header = ["student_id", *table.names] + (["posttest"] if target is not None else [])
    rows = []
    for i, sid in enumerate(table.student_ids):
        row: list[Any] = [sid, *map(float, table.values[i])]
        if target is not None:
            row.append(float(target[i]))
        rows.append(row)
    return _write_csv(path, header, rows)


def read_feature_table(path: str | Path) -> tuple[FeatureTable, np.ndarray | None]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = list(reader)
    has_target = header[-1] == "posttest"
    names = header[1:-1] if has_target else header[1:]
    ids = [r[0] for r in body]
    values = np.array([[float(v) for v in r[1:1 + len(names)]] for r in body]).reshape(len(body), len(names))
    target = np.array([float(r[-1]) for r in body]) if has_target else None
    return FeatureTable(ids, list(names), values), target


def write_report(report: EvaluationReport, out_dir: str | Path) -> list[Path]:
    """Write every report table under ``out_dir``; returns the files written."""
    out = Path(out_dir)
    files = [write_metrics(report.rows, out / "metrics.csv")]
    for (h, fam, fs), m in sorted(report.quintile.items()):
        prec = bin_precision(m)
        rows = [[f"pred_{QUINTILE_LABELS[i]}", *m[i].tolist(), float(prec[i])] for i in range(len(m))]
        files.append(_write_csv(out / "confusion" / f"quintile_{_slug(h, fam, fs)}.csv",
                                ["predicted", *QUINTILE_LABELS, "precision"], rows))
    for (h, fam, fs), m in sorted(report.on_track.items()):
        res = on_track_from_matrix(m)
        rows = [["pred_on_track", *m[0].tolist()], ["pred_not_on_track", *m[1].tolist()],
                ["precision_not_on_track", res.precision, ""], ["recall_not_on_track", res.recall, ""]]
        files.append(_write_csv(out / "confusion" / f"on_track_{_slug(h, fam, fs)}.csv",
                                ["predicted", "actual_on_track", "actual_not_on_track"], rows))
    for (h, fs), imp in sorted(report.importance.items()):
        ranked = sorted(imp.items(), key=lambda kv: (-kv[1], kv[0]))
        files.append(_write_csv(out / "importance" / f"forest_{_slug(h, fs)}.csv",
                                ["rank", "feature", "importance"],
                                [[i + 1, n, v] for i, (n, v) in enumerate(ranked)]))
    for fa in report.folds:
        path = out / "patterns" / f"{_slug(fa.horizon)}_fold{fa.fold}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            dump_patterns(fa.patterns, fh, horizon=fa.horizon, fold=fa.fold)
        files.append(path)
    specs_path = out / "chosen_specs.json"
    specs_path.write_text(json.dumps(
        {"|".join(k): v for k, v in sorted(report.chosen_specs.items())}, indent=2, sort_keys=True))
    files.append(specs_path)
    return files


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: str | Path, files: Sequence[Path], *, config_hash: str,
                   seeds: dict[str, Any], extra: dict[str, Any] | None = None,
                   runtime_s: float | None = None, name: str = "manifest.json") -> tuple[Path, str]:
    """Manifest listing every output with its content hash.

    ``manifest_hash`` covers the config hash, seeds and file hashes, so it
    is stable across reruns even though the recorded runtime is not.
    """
    out = Path(out_dir)
    entries = {str(Path(f).relative_to(out)): sha256_file(f) for f in files}
    stable = {"config_hash": config_hash, "seeds": seeds, "files": dict(sorted(entries.items())),
              **(extra or {})}
    digest = hashlib.sha256(json.dumps(stable, sort_keys=True).encode()).hexdigest()
    doc = {**stable, "manifest_hash": digest, "runtime_s": runtime_s}
    path = out / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path, digest


def format_metrics(rows: Sequence[dict[str, str]]) -> str:
    lines = [f"{'horizon':>8} {'family':>9} {'feature_set':>22} {'RMSE':>16} {'R2':>16}"]
    for r in rows:
        rmse = f"{float(r['rmse_mean']):.3f} ({float(r['rmse_se']):.3f})"
        r2 = f"{float(r['r2_mean']):.2f} ({float(r['r2_se']):.3f})"
        lines.append(f"{r['horizon']:>8} {r['family']:>9} {r['feature_set']:>22} {rmse:>16} {r2:>16}")
    return "\n".join(lines)
