"""Command-line front end for short-horizon outcome prediction.

Every command takes ``--config`` (a JSON file), plus optional ``--seed``,
``--jobs`` and ``--output`` overrides. Exit codes: 0 success, 1 pipeline
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig
from .evaluation import Cohort, ExperimentError, fold_features, run_experiment
from .features import FeatureTable
from .ingest import IngestError, parse_event_log, parse_outcome_table
from .models import grid_search, save_model
from .patterns import PatternMiningError, dump_patterns
from .reporting import (
    format_metrics, read_feature_table, read_metrics, write_feature_table, write_manifest, write_report,
)
from .synthgen import generate_cohort

logger = logging.getLogger("shorthorizon")


class PipelineError(RuntimeError):
    pass


def _inputs(cfg: PipelineConfig) -> tuple[Path, Path]:
    """Event and outcome files, generating the synthetic cohort on demand."""
    if cfg.events is not None and cfg.outcomes is not None:
        for p in (cfg.events, cfg.outcomes):
            if not p.exists():
                raise PipelineError(f"input file not found: {p}")
        return cfg.events, cfg.outcomes
    data = cfg.output / "data"
    events, outcomes = data / "events.jsonl", data / "outcomes.csv"
    if not (events.exists() and outcomes.exists()):
        generate_cohort(cfg.synthetic, data)
    return events, outcomes


def _generated_inputs(cfg: PipelineConfig) -> list[Path]:
    """Input files this run produced itself, which belong in its manifest."""
    if cfg.events is not None:
        return []
    return [cfg.output / "data" / "events.jsonl", cfg.output / "data" / "outcomes.csv"]


def _load_cohort(cfg: PipelineConfig) -> tuple[Cohort, dict]:
    events_path, outcomes_path = _inputs(cfg)
    with open(events_path, encoding="utf-8") as fh:
        trajectories, report = parse_event_log(fh, cfg.schema or None)
    with open(outcomes_path, encoding="utf-8", newline="") as fh:
        outcomes, oreport = parse_outcome_table(fh)
    if report.rejected:
        logger.warning("event log: %d of %d lines rejected", report.rejected, report.total)
    info = {"events_accepted": report.accepted, "events_rejected": report.rejected,
            "outcomes_accepted": oreport.accepted, "outcomes_rejected": oreport.rejected}
    cohort = Cohort.build(trajectories, outcomes, cfg.clock_mode)
    if len(cohort.student_ids) < 2:
        raise PipelineError("fewer than 2 students have both events and outcomes")
    return cohort, info


def _seeds(cfg: PipelineConfig) -> dict:
    return {"seed": cfg.seed, "synthetic_seed": cfg.synthetic.seed if cfg.synthetic else None}


def _finish(cfg: PipelineConfig, command: str, files: list[Path], started: float,
            extra: dict | None = None) -> str:
    # evaluate owns manifest.json; staged commands get their own so none clobbers another
    name = "manifest.json" if command == "evaluate" else f"manifest.{command}.json"
    _, digest = write_manifest(cfg.output, files, config_hash=cfg.content_hash(), seeds=_seeds(cfg),
                               extra=extra, runtime_s=round(time.perf_counter() - started, 3), name=name)
    return digest


def _whole_cohort_features(cfg: PipelineConfig, cohort: Cohort, horizon, with_patterns: bool):
    all_idx = np.arange(len(cohort.student_ids))
    y, _ = cohort.targets(cfg.normalize_scope, all_idx)
    ff = fold_features(cohort, horizon, all_idx, y, with_patterns=with_patterns,
                       min_support=cfg.min_support, top_k=cfg.top_k, alpha=cfg.alpha, fold_label="all")
    return ff, y


# -- commands ---------------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig, started: float) -> str:
    """Validate the event log and outcome table and report counts."""
    cohort, info = _load_cohort(cfg)
    n_events = sum(len(a) for a in cohort.arrays.values())
    return (f"ingest: {len(cohort.student_ids)} students, {n_events} events, "
            f"{info['events_rejected']} event rejects, {info['outcomes_rejected']} outcome rejects")


def cmd_synth(cfg: PipelineConfig, started: float) -> str:
    """Write a seeded synthetic cohort to the output data directory."""
    if cfg.synthetic is None:
        raise PipelineError("config has no synthetic section")
    data = cfg.output / "data"
    events, outcomes = generate_cohort(cfg.synthetic, data)
    digest = _finish(cfg, "synth", [events, outcomes], started)
    return f"synth: {cfg.synthetic.n_students} students -> {data} (manifest {digest[:12]})"


def cmd_featurize(cfg: PipelineConfig, started: float) -> str:
    """Write whole-cohort feature tables for every horizon."""
    cohort, _ = _load_cohort(cfg)
    files = []
    for h in cfg.horizons:
        ff, y = _whole_cohort_features(cfg, cohort, h, with_patterns=True)
        table = FeatureTable(list(cohort.student_ids), ff.names, ff.values)
        files.append(write_feature_table(table, cfg.output / "features" / f"features_{h.label}.csv", y))
        path = cfg.output / "features" / f"patterns_{h.label}.json"
        with open(path, "w", encoding="utf-8") as fh:
            dump_patterns(ff.patterns, fh, horizon=h.label, fold="all")
        files.append(path)
    digest = _finish(cfg, "featurize", files, started)
    return f"featurize: {len(cfg.horizons)} horizons x {len(cohort.student_ids)} students (manifest {digest[:12]})"


def cmd_mine_patterns(cfg: PipelineConfig, started: float) -> str:
    """Mine and select discriminative patterns for every horizon."""
    cohort, _ = _load_cohort(cfg)
    files, counts = [], []
    for h in cfg.horizons:
        ff, _ = _whole_cohort_features(cfg, cohort, h, with_patterns=True)
        path = cfg.output / "patterns" / f"patterns_{h.label}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            dump_patterns(ff.patterns, fh, horizon=h.label, fold="all")
        files.append(path)
        counts.append(f"{h.label}={len(ff.patterns)}")
    digest = _finish(cfg, "mine-patterns", files, started)
    return f"mine-patterns: selected {', '.join(counts)} (manifest {digest[:12]})"


def cmd_train(cfg: PipelineConfig, started: float) -> str:
    """Fit each family on a materialized feature table, choosing hyperparameters by inner CV."""
    files = []
    for h in cfg.horizons:
        src = cfg.output / "features" / f"features_{h.label}.csv"
        if not src.exists():
            raise PipelineError(f"{src} not found; run featurize first")
        table, y = read_feature_table(src)
        if y is None:
            raise PipelineError(f"{src} has no posttest column")
        exp = cfg.experiment()
        for family in cfg.families:
            # no held-out fold exists here, so selection is always the inner CV
            _, model, _ = grid_search(family, table.values, y, exp.grid(family), "nested",
                                      feature_names=table.names, seed=cfg.seed,
                                      metadata={"horizon": h.label})
            path = cfg.output / "models" / f"{family.value}_{h.label}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as fh:
                save_model(model, fh)
            files.append(path)
    digest = _finish(cfg, "train", files, started)
    return f"train: {len(files)} models written to {cfg.output / 'models'} (manifest {digest[:12]})"


def cmd_evaluate(cfg: PipelineConfig, started: float) -> str:
    """Run the cross-validated experiment and write all reports."""
    cohort, info = _load_cohort(cfg)
    report = run_experiment(cohort, cfg.experiment())
    files = _generated_inputs(cfg) + write_report(report, cfg.output / "report")
    extra = {
        "normalization_extrema": report.metadata["normalization_extrema"],
        "fold_extrema": {f"{fa.horizon}/fold{fa.fold}": list(fa.extrema) for fa in report.folds},
        "normalize_scope": cfg.normalize_scope,
        "clock_mode": cfg.clock_mode.value,
        "n_students": len(cohort.student_ids),
        "ingest": info,
        "fold_sizes": report.plan.sizes(),
    }
    digest = _finish(cfg, "evaluate", files, started, extra)
    return f"evaluate: {len(report.rows)} result rows -> {cfg.output / 'report'} (manifest {digest[:12]})"


def cmd_report(cfg: PipelineConfig, started: float) -> str:
    """Print the metric table of a finished evaluate run."""
    path = cfg.output / "report" / "metrics.csv"
    if not path.exists():
        raise PipelineError(f"{path} not found; run evaluate first")
    rows = read_metrics(path)
    print(format_metrics(rows))
    return f"report: {len(rows)} rows from {path}"


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "mine-patterns": cmd_mine_patterns,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def _non_negative(value: str) -> int:
    n = int(value)
    if n < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return n


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shorthorizon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="pipeline config JSON")
    common.add_argument("--seed", type=_non_negative, help="override the config seed")
    common.add_argument("--jobs", type=_positive, help="worker processes for evaluate")
    common.add_argument("--output", type=Path, help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.config.exists():
        parser.print_usage(sys.stderr)
        print(f"shorthorizon: error: config file not found: {args.config}", file=sys.stderr)
        return 2
    try:
        cfg = PipelineConfig.load(args.config).with_overrides(seed=args.seed, jobs=args.jobs, output=args.output)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"shorthorizon: error: {exc}", file=sys.stderr)
        return 2
    started = time.perf_counter()
    try:
        cfg.output.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, started)
    except (PipelineError, IngestError, ExperimentError, PatternMiningError, OSError, ValueError) as exc:
        print(f"shorthorizon {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
