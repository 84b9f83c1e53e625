"""Cross-validated experiments, population metrics, and subgroup confusion matrices."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .features import (
    EXPERT_FEATURES,
    EventArrays,
    PopulationTimeStats,
    assemble,
    idle_features,
    population_stats_from_arrays,
    static_features,
)
from .folds import FoldPlan, kfold_assign
from .horizon import ClockMode, HorizonSpec, build_usage_clock
from .ingest import OutcomeRecord, Trajectory
from .models import (
    Family,
    ForestPredictor,
    LinearPredictor,
    ModelSpec,
    Selection,
    SVRPredictor,
    grid_from_config,
    grid_search,
    rf_feature_importance,
)
from .patterns import (
    PatternSpec,
    median_split,
    mine_from_keys,
    ngram_keys,
    pattern_feature_names,
    pattern_key,
    select_top_patterns,
    token_codes,
)

logger = logging.getLogger(__name__)

N_QUINTILES = 5
PASS_LEVEL = 3
PRETEST = "pretest"


class ExperimentError(RuntimeError):
    pass


# -- targets and metrics ----------------------------------------------------------------


def normalize_outcomes(raw: Sequence[float]) -> tuple[np.ndarray, tuple[float, float]]:
    """Min-max scale scores to [0, 1]; returns the scaled scores and (min, max)."""
    y = np.asarray(raw, dtype=float)
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise ValueError("outcome scores are all equal; nothing to predict")
    return (y - lo) / (hi - lo), (lo, hi)


@dataclass(frozen=True)
class Metrics:
    rmse: float
    r2: float  # squared Pearson correlation
    cod: float  # coefficient of determination, 1 - SSE/SST


def compute_metrics(pred: Sequence[float], actual: Sequence[float]) -> Metrics:
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError("pred and actual must be 1-D and equally long")
    if len(a) == 0:
        raise ValueError("cannot score an empty prediction set")
    err = p - a
    rmse = math.sqrt(float(np.mean(err * err)))
    dp, da = p - p.mean(), a - a.mean()
    sp, sa = float(dp @ dp), float(da @ da)
    # exact constancy check: a constant vector can have a mean off by one ulp
    flat_p, flat_a = bool(np.all(p == p[0])), bool(np.all(a == a[0]))
    r2 = 0.0 if flat_p or flat_a or sp == 0.0 or sa == 0.0 else min(1.0, float(dp @ da) ** 2 / (sp * sa))
    cod = 0.0 if flat_a or sa == 0.0 else 1.0 - float(err @ err) / sa
    return Metrics(rmse, r2, cod)


def quintile_cuts(train_actual: Sequence[float]) -> np.ndarray:
    cuts = np.percentile(np.asarray(train_actual, dtype=float), [20, 40, 60, 80])
    if not np.all(np.diff(cuts) > 0):
        raise ValueError(f"training scores give non-increasing quintile cuts {cuts.tolist()}")
    return cuts


def bin_scores(scores: Sequence[float], cuts: np.ndarray) -> np.ndarray:
    """Left-closed bins: a score equal to a cut falls in the upper bin."""
    return np.searchsorted(cuts, np.asarray(scores, dtype=float), side="right")


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def quintile_confusion(pred, actual, train_actual) -> tuple[np.ndarray, np.ndarray]:
    """5x5 counts (rows predicted Q1..Q5, columns actual) and per-predicted-bin precision."""
    cuts = quintile_cuts(train_actual)
    matrix = confusion_counts(bin_scores(pred, cuts), bin_scores(actual, cuts), N_QUINTILES)
    return matrix, bin_precision(matrix)


def confusion_counts(pred_bins: np.ndarray, actual_bins: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(pred_bins), np.asarray(actual_bins)), 1)
    return m


def bin_precision(matrix: np.ndarray) -> np.ndarray:
    return _safe_div(np.diag(matrix), matrix.sum(axis=1))


@dataclass(frozen=True)
class OnTrackResult:
    matrix: np.ndarray  # rows predicted (on, not), columns actual (on, not)
    precision: float  # for "not on track"
    recall: float

    @property
    def correct_on_track(self) -> int:
        return int(self.matrix[0, 0])

    @property
    def correct_not_on_track(self) -> int:
        return int(self.matrix[1, 1])

    @property
    def misclassified(self) -> int:
        return int(self.matrix[0, 1] + self.matrix[1, 0])


def score_to_level(scores, level_cuts: Sequence[float]) -> np.ndarray:
    """Achievement level 1..5 from a score: one level per cut at or below it."""
    cuts = np.asarray(level_cuts, dtype=float)
    if len(cuts) != 4 or not np.all(np.diff(cuts) > 0):
        raise ValueError("level mapping needs four increasing score cuts")
    return 1 + np.searchsorted(cuts, np.asarray(scores, dtype=float), side="right")


def on_track_confusion(pred_scores, actual_levels, level_cuts) -> OnTrackResult | None:
    """Pass/fail agreement with "not on track" (level below 3) as the positive class.

    Returns None, with a log notice, when any actual level is missing.
    """
    if actual_levels is None or any(lv is None for lv in actual_levels):
        logger.info("achievement levels missing; skipping on-track analysis")
        return None
    pred_not = score_to_level(pred_scores, level_cuts) < PASS_LEVEL
    actual_not = np.asarray(actual_levels, dtype=int) < PASS_LEVEL
    m = confusion_counts(pred_not.astype(int), actual_not.astype(int), 2)
    return on_track_from_matrix(m)


def on_track_from_matrix(m: np.ndarray) -> OnTrackResult:
    tp, fp, fn = m[1, 1], m[1, 0], m[0, 1]
    precision = float(tp / (tp + fp)) if tp + fp else 0.0
    recall = float(tp / (tp + fn)) if tp + fn else 0.0
    return OnTrackResult(m, precision, recall)


# -- experiment configuration --------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSet:
    """Parsed feature-set label such as ``short+pretest`` or ``single:perc_success_problem``."""

    label: str
    log: bool = False
    single: tuple[str, ...] = ()
    pretest: bool = False

    @classmethod
    def parse(cls, label: str) -> "FeatureSet":
        log, single, pretest = False, [], False
        for part in label.split("+"):
            part = part.strip()
            if part in ("short", "full"):
                log = True
            elif part == PRETEST:
                pretest = True
            elif part.startswith("single:"):
                name = part.split(":", 1)[1]
                if name not in EXPERT_FEATURES:
                    raise ValueError(f"unknown expert feature {name!r}")
                single.append(name)
            else:
                raise ValueError(f"unrecognised feature-set component {part!r}")
        if not (log or single or pretest):
            raise ValueError(f"empty feature set {label!r}")
        return cls(label, log, tuple(single), pretest)

    def display(self, horizon: HorizonSpec) -> str:
        if not self.log:
            return self.label
        word = "full" if horizon.is_full else "short"
        parts = [word if p.strip() in ("short", "full") else p.strip() for p in self.label.split("+")]
        return "+".join(parts)


@dataclass(frozen=True)
class ExperimentConfig:
    horizons: tuple[HorizonSpec, ...]
    families: tuple[Family, ...] = (Family.LINEAR, Family.SVR, Family.FOREST, Family.BASELINE)
    grids: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    selection: Selection = Selection.NESTED
    feature_sets: tuple[FeatureSet, ...] = (FeatureSet.parse("short"),)
    k: int = 5
    seed: int = 0
    min_support: float = 0.2
    top_k: int = 10
    alpha: float = 0.05
    normalize_scope: str = "train_fold"  # or "global"
    level_cuts: tuple[float, ...] | None = None
    jobs: int = 1

    def grid(self, family: Family) -> list[ModelSpec]:
        return grid_from_config(family, self.grids.get(family.value), self.seed)


# -- cohort and per-fold featurization ---------------------------------------------------


@dataclass
class Cohort:
    """Everything fold-independent: event arrays, usage clocks, raw outcomes."""

    student_ids: list[str]
    arrays: dict[str, EventArrays]
    usage: dict[str, np.ndarray]
    posttest: np.ndarray
    pretest: np.ndarray  # NaN where absent
    levels: list[int | None]
    vocab: dict[str, int]
    clock_mode: ClockMode

    @classmethod
    def build(cls, trajectories: Sequence[Trajectory], outcomes: Mapping[str, OutcomeRecord],
              clock_mode: ClockMode | str) -> "Cohort":
        mode = ClockMode(clock_mode)
        by_id = {t.student_id: t for t in trajectories}
        ids = [sid for sid in sorted(outcomes) if sid in by_id]
        missing = len(outcomes) - len(ids)
        if missing:
            logger.warning("%d students have outcomes but no events; they are skipped", missing)
        vocab: dict[str, int] = {}
        arrays, usage = {}, {}
        for sid in ids:
            traj = by_id[sid]
            arrays[sid] = EventArrays.from_events(traj.events, vocab)
            usage[sid] = build_usage_clock(traj, mode).cumulative_usage_s
        post = np.array([outcomes[s].posttest for s in ids], dtype=float)
        pre = np.array([np.nan if outcomes[s].pretest is None else outcomes[s].pretest for s in ids])
        levels = [outcomes[s].achievement_level for s in ids]
        return cls(ids, arrays, usage, post, pre, levels, vocab, mode)

    def index(self, ids: Sequence[str]) -> np.ndarray:
        pos = {s: i for i, s in enumerate(self.student_ids)}
        return np.array([pos[s] for s in ids], dtype=int)

    def truncated(self, sid: str, horizon: HorizonSpec) -> EventArrays:
        arr = self.arrays[sid]
        if horizon.is_full:
            return arr
        return arr.prefix(int(np.searchsorted(self.usage[sid], horizon.seconds, side="right")))

    def targets(self, scope: str, train_idx: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
        """Normalized post-test scores for every student.

        ``global`` uses cohort-wide extrema; ``train_fold`` uses the training
        rows' extrema so test scores cannot influence anything fitted.
        """
        if scope == "global":
            return normalize_outcomes(self.posttest)
        if scope == "train_fold":
            _, (lo, hi) = normalize_outcomes(self.posttest[train_idx])
            return (self.posttest - lo) / (hi - lo), (lo, hi)
        raise ValueError(f"unknown normalization scope {scope!r}")


@dataclass
class FoldFeatures:
    stats: PopulationTimeStats
    horizon_s: float
    patterns: list[PatternSpec]
    names: list[str]
    values: np.ndarray  # rows follow cohort.student_ids


def fold_features(
    cohort: Cohort,
    horizon: HorizonSpec,
    train_idx: np.ndarray,
    y: np.ndarray,
    *,
    with_patterns: bool = True,
    min_support: float = 0.2,
    top_k: int = 10,
    alpha: float = 0.05,
    fold_label: str = "",
    static_cache: dict | None = None,
) -> FoldFeatures:
    """Expert and pattern features for every student, with all baselines from ``train_idx``."""
    ids = cohort.student_ids
    truncated = [cohort.truncated(s, horizon) for s in ids]
    train_arrays = [truncated[i] for i in train_idx]
    stats = population_stats_from_arrays(train_arrays, cohort.vocab, source=f"{fold_label}@{horizon.label}")
    if horizon.is_full:
        # no budget to fall back on: use the longest training log under the active clock
        horizon_s = max((float(a.active_clock[-1]) for a in train_arrays if len(a)), default=0.0)
    else:
        horizon_s = horizon.seconds
    table = stats.lookup(cohort.vocab)

    if static_cache is not None and horizon.label in static_cache:
        statics = static_cache[horizon.label]
    else:
        statics = [static_features(a, math.nan) for a in truncated]
        if static_cache is not None:
            static_cache[horizon.label] = statics
    rows = []
    for arr, st in zip(truncated, statics):
        feats = assemble(st, idle_features(arr, table))
        if math.isnan(feats["time_first_unproductive_persistence"]):
            feats["time_first_unproductive_persistence"] = horizon_s
        rows.append([feats[n] for n in EXPERT_FEATURES])
    values = np.array(rows, dtype=float).reshape(len(ids), len(EXPERT_FEATURES))
    names = list(EXPERT_FEATURES)

    patterns: list[PatternSpec] = []
    if with_patterns:
        keys_per_student = [ngram_keys(token_codes(a, table)) for a in truncated]
        train_high = median_split(y[train_idx])
        candidates = mine_from_keys([keys_per_student[i] for i in train_idx], train_high, min_support)
        patterns = select_top_patterns(candidates, top_k, alpha)
        codes = np.array([pattern_key(p) for p in patterns], dtype=np.int64)
        ind = np.array([np.isin(codes, k).astype(float) for k in keys_per_student])
        if patterns:
            values = np.hstack([values, ind.reshape(len(ids), len(codes))])
            names += pattern_feature_names(len(patterns))
    return FoldFeatures(stats, horizon_s, patterns, names, values)


def design_matrix(ff: FoldFeatures, fs: FeatureSet, pretest: np.ndarray, train_idx: np.ndarray) -> tuple[np.ndarray, list[str]]:
    cols: list[np.ndarray] = []
    names: list[str] = []
    if fs.log:
        cols.append(ff.values)
        names += ff.names
    elif fs.single:
        idx = [ff.names.index(n) for n in fs.single]
        cols.append(ff.values[:, idx])
        names += list(fs.single)
    if fs.pretest:
        pre = pretest.copy()
        missing = np.isnan(pre)
        if missing.all() or np.isnan(pre[train_idx]).all():
            raise ExperimentError("feature set needs pre-test scores but none are available")
        # absent pre-tests take the training-fold mean
        pre[missing] = np.nanmean(pre[train_idx])
        cols.append(pre[:, None])
        names.append(PRETEST)
    return np.hstack(cols), names


# -- one (horizon, fold) cell ----------------------------------------------------------------


@dataclass
class CellResult:
    horizon: str
    feature_set: str
    family: str
    fold: int
    metrics: Metrics
    quintile: np.ndarray
    on_track: np.ndarray | None
    spec: ModelSpec
    importance: dict[str, float] | None = None
    standardization: tuple[list[float], list[float]] | None = None
    test_index: np.ndarray | None = None
    predictions: np.ndarray | None = None


@dataclass
class FoldArtifacts:
    """Training-fold-derived state, exposed for leakage checks."""

    horizon: str
    fold: int
    stats: PopulationTimeStats
    patterns: list[PatternSpec]
    cuts: np.ndarray
    extrema: tuple[float, float]
    cells: list[CellResult]


def evaluate_fold(cohort: Cohort, config: ExperimentConfig, horizon: HorizonSpec, plan: FoldPlan,
                  fold: int, static_cache: dict | None = None) -> FoldArtifacts:
    train_ids, test_ids = plan.train_ids(fold), plan.test_ids(fold)
    if len(train_ids) < 2:
        raise ExperimentError(f"fold {fold} has {len(train_ids)} training students; need at least 2")
    tr, te = cohort.index(train_ids), cohort.index(test_ids)
    y, extrema = cohort.targets(config.normalize_scope, tr)
    need_patterns = any(fs.log for fs in config.feature_sets)
    need_log = any(fs.log or fs.single for fs in config.feature_sets)
    ff = None
    if need_log:
        ff = fold_features(cohort, horizon, tr, y, with_patterns=need_patterns,
                           min_support=config.min_support, top_k=config.top_k, alpha=config.alpha,
                           fold_label=f"fold{fold}", static_cache=static_cache)
    else:
        ff = FoldFeatures(PopulationTimeStats({}, 0.0), 0.0, [], [], np.zeros((len(cohort.student_ids), 0)))
    cuts = quintile_cuts(y[tr])
    levels = [cohort.levels[i] for i in te]

    cells = []
    for fs in config.feature_sets:
        X, names = design_matrix(ff, fs, cohort.pretest, tr)
        for family in config.families:
            spec, model, _ = grid_search(
                family, X[tr], y[tr], config.grid(family), config.selection,
                X_test=X[te], y_test=y[te], feature_names=names, seed=config.seed,
                metadata={"fold": fold, "horizon": horizon.label, "feature_set": fs.display(horizon)},
            )
            pred = model.predict(X[te])
            cm = confusion_counts(bin_scores(pred, cuts), bin_scores(y[te], cuts), N_QUINTILES)
            ot = None
            if config.level_cuts is not None:
                lo, hi = extrema
                res = on_track_confusion(pred * (hi - lo) + lo, levels, config.level_cuts)
                ot = None if res is None else res.matrix
            importance = rf_feature_importance(model) if isinstance(model, ForestPredictor) else None
            std = None
            if isinstance(model, (LinearPredictor, SVRPredictor)):
                std = (model.standardizer.mean.tolist(), model.standardizer.scale.tolist())
            cells.append(CellResult(horizon.label, fs.display(horizon), family.value, fold,
                                    compute_metrics(pred, y[te]), cm, ot, spec, importance, std, te, pred))
    return FoldArtifacts(horizon.label, fold, ff.stats, ff.patterns, cuts, extrema, cells)


# -- aggregation ------------------------------------------------------------------------------


@dataclass
class ReportRow:
    horizon: str
    family: str
    feature_set: str
    rmse_mean: float
    rmse_se: float
    r2_mean: float
    r2_se: float
    cod_mean: float
    cod_se: float
    n_folds: int


@dataclass
class EvaluationReport:
    rows: list[ReportRow]
    quintile: dict[tuple[str, str, str], np.ndarray]
    on_track: dict[tuple[str, str, str], np.ndarray]
    importance: dict[tuple[str, str], dict[str, float]]
    chosen_specs: dict[tuple[str, str, str], list[dict]]
    folds: list[FoldArtifacts]
    plan: FoldPlan
    metadata: dict[str, Any] = field(default_factory=dict)

    def row(self, horizon: str, family: str, feature_set: str) -> ReportRow:
        for r in self.rows:
            if (r.horizon, r.family, r.feature_set) == (horizon, family, feature_set):
                return r
        raise KeyError((horizon, family, feature_set))

    def precision(self, horizon: str, family: str, feature_set: str) -> np.ndarray:
        return bin_precision(self.quintile[(horizon, family, feature_set)])

    def on_track_result(self, horizon: str, family: str, feature_set: str) -> OnTrackResult | None:
        m = self.on_track.get((horizon, family, feature_set))
        return None if m is None else on_track_from_matrix(m)


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def aggregate(folds: Sequence[FoldArtifacts], plan: FoldPlan) -> EvaluationReport:
    grouped: dict[tuple[str, str, str], list[CellResult]] = {}
    for fa in folds:
        for c in fa.cells:
            grouped.setdefault((c.horizon, c.family, c.feature_set), []).append(c)
    rows, quintile, on_track, importance, chosen = [], {}, {}, {}, {}
    for key, cells in grouped.items():
        cells.sort(key=lambda c: c.fold)
        rm, rs = _mean_se([c.metrics.rmse for c in cells])
        qm, qs = _mean_se([c.metrics.r2 for c in cells])
        cm, cs = _mean_se([c.metrics.cod for c in cells])
        rows.append(ReportRow(key[0], key[1], key[2], rm, rs, qm, qs, cm, cs, len(cells)))
        quintile[key] = sum(c.quintile for c in cells)
        if all(c.on_track is not None for c in cells):
            on_track[key] = sum(c.on_track for c in cells)
        chosen[key] = [c.spec.to_dict() for c in cells]
        if cells[0].importance is not None:
            names = sorted({n for c in cells for n in c.importance})
            importance[(key[0], key[2])] = {
                n: float(np.mean([c.importance.get(n, 0.0) for c in cells])) for n in names
            }
    return EvaluationReport(rows, quintile, on_track, importance, chosen, list(folds), plan)


# -- driver -----------------------------------------------------------------------------------

_WORKER: dict[str, Any] = {}


def _init_worker(cohort: Cohort, config: ExperimentConfig, plan: FoldPlan) -> None:
    _WORKER.update(cohort=cohort, config=config, plan=plan, cache={})


def _run_cell(args: tuple[int, int]) -> FoldArtifacts:
    h, fold = args
    config = _WORKER["config"]
    return evaluate_fold(_WORKER["cohort"], config, config.horizons[h], _WORKER["plan"], fold, _WORKER["cache"])


def run_experiment(cohort: Cohort, config: ExperimentConfig) -> EvaluationReport:
    """Cross-validate every (horizon, feature set, family) combination.

    Each fold truncates logs to the horizon, derives time baselines, mined
    patterns, quintile cuts and hyperparameters from its training students
    only, then scores the held-out students.
    """
    if not config.horizons:
        raise ExperimentError("horizon grid is empty")
    plan = kfold_assign(cohort.student_ids, config.k, config.seed)
    for f in range(config.k):
        if len(plan.train_ids(f)) < 2:
            raise ExperimentError(f"fold {f} would train on fewer than 2 students: sizes {plan.sizes()}")
    tasks = [(h, f) for h in range(len(config.horizons)) for f in range(config.k)]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs, initializer=_init_worker,
                                 initargs=(cohort, config, plan)) as pool:
            folds = list(pool.map(_run_cell, tasks))
    else:
        _init_worker(cohort, config, plan)
        try:
            folds = [_run_cell(t) for t in tasks]
        finally:
            _WORKER.clear()
    report = aggregate(folds, plan)
    report.metadata.update({
        "clock_mode": cohort.clock_mode.value,
        "n_students": len(cohort.student_ids),
        "normalize_scope": config.normalize_scope,
        "normalization_extrema": list(normalize_outcomes(cohort.posttest)[1]),
    })
    return report
