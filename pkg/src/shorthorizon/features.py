"""Problem segmentation and the sixteen expert log features.

Idle-style features compare each attempt against the mean attempt duration on
the same unit across *training* students, so the time baseline is an explicit
input (``PopulationTimeStats``) rather than something computed from whoever
happens to be in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import EventRecord, Trajectory

GUESS_THRESHOLD_S = 2.0
LONG_IDLE_THRESHOLD_S = 300.0
PERSISTENCE_WINDOWS = (5, 10)

EXPERT_FEATURES = (
    "num_problem",
    "num_success_problem",
    "perc_success_problem",
    "min_attempts_per_problem",
    "avg_attempts_per_problem",
    "max_attempts_per_problem",
    "num_guess_in_problem",
    "num_idle_in_problem",
    "num_twice_avg_time_in_problem",
    "num_long_idle_in_problem",
    "avg_time_per_problem",
    "avg_time_per_success_problem",
    "avg_time_per_failed_problem",
    "num_unproductive_persistence_thres_5",
    "num_unproductive_persistence_thres_10",
    "time_first_unproductive_persistence",
)
# features that need the cross-student time baseline
STATS_DEPENDENT = ("num_idle_in_problem", "num_twice_avg_time_in_problem")


@dataclass
class ProblemInstance:
    unit_id: str
    attempts: list[EventRecord]
    success: bool

    @property
    def total_time_s(self) -> float:
        return float(sum(e.duration_s for e in self.attempts))


def segment_problems(traj: Trajectory) -> list[ProblemInstance]:
    """Split a trajectory into problem instances.

    An instance is a maximal run of consecutive events on one unit; it is a
    success when the run's last event succeeded. Only ``attempt`` events count
    as attempts, and runs holding no attempt at all are dropped.
    """
    instances: list[ProblemInstance] = []
    run: list[EventRecord] = []

    def close() -> None:
        attempts = [e for e in run if e.event_type == "attempt"]
        if attempts:
            instances.append(ProblemInstance(run[0].unit_id, attempts, run[-1].outcome == "success"))

    for event in traj.events:
        if run and event.unit_id != run[-1].unit_id:
            close()
            run = []
        run.append(event)
    if run:
        close()
    return instances


@dataclass(frozen=True)
class EventArrays:
    """Column view of one trajectory; unit ids are encoded through a shared vocabulary."""

    unit: np.ndarray  # int codes
    is_attempt: np.ndarray
    success: np.ndarray
    duration: np.ndarray
    active_clock: np.ndarray

    @classmethod
    def from_events(cls, events: Sequence[EventRecord], vocab: dict[str, int]) -> "EventArrays":
        n = len(events)
        unit = np.empty(n, dtype=np.int64)
        is_attempt = np.empty(n, dtype=bool)
        success = np.empty(n, dtype=bool)
        duration = np.empty(n, dtype=float)
        for i, e in enumerate(events):
            code = vocab.get(e.unit_id)
            if code is None:
                code = vocab[e.unit_id] = len(vocab)
            unit[i] = code
            is_attempt[i] = e.event_type == "attempt"
            success[i] = e.outcome == "success"
            duration[i] = e.duration_s
        return cls(unit, is_attempt, success, duration, np.cumsum(duration))

    def __len__(self) -> int:
        return len(self.unit)

    def prefix(self, n: int) -> "EventArrays":
        return EventArrays(
            self.unit[:n], self.is_attempt[:n], self.success[:n],
            self.duration[:n], self.active_clock[:n],
        )

    @property
    def attempt_units(self) -> np.ndarray:
        return self.unit[self.is_attempt]

    @property
    def attempt_durations(self) -> np.ndarray:
        return self.duration[self.is_attempt]


@dataclass(frozen=True)
class PopulationTimeStats:
    unit_means: Mapping[str, float]
    global_mean: float
    source: str = ""

    def mean_for(self, unit_id: str) -> float:
        return self.unit_means.get(unit_id, self.global_mean)

    def lookup(self, vocab: Mapping[str, int]) -> np.ndarray:
        """Per-code mean durations; codes unseen in training get the global mean."""
        table = np.full(max(len(vocab), 1), self.global_mean)
        for unit_id, code in vocab.items():
            if unit_id in self.unit_means:
                table[code] = self.unit_means[unit_id]
        return table


def population_stats_from_arrays(
    arrays: Iterable[EventArrays], vocab: Mapping[str, int], source: str = ""
) -> PopulationTimeStats:
    arrays = list(arrays)
    if not arrays:
        raise ValueError("population time statistics need at least one training trajectory")
    units = np.concatenate([a.attempt_units for a in arrays])
    durs = np.concatenate([a.attempt_durations for a in arrays])
    if len(durs) == 0:
        return PopulationTimeStats({}, 0.0, source)
    size = max(len(vocab), int(units.max()) + 1)
    totals = np.bincount(units, weights=durs, minlength=size)
    counts = np.bincount(units, minlength=size)
    inverse = {code: unit_id for unit_id, code in vocab.items()}
    means = {
        inverse[code]: float(totals[code] / counts[code])
        for code in np.flatnonzero(counts)
    }
    return PopulationTimeStats(means, float(durs.sum() / len(durs)), source)


def compute_population_time_stats(
    trajectories: Iterable[Trajectory], source: str = ""
) -> PopulationTimeStats:
    """Mean attempt duration per unit and overall, over the given (training, truncated) set."""
    vocab: dict[str, int] = {}
    arrays = [EventArrays.from_events(t.events, vocab) for t in trajectories]
    return population_stats_from_arrays(arrays, vocab, source)


def static_features(arr: EventArrays, horizon_s: float) -> dict[str, float]:
    """Every expert feature that does not depend on the population baseline."""
    out = dict.fromkeys(EXPERT_FEATURES, 0.0)
    out["time_first_unproductive_persistence"] = float(horizon_s)
    del out["num_idle_in_problem"], out["num_twice_avg_time_in_problem"]
    n = len(arr)
    if n == 0:
        return out

    new_run = np.ones(n, dtype=bool)
    new_run[1:] = arr.unit[1:] != arr.unit[:-1]
    run_id = np.cumsum(new_run) - 1
    n_runs = int(run_id[-1]) + 1
    run_last = np.append(np.flatnonzero(new_run)[1:] - 1, n - 1)

    att = arr.is_attempt
    att_run = run_id[att]
    att_dur = arr.duration[att]
    attempts = np.bincount(att_run, minlength=n_runs)
    time = np.bincount(att_run, weights=att_dur, minlength=n_runs)
    keep = attempts > 0
    if not keep.any():
        return out
    attempts, time = attempts[keep], time[keep]
    solved = arr.success[run_last][keep]

    n_prob = len(attempts)
    n_succ = int(solved.sum())
    out["num_problem"] = float(n_prob)
    out["num_success_problem"] = float(n_succ)
    out["perc_success_problem"] = n_succ / n_prob
    out["min_attempts_per_problem"] = float(attempts.min())
    out["avg_attempts_per_problem"] = float(attempts.mean())
    out["max_attempts_per_problem"] = float(attempts.max())
    out["num_guess_in_problem"] = float(np.count_nonzero(att_dur <= GUESS_THRESHOLD_S))
    out["num_long_idle_in_problem"] = float(np.count_nonzero(att_dur > LONG_IDLE_THRESHOLD_S))
    out["avg_time_per_problem"] = float(time.mean())
    out["avg_time_per_success_problem"] = float(time[solved].mean()) if n_succ else 0.0
    out["avg_time_per_failed_problem"] = float(time[~solved].mean()) if n_succ < n_prob else 0.0

    # failure runs: consecutive non-success attempts inside one instance
    failed = ~arr.success[att]
    m = len(failed)
    starts = failed.copy()
    starts[1:] &= ~failed[:-1] | (att_run[1:] != att_run[:-1])
    if starts.any():
        label = np.cumsum(starts) - 1
        lengths = np.bincount(label[failed])
        for k in PERSISTENCE_WINDOWS:
            out[f"num_unproductive_persistence_thres_{k}"] = float((lengths // k).sum())
        long_enough = np.flatnonzero(lengths >= PERSISTENCE_WINDOWS[0])
        if len(long_enough):
            first_pos = np.flatnonzero(starts)[long_enough[0]] + PERSISTENCE_WINDOWS[0] - 1
            assert first_pos < m
            event_index = np.flatnonzero(att)[first_pos]
            out["time_first_unproductive_persistence"] = float(arr.active_clock[event_index])
    return out


def idle_features(arr: EventArrays, unit_mean_table: np.ndarray) -> dict[str, float]:
    units = arr.attempt_units
    durs = arr.attempt_durations
    baseline = unit_mean_table[units] if len(units) else np.zeros(0)
    return {
        "num_idle_in_problem": float(np.count_nonzero(durs > baseline)),
        "num_twice_avg_time_in_problem": float(np.count_nonzero(durs > 2.0 * baseline)),
    }


def assemble(static: Mapping[str, float], idle: Mapping[str, float]) -> dict[str, float]:
    merged = {**static, **idle}
    return {name: merged[name] for name in EXPERT_FEATURES}


def extract_expert_features(
    traj: Trajectory, stats: PopulationTimeStats, horizon_s: float
) -> dict[str, float]:
    """The sixteen expert features of one (already truncated) trajectory.

    ``horizon_s`` is the sentinel for ``time_first_unproductive_persistence``
    when the student never hits five consecutive failures.
    """
    vocab: dict[str, int] = {}
    arr = EventArrays.from_events(traj.events, vocab)
    return assemble(static_features(arr, horizon_s), idle_features(arr, stats.lookup(vocab)))


@dataclass
class FeatureTable:
    """Rows of named features, one row per student id."""

    student_ids: list[str]
    names: list[str]
    values: np.ndarray = field(repr=False)

    def columns(self, names: Sequence[str]) -> np.ndarray:
        index = [self.names.index(n) for n in names]
        return self.values[:, index]

    def rows(self, ids: Sequence[str]) -> "FeatureTable":
        pos = {sid: i for i, sid in enumerate(self.student_ids)}
        idx = [pos[s] for s in ids]
        return FeatureTable(list(ids), list(self.names), self.values[idx])
