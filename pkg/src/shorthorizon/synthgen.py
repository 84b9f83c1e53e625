"""Seeded synthetic cohorts in the ingest file formats.

Each student has a latent ability. Attempts on a unit succeed with probability
``logistic(ability - difficulty)`` and take a log-normal time that shrinks
with ability; a student keeps attempting a unit until success or until an
ability-dependent give-up cap. The post-test is ``logistic(ability)`` plus
Gaussian noise, clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .ingest import EventRecord, OutcomeRecord, Trajectory, serialize_event_log, write_outcome_table

EPOCH0 = datetime(2022, 9, 5, tzinfo=timezone.utc).timestamp()
DAY_S = 86400.0


@dataclass(frozen=True)
class CohortConfig:
    n_students: int = 500
    n_units: int = 60
    sessions_min: int = 4
    sessions_max: int = 8
    session_minutes_mean: float = 45.0
    session_minutes_sd: float = 10.0
    ability_mean: float = 0.0
    ability_sd: float = 1.0
    difficulty_spread: float = 1.0
    duration_median_s: float = 20.0
    duration_sigma: float = 0.7
    duration_ability_shift: float = 0.3
    duration_difficulty_shift: float = 0.2
    gap_mean_s: float = 5.0
    give_up_base: float = 6.0
    give_up_slope: float = 2.0
    give_up_max: int = 30
    posttest_noise: float = 0.1
    pretest_noise: float = 0.1
    level_cuts: tuple[float, ...] = (0.3, 0.45, 0.6, 0.75)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_students < 1 or self.n_units < 1:
            raise ValueError("need at least one student and one unit")
        if not 1 <= self.sessions_min <= self.sessions_max:
            raise ValueError("session count range is empty")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        if self.posttest_noise < 0 or self.pretest_noise < 0:
            raise ValueError("noise scales must be non-negative")
        if list(self.level_cuts) != sorted(self.level_cuts) or len(self.level_cuts) != 4:
            raise ValueError("level_cuts must be four increasing scores")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CohortConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic settings: {sorted(unknown)}")
        d = dict(d)
        if "level_cuts" in d:
            d["level_cuts"] = tuple(d["level_cuts"])
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["level_cuts"] = list(self.level_cuts)
        return d


def _logistic(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def unit_difficulties(config: CohortConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, 0xD1FF])
    return rng.normal(0.0, config.difficulty_spread, size=config.n_units)


def achievement_level(score: float, cuts) -> int:
    return 1 + sum(score >= c for c in cuts)


def simulate_student(config: CohortConfig, index: int, difficulty: np.ndarray):
    """(ability, events, outcome) for one student; independent of every other index."""
    rng = np.random.default_rng([config.seed, index])
    sid = f"s{index:04d}"
    ability = float(rng.normal(config.ability_mean, config.ability_sd))
    cap = int(np.clip(round(config.give_up_base - config.give_up_slope * ability), 2, config.give_up_max))
    n_sessions = int(rng.integers(config.sessions_min, config.sessions_max + 1))

    events: list[EventRecord] = []
    unit: int | None = None
    previous = -1
    attempts = 0
    for k in range(n_sessions):
        start = EPOCH0 + k * DAY_S + 9 * 3600 + float(rng.uniform(0, 4 * 3600))
        minutes = max(5.0, float(rng.normal(config.session_minutes_mean, config.session_minutes_sd)))
        end = start + minutes * 60.0
        session = f"{sid}-{k + 1}"
        t = start
        while t < end:
            if unit is None:
                if previous < 0 or config.n_units == 1:
                    unit = int(rng.integers(config.n_units))
                else:
                    # never repeat the previous unit, so runs stay one problem each
                    unit = int(rng.integers(config.n_units - 1))
                    unit += unit >= previous
                previous = unit
                attempts = 0
            d = difficulty[unit]
            mu = (math.log(config.duration_median_s) - config.duration_ability_shift * ability
                  + config.duration_difficulty_shift * d)
            dur = round(float(rng.lognormal(mu, config.duration_sigma)), 3)
            ok = bool(rng.random() < _logistic(ability - d))
            events.append(_event(sid, t, session, unit, "attempt", "success" if ok else "fail", dur))
            t += dur
            attempts += 1
            if ok or attempts >= cap:
                events.append(_event(sid, t, session, unit, "complete", "success" if ok else "fail", 0.0))
                unit = None
            t += 1.0 + float(rng.exponential(config.gap_mean_s))

    post = min(1.0, max(0.0, _logistic(ability) + float(rng.normal(0.0, config.posttest_noise))))
    pre = post + float(rng.normal(0.0, config.pretest_noise))
    outcome = OutcomeRecord(sid, posttest=post, pretest=pre,
                            achievement_level=achievement_level(post, config.level_cuts))
    return ability, events, outcome


def _event(sid, t, session, unit, kind, outcome, dur) -> EventRecord:
    # timestamps are whole seconds; the next attempt starts >= 1 s after the
    # previous one ends, so truncation never reorders events
    ts = datetime.fromtimestamp(math.floor(t), tz=timezone.utc)
    return EventRecord(sid, ts, f"u{unit:03d}", kind, outcome, dur, session)


def simulate_cohort(config: CohortConfig):
    """In-memory cohort: (trajectories, outcomes by id, abilities by id)."""
    difficulty = unit_difficulties(config)
    trajectories, outcomes, abilities = [], {}, {}
    for i in range(config.n_students):
        ability, events, outcome = simulate_student(config, i, difficulty)
        trajectories.append(Trajectory(outcome.student_id, events))
        outcomes[outcome.student_id] = outcome
        abilities[outcome.student_id] = ability
    return trajectories, outcomes, abilities


def generate_cohort(config: CohortConfig, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``events.jsonl`` and ``outcomes.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trajectories, outcomes, _ = simulate_cohort(config)
    events_path, outcomes_path = out / "events.jsonl", out / "outcomes.csv"
    with open(events_path, "w", encoding="utf-8", newline="\n") as fh:
        serialize_event_log(trajectories, fh)
    with open(outcomes_path, "w", encoding="utf-8", newline="\n") as fh:
        write_outcome_table(outcomes.values(), fh)
    return events_path, outcomes_path
