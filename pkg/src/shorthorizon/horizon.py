"""Cumulative usage clocks and horizon truncation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .ingest import Trajectory, sessionize


class ClockMode(str, Enum):
    SESSION_WALL_CLOCK = "session_wall_clock"
    ACTIVE_TIME = "active_time"


FULL = "full"


@dataclass(frozen=True)
class HorizonSpec:
    """A usage budget in hours, or ``FULL`` for the entire log."""

    hours: float | str
    clock_mode: ClockMode = ClockMode.SESSION_WALL_CLOCK

    def __post_init__(self) -> None:
        if self.hours == FULL:
            return
        if isinstance(self.hours, str) or not self.hours > 0:
            raise ValueError(f"horizon hours must be positive or 'full', got {self.hours!r}")

    @property
    def is_full(self) -> bool:
        return self.hours == FULL

    @property
    def seconds(self) -> float:
        if self.is_full:
            return float("inf")
        return float(self.hours) * 3600.0

    @property
    def label(self) -> str:
        return FULL if self.is_full else f"{float(self.hours):g}h"

    @classmethod
    def parse(cls, token: float | str, clock_mode: ClockMode | str = ClockMode.SESSION_WALL_CLOCK) -> "HorizonSpec":
        mode = ClockMode(clock_mode)
        if isinstance(token, str):
            text = token.strip().lower()
            if text in ("full", "h"):
                return cls(FULL, mode)
            token = float(text.rstrip("h"))
        return cls(float(token), mode)


@dataclass(frozen=True)
class ClockedTrajectory:
    trajectory: Trajectory
    cumulative_usage_s: np.ndarray

    def __post_init__(self) -> None:
        if len(self.cumulative_usage_s) != len(self.trajectory.events):
            raise ValueError("usage annotation length differs from event count")

    @property
    def total_usage_s(self) -> float:
        return float(self.cumulative_usage_s[-1]) if len(self.cumulative_usage_s) else 0.0


def build_usage_clock(traj: Trajectory, mode: ClockMode | str) -> ClockedTrajectory:
    """Annotate every event with the usage accrued at its completion.

    ``active_time`` sums event durations. ``session_wall_clock`` counts the
    time from each session's first timestamp to the event's completion and
    carries a running total across sessions, so gaps between sessions add
    nothing. Within a session the clock never runs backwards even when an
    event finishes after its successor starts.
    """
    mode = ClockMode(mode)
    n = len(traj.events)
    if n == 0:
        return ClockedTrajectory(traj, np.zeros(0))
    if mode is ClockMode.ACTIVE_TIME:
        durations = np.fromiter((e.duration_s for e in traj.events), dtype=float, count=n)
        return ClockedTrajectory(traj, np.cumsum(durations))

    usage = np.empty(n)
    carried = 0.0
    i = 0
    for span in sessionize(traj):
        elapsed = 0.0
        prev_ts = span.start
        for event in span.events:
            ts = event.epoch
            if ts < prev_ts:
                raise ValueError(
                    f"timestamps decrease within a session for student {traj.student_id}"
                )
            prev_ts = ts
            # offset first: adding a small duration to a ~1e9 epoch drops its low bits
            elapsed = max(elapsed, (ts - span.start) + event.duration_s)
            usage[i] = carried + elapsed
            i += 1
        carried += elapsed
    return ClockedTrajectory(traj, usage)


def truncate_to_horizon(ct: ClockedTrajectory, spec: HorizonSpec) -> Trajectory:
    """Longest prefix whose completion-time usage stays within the budget (inclusive)."""
    if spec.is_full:
        return Trajectory(ct.trajectory.student_id, list(ct.trajectory.events))
    # usage is non-decreasing, so the prefix ends at the first event over budget
    cut = int(np.searchsorted(ct.cumulative_usage_s, spec.seconds, side="right"))
    return Trajectory(ct.trajectory.student_id, list(ct.trajectory.events[:cut]))


def truncation_length(ct: ClockedTrajectory, spec: HorizonSpec) -> int:
    if spec.is_full:
        return len(ct.cumulative_usage_s)
    return int(np.searchsorted(ct.cumulative_usage_s, spec.seconds, side="right"))
