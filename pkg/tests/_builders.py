"""Small fixture builders shared by the test modules."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

from shorthorizon.ingest import EventRecord, Trajectory

T0 = datetime(2023, 3, 1, 9, 0, tzinfo=timezone.utc)
OUTCOME = {"S": "success", "F": "fail", "N": "none"}

# (criterion, passed, detail) rows printed by the acceptance summary hook
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE.append((criterion, bool(passed), detail))
    return bool(passed)


def event(unit: str, outcome: str = "F", dur: float = 1.0, at: float = 0.0, *, kind: str = "attempt",
          session: str | None = None, sid: str = "s1") -> EventRecord:
    return EventRecord(sid, T0 + timedelta(seconds=at), unit, kind, OUTCOME.get(outcome, outcome), dur, session)


def trajectory(steps, sid: str = "s1", gap: float = 1.0) -> Trajectory:
    """Back-to-back events from ``(unit, outcome, dur[, kind])`` tuples."""
    events, t = [], 0.0
    for step in steps:
        unit, outcome, dur = step[:3]
        kind = step[3] if len(step) > 3 else "attempt"
        events.append(event(unit, outcome, dur, t, kind=kind, sid=sid))
        t += dur + gap
    return Trajectory(sid, events)


def attempts(unit: str, outcomes: str, dur: float = 1.0):
    return [(unit, o, dur) for o in outcomes]
