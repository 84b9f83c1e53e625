"""Event-log and outcome-table ingestion.

The event file is JSON Lines with one interaction per line; the outcome file
is a CSV with ``student_id,pretest,posttest,achievement_level``. Source logs
with other field names are handled by a field-name mapping rather than
per-vendor parsers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterable, Mapping

logger = logging.getLogger(__name__)

EVENT_FIELDS = (
    "student_id",
    "timestamp",
    "session_id",
    "unit_id",
    "event_type",
    "outcome",
    "duration_s",
)
REQUIRED_EVENT_FIELDS = tuple(f for f in EVENT_FIELDS if f != "session_id")
EVENT_TYPES = frozenset({"attempt", "complete"})
OUTCOMES = frozenset({"success", "fail", "none"})
OUTCOME_COLUMNS = ("student_id", "pretest", "posttest", "achievement_level")

MAX_REJECT_FRACTION = 0.10
# The reject-fraction gate only fires once a file has this many lines.
MIN_LINES_FOR_REJECT_GATE = 20


class IngestError(RuntimeError):
    """Fatal ingestion failure (unreadable input, too many rejects, no rows)."""


@dataclass(frozen=True, slots=True)
class EventRecord:
    student_id: str
    timestamp: datetime
    unit_id: str
    event_type: str
    outcome: str
    duration_s: float
    session_id: str | None = None

    def __post_init__(self) -> None:
        if not (self.duration_s >= 0 and math.isfinite(self.duration_s)):
            raise ValueError(f"duration_s must be finite and non-negative, got {self.duration_s!r}")
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event_type {self.event_type!r}")
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.event_type == "complete" and self.outcome == "none":
            raise ValueError("complete events need a success/fail outcome")

    @property
    def epoch(self) -> float:
        return self.timestamp.timestamp()

    def to_json(self) -> dict:
        return {
            "student_id": self.student_id,
            "timestamp": format_timestamp(self.timestamp),
            "session_id": self.session_id,
            "unit_id": self.unit_id,
            "event_type": self.event_type,
            "outcome": self.outcome,
            "duration_s": self.duration_s,
        }


@dataclass(frozen=True, slots=True)
class OutcomeRecord:
    student_id: str
    posttest: float
    pretest: float | None = None
    achievement_level: int | None = None

    def __post_init__(self) -> None:
        if self.achievement_level is not None and not 1 <= self.achievement_level <= 5:
            raise ValueError(f"achievement_level out of range: {self.achievement_level}")


@dataclass(slots=True)
class Trajectory:
    """Chronologically sorted events of one student."""

    student_id: str
    events: list[EventRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)


@dataclass(slots=True)
class ParseReport:
    accepted: int = 0
    rejected: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.accepted + self.rejected

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


@dataclass(slots=True)
class OutcomeReport:
    accepted: int = 0
    rejected: int = 0
    duplicates: int = 0


def parse_timestamp(value: str) -> datetime:
    """ISO-8601 to an aware UTC datetime truncated to whole seconds.

    Naive timestamps are taken as UTC; a trailing ``Z`` is accepted.
    """
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _event_from_mapping(raw: Mapping, schema: Mapping[str, str]) -> EventRecord:
    values = {}
    for name in EVENT_FIELDS:
        source = schema.get(name, name)
        if source in raw and raw[source] is not None:
            values[name] = raw[source]
        elif name in REQUIRED_EVENT_FIELDS:
            raise KeyError(name)
    session = values.get("session_id")
    duration = values["duration_s"]
    if isinstance(duration, bool) or not isinstance(duration, (int, float, str)):
        raise ValueError("duration_s must be numeric")
    return EventRecord(
        student_id=str(values["student_id"]),
        timestamp=parse_timestamp(str(values["timestamp"])),
        session_id=None if session in (None, "") else str(session),
        unit_id=str(values["unit_id"]),
        event_type=str(values["event_type"]),
        outcome=str(values["outcome"]),
        duration_s=float(duration),
    )


def parse_event_log(
    source: str | Path | IO[str] | Iterable[str],
    schema: Mapping[str, str] | None = None,
    max_reject_fraction: float = MAX_REJECT_FRACTION,
    min_lines_for_gate: int = MIN_LINES_FOR_REJECT_GATE,
) -> tuple[list[Trajectory], ParseReport]:
    """Parse a JSON Lines event stream into per-student trajectories.

    Args:
        source: a path, an open text stream, or an iterable of lines.
        schema: maps EventRecord field names to source field names; absent
            entries map to themselves.
        max_reject_fraction: rejecting more than this share of non-blank lines
            is fatal, for inputs of at least ``min_lines_for_gate`` lines.

    Returns:
        Trajectories ordered by first appearance of the student, plus the
        accept/reject tally. Events are sorted by timestamp; equal timestamps
        keep input order.
    """
    schema = dict(schema or {})
    if isinstance(source, (str, Path)):
        try:
            handle: Iterable[str] = open(source, encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read event log {source}: {exc}") from exc
        close = True
    else:
        handle, close = source, False

    report = ParseReport()
    grouped: dict[str, list[EventRecord]] = defaultdict(list)
    try:
        for line in handle:
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                if not isinstance(raw, dict):
                    raise ValueError("line is not a JSON object")
                event = _event_from_mapping(raw, schema)
            except KeyError as exc:
                report.reject(f"missing:{exc.args[0]}")
                continue
            except (ValueError, TypeError) as exc:
                report.reject(type(exc).__name__)
                logger.debug("rejected line: %s", exc)
                continue
            grouped[event.student_id].append(event)
            report.accepted += 1
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"event log unreadable: {exc}") from exc
    finally:
        if close:
            handle.close()  # type: ignore[union-attr]

    if (
        report.total >= max(min_lines_for_gate, 1)
        and report.rejected / report.total > max_reject_fraction
    ):
        raise IngestError(
            f"{report.rejected} of {report.total} event lines rejected "
            f"(> {max_reject_fraction:.0%}): {report.reasons}"
        )
    trajectories = [
        # sorted() is stable, so ties keep input order
        Trajectory(sid, sorted(events, key=lambda e: e.timestamp))
        for sid, events in grouped.items()
    ]
    return trajectories, report


def serialize_event_log(trajectories: Iterable[Trajectory], out: IO[str]) -> int:
    n = 0
    for traj in trajectories:
        for event in traj.events:
            out.write(json.dumps(event.to_json()) + "\n")
            n += 1
    return n


def _optional_float(cell: str | None) -> float | None:
    if cell is None or cell.strip() == "":
        return None
    return float(cell)


def parse_outcome_table(
    source: str | Path | IO[str],
) -> tuple[dict[str, OutcomeRecord], OutcomeReport]:
    """Read the outcome CSV; duplicates resolve last-wins and are tallied."""
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read outcome table {source}: {exc}") from exc
        stream: IO[str] = io.StringIO(text)
    else:
        stream = source

    reader = csv.DictReader(stream)
    if reader.fieldnames is None or "posttest" not in reader.fieldnames:
        raise IngestError("outcome table needs a header with a posttest column")

    records: dict[str, OutcomeRecord] = {}
    report = OutcomeReport()
    for row in reader:
        try:
            sid = (row.get("student_id") or "").strip()
            post = _optional_float(row.get("posttest"))
            if not sid or post is None:
                raise ValueError("student_id and posttest are required")
            level = _optional_float(row.get("achievement_level"))
            if level is not None and level != int(level):
                raise ValueError("achievement_level must be an integer")
            record = OutcomeRecord(
                student_id=sid,
                posttest=post,
                pretest=_optional_float(row.get("pretest")),
                achievement_level=None if level is None else int(level),
            )
        except (ValueError, TypeError) as exc:
            report.rejected += 1
            logger.debug("rejected outcome row %r: %s", row, exc)
            continue
        if sid in records:
            report.duplicates += 1
            logger.warning("duplicate outcome row for %s; keeping the last", sid)
        records[sid] = record
        report.accepted += 1

    if not records:
        raise IngestError("outcome table has no valid rows")
    return records, report


def write_outcome_table(records: Iterable[OutcomeRecord], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(OUTCOME_COLUMNS)
    for r in records:
        writer.writerow([
            r.student_id,
            "" if r.pretest is None else repr(r.pretest),
            repr(r.posttest),
            "" if r.achievement_level is None else r.achievement_level,
        ])


@dataclass(frozen=True, slots=True)
class SessionSpan:
    session_id: str | None
    start: float
    end: float
    events: tuple[EventRecord, ...]

    @property
    def length_s(self) -> float:
        last = self.events[-1]
        return (last.epoch - self.start) + last.duration_s


def sessionize(traj: Trajectory) -> list[SessionSpan]:
    """Group consecutive events with equal session ids into spans.

    Events without a session id each form their own span, which reduces
    session wall-clock time to active time. A span runs from its first
    timestamp to the last event's timestamp plus duration.
    """
    spans: list[SessionSpan] = []
    current: list[EventRecord] = []

    def close() -> None:
        if current:
            last = current[-1]
            spans.append(SessionSpan(
                current[0].session_id,
                current[0].epoch,
                last.epoch + last.duration_s,
                tuple(current),
            ))

    for event in traj.events:
        if current and (event.session_id is None or event.session_id != current[-1].session_id):
            close()
            current = []
        current.append(event)
    close()
    return spans
