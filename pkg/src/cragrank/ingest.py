"""Ascent-log parsing and the cleaning pipeline that produces model-ready data.

The raw input is a CSV of individual ascents
(``climber_id,route_id,tick_type,date,grade_label,grade_system``).  Cleaning
classifies tick types into successful/unsuccessful/ambiguous, keeps only
Ewbank-graded ascents, assigns each route the median grade of its ascents,
quantizes dates to week indices, and then repeatedly drops routes with fewer
than two ascents and climbers with no failed ascent until both filters are
stable.  Every dropped row is tallied in the provenance counters.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .errors import EmptyDatasetError, ParseError
from .model import AscentOutcome

WEEK_EPOCH = date(1970, 1, 1)

RAW_COLUMNS = ("climber_id", "route_id", "tick_type", "date", "grade_label", "grade_system")

# Per-row drop counters, in reporting order.  rows_read = rows_kept + drops.
_DROP_KEYS = (
    "dropped_ambiguous_tick",
    "dropped_non_ewbank",
    "dropped_invalid_grade",
    "dropped_route_few_ascents",
    "dropped_climber_no_failure",
)


class TickClass(Enum):
    SUCCESSFUL = "successful"
    UNSUCCESSFUL = "unsuccessful"
    AMBIGUOUS = "ambiguous"


#: Default tick-type classification (keys lowercase).  Unknown ticks are
#: ambiguous and excluded, so top-roping with rests, unlabeled laps, etc.
#: never count as clean ascents.
DEFAULT_TICK_MAPPING: dict[str, TickClass] = {
    "onsight": TickClass.SUCCESSFUL,
    "flash": TickClass.SUCCESSFUL,
    "redpoint": TickClass.SUCCESSFUL,
    "pinkpoint": TickClass.SUCCESSFUL,
    "clean": TickClass.SUCCESSFUL,
    "send": TickClass.SUCCESSFUL,
    "top rope clean": TickClass.SUCCESSFUL,
    "dog": TickClass.UNSUCCESSFUL,
    "hang dog": TickClass.UNSUCCESSFUL,
    "attempt": TickClass.UNSUCCESSFUL,
    "retreat": TickClass.UNSUCCESSFUL,
    "working": TickClass.UNSUCCESSFUL,
    "top rope with rest": TickClass.UNSUCCESSFUL,
}


@dataclass(frozen=True)
class RawAscentRow:
    """One data line of a raw ascent log, fields verbatim (date parsed)."""

    climber_id: str
    route_id: str
    tick_type: str
    date: date
    grade_label: str
    grade_system: str


@dataclass(frozen=True)
class AscentRecord:
    """One cleaned ascent: indexed climber and route, week, binary outcome."""

    climber: int
    route: int
    week: int
    outcome: AscentOutcome


@dataclass(frozen=True)
class RouteInfo:
    route_id: str
    grade: int


@dataclass
class CleanDataset:
    """Preprocessed ascents plus the entity tables they index into.

    ``routes[i].route_id`` / ``climbers[j]`` give the external ids for route
    index ``i`` and climber index ``j``; both tables are sorted by id.
    ``provenance`` counts rows read, kept, and dropped per filter rule.
    """

    ascents: list[AscentRecord]
    routes: list[RouteInfo]
    climbers: list[str]
    provenance: dict[str, int]

    def check_invariants(self) -> None:
        """Raise ValueError if the cleaned-data guarantees do not hold."""
        route_counts = Counter(a.route for a in self.ascents)
        climber_failures = {
            a.climber for a in self.ascents if a.outcome is AscentOutcome.FAILURE
        }
        climbers_seen = {a.climber for a in self.ascents}
        for a in self.ascents:
            if not (0 <= a.route < len(self.routes)):
                raise ValueError(f"route index {a.route} out of range")
            if not (0 <= a.climber < len(self.climbers)):
                raise ValueError(f"climber index {a.climber} out of range")
        for idx in range(len(self.routes)):
            if route_counts.get(idx, 0) < 2:
                raise ValueError(f"route {idx} has fewer than 2 ascents")
        for idx in range(len(self.climbers)):
            if idx not in climbers_seen:
                raise ValueError(f"climber {idx} has no ascents")
            if idx not in climber_failures:
                raise ValueError(f"climber {idx} has no failed ascent")


def classify_tick(tick_type: str, mapping: Mapping[str, TickClass] | None = None) -> TickClass:
    """Classify a tick string, case-insensitively; unknown ticks are ambiguous."""
    table = DEFAULT_TICK_MAPPING if mapping is None else mapping
    return table.get(tick_type.strip().lower(), TickClass.AMBIGUOUS)


def load_tick_mapping(path: str | Path) -> dict[str, TickClass]:
    """Read a ``tick_string,class`` mapping file (class is a TickClass name)."""
    mapping: dict[str, TickClass] = {}
    classes = {c.value: c for c in TickClass}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tick, sep, cls = line.rpartition(",")
            if not sep:
                raise ParseError(f"line {lineno}: expected 'tick_string,class', got {line!r}")
            cls = cls.strip().lower()
            if cls not in classes:
                raise ParseError(f"line {lineno}: unknown tick class {cls!r}")
            mapping[tick.strip().lower()] = classes[cls]
    return mapping


def quantize_week(day: date) -> int:
    """Week index of a date: floor of days since 1970-01-01 divided by 7."""
    return (day.toordinal() - WEEK_EPOCH.toordinal()) // 7


def week_start_date(week: int) -> date:
    """First day of a week index (inverse of :func:`quantize_week`)."""
    return WEEK_EPOCH + timedelta(weeks=week)


def median_grade(grades: Sequence[int]) -> int:
    """Median of a non-empty grade list; even lengths take the lower middle."""
    if len(grades) == 0:
        raise ValueError("median_grade of an empty sequence")
    return sorted(grades)[(len(grades) - 1) // 2]


def parse_ascent_log(source: str | Path | IO) -> list[RawAscentRow]:
    """Parse a raw ascent-log CSV into rows, reporting bad lines by number."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return _parse_stream(fh)
    if isinstance(source, io.TextIOBase):
        return _parse_stream(source)
    return _parse_stream(io.TextIOWrapper(source, encoding="utf-8", newline=""))


def _parse_stream(stream: IO[str]) -> list[RawAscentRow]:
    reader = csv.DictReader(stream)
    header = reader.fieldnames
    if header is None:
        raise ParseError("empty input: no header line")
    missing = [c for c in RAW_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"missing required columns: {', '.join(missing)}")
    rows: list[RawAscentRow] = []
    for rec in reader:
        lineno = reader.line_num
        if any(rec.get(c) is None for c in RAW_COLUMNS):
            raise ParseError(f"line {lineno}: too few fields")
        try:
            day = date.fromisoformat(rec["date"].strip())
        except ValueError:
            raise ParseError(f"line {lineno}: invalid date {rec['date']!r}") from None
        rows.append(
            RawAscentRow(
                climber_id=rec["climber_id"],
                route_id=rec["route_id"],
                tick_type=rec["tick_type"],
                date=day,
                grade_label=rec["grade_label"],
                grade_system=rec["grade_system"],
            )
        )
    return rows


def assemble_clean_dataset(
    records: Iterable[tuple[str, str, int, bool]],
    route_grades: Mapping[str, int],
    provenance: dict[str, int] | None = None,
) -> CleanDataset:
    """Run the minimum-activity filters and index the survivors.

    ``records`` are ``(climber_id, route_id, week, success)`` tuples.  Routes
    with fewer than two ascents and climbers with no failed ascent are dropped
    alternately until neither rule removes anything; dropping a route can
    strip a climber's last failure and vice versa, hence the fixpoint loop.
    Entity indices are assigned in sorted-id order.
    """
    rows = list(records)
    prov = provenance if provenance is not None else {"rows_read": len(rows)}
    for key in _DROP_KEYS:
        prov.setdefault(key, 0)

    while True:
        before = len(rows)
        route_counts = Counter(r[1] for r in rows)
        rows = [r for r in rows if route_counts[r[1]] >= 2]
        prov["dropped_route_few_ascents"] += before - len(rows)

        after_routes = len(rows)
        climbers_with_failure = {r[0] for r in rows if not r[3]}
        rows = [r for r in rows if r[0] in climbers_with_failure]
        prov["dropped_climber_no_failure"] += after_routes - len(rows)
        if len(rows) == before:  # a full round removed nothing: fixpoint
            break

    prov["rows_kept"] = len(rows)
    if not rows:
        raise EmptyDatasetError("no ascents survived preprocessing", prov)

    climbers = sorted({r[0] for r in rows})
    route_ids = sorted({r[1] for r in rows})
    climber_index = {cid: i for i, cid in enumerate(climbers)}
    route_index = {rid: i for i, rid in enumerate(route_ids)}
    ascents = [
        AscentRecord(
            climber=climber_index[cid],
            route=route_index[rid],
            week=week,
            outcome=AscentOutcome.SUCCESS if success else AscentOutcome.FAILURE,
        )
        for cid, rid, week, success in rows
    ]
    routes = [RouteInfo(rid, route_grades[rid]) for rid in route_ids]
    return CleanDataset(ascents=ascents, routes=routes, climbers=climbers, provenance=prov)


def preprocess(
    rows: Sequence[RawAscentRow],
    mapping: Mapping[str, TickClass] | None = None,
) -> CleanDataset:
    """Clean raw ascent rows into a CleanDataset.

    Stages: classify ticks and drop ambiguous ones; keep only Ewbank-graded
    rows with an integer grade label; compute each route's median grade;
    quantize dates to weeks; then apply the minimum-activity fixpoint
    filters.  Raises EmptyDatasetError if nothing survives.
    """
    prov = {"rows_read": len(rows)}
    for key in _DROP_KEYS:
        prov[key] = 0

    graded: list[tuple[str, str, int, bool, int]] = []
    for row in rows:
        cls = classify_tick(row.tick_type, mapping)
        if cls is TickClass.AMBIGUOUS:
            prov["dropped_ambiguous_tick"] += 1
            continue
        if row.grade_system.strip().lower() != "ewbank":
            prov["dropped_non_ewbank"] += 1
            continue
        try:
            grade = int(row.grade_label.strip())
        except ValueError:
            grade = -1
        if grade <= 0:
            prov["dropped_invalid_grade"] += 1
            continue
        graded.append(
            (row.climber_id, row.route_id, quantize_week(row.date), cls is TickClass.SUCCESSFUL, grade)
        )

    grades_by_route: dict[str, list[int]] = {}
    for _, rid, _, _, grade in graded:
        grades_by_route.setdefault(rid, []).append(grade)
    route_grades = {rid: median_grade(gs) for rid, gs in grades_by_route.items()}

    records = [(cid, rid, week, success) for cid, rid, week, success, _ in graded]
    return assemble_clean_dataset(records, route_grades, prov)


# ---------------------------------------------------------------------------
# Serialization


def write_clean_dataset(dataset: CleanDataset, out_dir: str | Path) -> None:
    """Write ascents.csv, routes.csv, climbers.csv and provenance.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ascents.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["climber_idx", "route_idx", "week", "outcome"])
        for a in dataset.ascents:
            writer.writerow([a.climber, a.route, a.week, a.outcome.value])
    with open(out / "routes.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["route_idx", "route_id", "grade"])
        for idx, info in enumerate(dataset.routes):
            writer.writerow([idx, info.route_id, info.grade])
    with open(out / "climbers.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["climber_idx", "climber_id"])
        for idx, cid in enumerate(dataset.climbers):
            writer.writerow([idx, cid])
    with open(out / "provenance.txt", "w", encoding="utf-8") as fh:
        for key in ("rows_read", *_DROP_KEYS, "rows_kept"):
            fh.write(f"{key}={dataset.provenance.get(key, 0)}\n")


def read_clean_dataset(in_dir: str | Path) -> CleanDataset:
    """Read a dataset directory written by :func:`write_clean_dataset`."""
    src = Path(in_dir)
    routes: list[RouteInfo] = []
    for rec, lineno in _read_csv(src / "routes.csv", ("route_idx", "route_id", "grade")):
        idx = _parse_int(rec["route_idx"], "route_idx", lineno)
        if idx != len(routes):
            raise ParseError(f"routes.csv line {lineno}: route_idx out of order")
        routes.append(RouteInfo(rec["route_id"], _parse_int(rec["grade"], "grade", lineno)))
    climbers: list[str] = []
    for rec, lineno in _read_csv(src / "climbers.csv", ("climber_idx", "climber_id")):
        idx = _parse_int(rec["climber_idx"], "climber_idx", lineno)
        if idx != len(climbers):
            raise ParseError(f"climbers.csv line {lineno}: climber_idx out of order")
        climbers.append(rec["climber_id"])
    ascents: list[AscentRecord] = []
    for rec, lineno in _read_csv(src / "ascents.csv", ("climber_idx", "route_idx", "week", "outcome")):
        outcome = rec["outcome"].strip()
        if outcome not in ("0", "1"):
            raise ParseError(f"ascents.csv line {lineno}: outcome must be 0 or 1")
        ascents.append(
            AscentRecord(
                climber=_parse_int(rec["climber_idx"], "climber_idx", lineno),
                route=_parse_int(rec["route_idx"], "route_idx", lineno),
                week=_parse_int(rec["week"], "week", lineno),
                outcome=AscentOutcome(int(outcome)),
            )
        )
    prov_path = src / "provenance.txt"
    if prov_path.exists():
        provenance = {}
        for line in prov_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                provenance[key.strip()] = int(value)
    else:
        provenance = {"rows_read": len(ascents), "rows_kept": len(ascents)}
    return CleanDataset(ascents=ascents, routes=routes, climbers=climbers, provenance=provenance)


def _read_csv(path: Path, columns: tuple[str, ...]):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{path.name}: empty file")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"{path.name}: missing required columns: {', '.join(missing)}")
        for rec in reader:
            if any(rec.get(c) is None for c in columns):
                raise ParseError(f"{path.name} line {reader.line_num}: too few fields")
            yield rec, reader.line_num


def _parse_int(text: str, field: str, lineno: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ParseError(f"line {lineno}: {field} must be an integer, got {text!r}") from None


def dataset_to_raw_rows(dataset: CleanDataset) -> list[RawAscentRow]:
    """Express a cleaned dataset back in raw-log form (for round-tripping)."""
    rows = []
    for a in dataset.ascents:
        rows.append(
            RawAscentRow(
                climber_id=dataset.climbers[a.climber],
                route_id=dataset.routes[a.route].route_id,
                tick_type="redpoint" if a.outcome is AscentOutcome.SUCCESS else "attempt",
                date=week_start_date(a.week),
                grade_label=str(dataset.routes[a.route].grade),
                grade_system="ewbank",
            )
        )
    return rows


def write_raw_ascent_log(rows: Iterable[RawAscentRow], path: str | Path) -> None:
    """Write raw ascent rows as an ingest-compatible CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAW_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.climber_id, row.route_id, row.tick_type, row.date.isoformat(),
                 row.grade_label, row.grade_system]
            )
