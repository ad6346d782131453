"""Outage and weather-station CSV ingestion.

Outage rows that fail validation are never dropped silently: each one becomes a
:class:`Rejection` carrying the file line number and a machine-readable reason,
so cleaning counts can be audited afterwards.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
DEFAULT_MAX_GAP = 201

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_US_PER_MINUTE = 60_000_000

# rejection reasons
MISSING_LOCATION = "missing location"
INVALID_LOCATION = "invalid location"
MALFORMED_TIMESTAMP = "malformed timestamp"
NEGATIVE_DURATION = "negative duration"
INVALID_CUSTOMERS = "invalid customers"
DUPLICATE_ID = "duplicate id"
STALE_WIND = "stale wind"
OUTSIDE_WIND = "outside wind coverage"


class IngestError(ValueError):
    """A whole file could not be ingested (as opposed to a single bad row)."""


@dataclass(frozen=True)
class OutageRecord:
    id: str
    latitude: float
    longitude: float
    start: int
    restore: int
    customers: int
    cause_code: Optional[str] = None

    @property
    def duration(self) -> float:
        """Outage duration in minutes."""
        return self.restore - self.start


@dataclass(frozen=True)
class WindSample:
    time: int
    speed: float


@dataclass(frozen=True, eq=False)
class Station:
    """A weather station with its time-ordered average wind speeds (mph)."""

    id: str
    latitude: float
    longitude: float
    times: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        speeds = np.asarray(self.speeds, dtype=float)
        if times.shape != speeds.shape or times.ndim != 1:
            raise ValueError("times and speeds must be 1-d arrays of equal length")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError(f"station {self.id}: sample times must be strictly increasing")
        if np.any(speeds < 0) or not np.all(np.isfinite(speeds)):
            raise ValueError(f"station {self.id}: wind speeds must be finite and nonnegative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "speeds", speeds)

    @property
    def samples(self) -> list[WindSample]:
        return [WindSample(int(t), float(s)) for t, s in zip(self.times, self.speeds)]

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class Area:
    station: Station
    outages: list[OutageRecord] = field(default_factory=list)


@dataclass(frozen=True)
class Rejection:
    row: int
    reason: str
    record_id: Optional[str] = None


@dataclass(frozen=True)
class OutageSchema:
    """Column names of an outage CSV."""

    id: str = "id"
    latitude: str = "latitude"
    longitude: str = "longitude"
    start: str = "start"
    restore: str = "restore"
    customers: str = "customers"
    cause_code: Optional[str] = "cause_code"

    @classmethod
    def from_mapping(cls, mapping: Optional[dict]) -> "OutageSchema":
        return cls(**(mapping or {}))


@dataclass(frozen=True)
class WindSchema:
    """Column names of a wind CSV.

    ``station``, ``latitude`` and ``longitude`` columns are optional; when the
    file does not carry them the values passed to :func:`parse_wind` are used.
    """

    time: str = "time"
    speed: str = "speed"
    station: Optional[str] = "station"
    latitude: Optional[str] = "latitude"
    longitude: Optional[str] = "longitude"

    @classmethod
    def from_mapping(cls, mapping: Optional[dict]) -> "WindSchema":
        return cls(**(mapping or {}))


# -- timestamps ---------------------------------------------------------------

def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 timestamp into whole minutes since the epoch.

    Seconds are rounded half-up to the minute.  Timestamps without a UTC offset
    are taken as UTC.
    """
    return _round_minute(_raw_time(text))


def format_timestamp(minute: float) -> str:
    if float(minute).is_integer():
        return (_EPOCH + timedelta(minutes=int(minute))).isoformat()
    return (_EPOCH + timedelta(minutes=float(minute))).isoformat()


# -- CSV reading --------------------------------------------------------------

def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header and (line number, cells) pairs; ``#`` lines carry provenance and are skipped."""
    try:
        with open(path, newline="", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    numbered = [
        (i, line) for i, line in enumerate(text.splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not numbered:
        return [], []
    try:
        header = next(csv.reader([numbered[0][1]]))
    except csv.Error as exc:
        raise IngestError(f"{path}: unparsable header: {exc}") from exc
    header = [h.strip() for h in header]
    rows = []
    for lineno, line in numbered[1:]:
        try:
            rows.append((lineno, next(csv.reader([line]))))
        except csv.Error:
            rows.append((lineno, []))
    return header, rows


def _column_index(header: Sequence[str], name: Optional[str], path, required=True):
    if name is None:
        return None
    try:
        return header.index(name)
    except ValueError:
        if required:
            raise IngestError(f"{path}: header has no column {name!r} (found {list(header)})")
        return None


def _cell(cells: Sequence[str], idx: Optional[int]) -> str:
    if idx is None or idx >= len(cells):
        return ""
    return cells[idx].strip()


def parse_outages(path, schema: Optional[OutageSchema] = None, with_rows: bool = False):
    """Read an outage CSV into validated records plus row-level rejections.

    With ``with_rows`` a third item maps each accepted record id to its line number.
    """
    schema = schema or OutageSchema()
    header, rows = _read_rows(path)
    if not header:
        raise IngestError(f"{path}: empty file, no header")
    cols = {
        name: _column_index(header, getattr(schema, name), path)
        for name in ("id", "latitude", "longitude", "start", "restore", "customers")
    }
    cause_idx = _column_index(header, schema.cause_code, path, required=False)

    records: list[OutageRecord] = []
    rejections: list[Rejection] = []
    seen: dict[str, int] = {}
    for lineno, cells in rows:
        rid = _cell(cells, cols["id"]) or None

        def reject(reason):
            rejections.append(Rejection(lineno, reason, rid))

        lat_s, lon_s = _cell(cells, cols["latitude"]), _cell(cells, cols["longitude"])
        if not lat_s or not lon_s:
            reject(MISSING_LOCATION)
            continue
        try:
            lat, lon = float(lat_s), float(lon_s)
        except ValueError:
            reject(INVALID_LOCATION)
            continue
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            reject(INVALID_LOCATION)
            continue
        try:
            start_raw = _raw_time(_cell(cells, cols["start"]))
            restore_raw = _raw_time(_cell(cells, cols["restore"]))
        except ValueError:
            reject(MALFORMED_TIMESTAMP)
            continue
        if restore_raw < start_raw:
            reject(NEGATIVE_DURATION)
            continue
        try:
            customers = int(_cell(cells, cols["customers"]))
        except ValueError:
            reject(INVALID_CUSTOMERS)
            continue
        if customers < 0:
            reject(INVALID_CUSTOMERS)
            continue
        if rid is None:
            rid = f"row{lineno}"
        if rid in seen:
            reject(DUPLICATE_ID)
            continue
        seen[rid] = lineno
        cause = _cell(cells, cause_idx) or None
        records.append(OutageRecord(
            id=rid, latitude=lat, longitude=lon,
            start=_round_minute(start_raw), restore=_round_minute(restore_raw),
            customers=customers, cause_code=cause,
        ))
    if with_rows:
        return records, rejections, seen
    return records, rejections


def _raw_time(text: str) -> int:
    """Microseconds since the epoch (unrounded)."""
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - _EPOCH) // timedelta(microseconds=1)


def _round_minute(us: int) -> int:
    return (us + _US_PER_MINUTE // 2) // _US_PER_MINUTE


def parse_wind(path, schema: Optional[WindSchema] = None, station_id: Optional[str] = None,
               latitude: Optional[float] = None, longitude: Optional[float] = None) -> Station:
    """Read one station's wind CSV.

    Samples are sorted, duplicate minutes collapse to their mean speed and the
    original cadence is kept (no resampling).
    """
    schema = schema or WindSchema()
    header, rows = _read_rows(path)
    if not header:
        raise IngestError(f"{path}: insufficient samples (empty file)")
    t_idx = _column_index(header, schema.time, path)
    v_idx = _column_index(header, schema.speed, path)
    s_idx = _column_index(header, schema.station, path, required=False)
    lat_idx = _column_index(header, schema.latitude, path, required=False)
    lon_idx = _column_index(header, schema.longitude, path, required=False)

    by_minute: dict[int, list[float]] = defaultdict(list)
    bad = 0
    for _, cells in rows:
        try:
            t = parse_timestamp(_cell(cells, t_idx))
            v = float(_cell(cells, v_idx))
        except ValueError:
            bad += 1
            continue
        if not math.isfinite(v) or v < 0:
            bad += 1
            continue
        by_minute[t].append(v)
        if station_id is None and s_idx is not None:
            station_id = _cell(cells, s_idx) or None
        if latitude is None and lat_idx is not None and _cell(cells, lat_idx):
            latitude = float(_cell(cells, lat_idx))
        if longitude is None and lon_idx is not None and _cell(cells, lon_idx):
            longitude = float(_cell(cells, lon_idx))
    if bad:
        log.warning("%s: skipped %d unusable wind rows", path, bad)
    if len(by_minute) < 2:
        raise IngestError(f"{path}: insufficient samples ({len(by_minute)} valid)")
    if latitude is None or longitude is None:
        raise IngestError(f"{path}: station location unknown (no latitude/longitude columns or values)")
    if station_id is None:
        station_id = Path(path).stem
    times = np.array(sorted(by_minute), dtype=np.int64)
    speeds = np.array([float(np.mean(by_minute[t])) for t in times])
    return Station(str(station_id), float(latitude), float(longitude), times, speeds)


# -- writing ------------------------------------------------------------------

def _comment_lines(provenance: Optional[dict]) -> str:
    if not provenance:
        return ""
    return "# " + json.dumps(provenance, sort_keys=True, separators=(",", ":")) + "\n"


def outages_to_csv(records: Iterable[OutageRecord], provenance: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write(_comment_lines(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "latitude", "longitude", "start", "restore", "customers", "cause_code"])
    for r in records:
        w.writerow([r.id, repr(float(r.latitude)), repr(float(r.longitude)),
                    format_timestamp(r.start), format_timestamp(r.restore),
                    r.customers, r.cause_code or ""])
    return buf.getvalue()


def write_outages_csv(path, records: Iterable[OutageRecord], provenance: Optional[dict] = None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(outages_to_csv(records, provenance), encoding="utf-8")


def station_to_csv(station: Station, provenance: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write(_comment_lines(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["station", "latitude", "longitude", "time", "speed"])
    for t, v in zip(station.times, station.speeds):
        w.writerow([station.id, repr(station.latitude), repr(station.longitude),
                    format_timestamp(int(t)), repr(float(v))])
    return buf.getvalue()


def write_station_csv(path, station: Station, provenance: Optional[dict] = None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(station_to_csv(station, provenance), encoding="utf-8")


def rejection_report(rejections: Iterable[Rejection]) -> list[dict]:
    """Group rejections as ``[{reason, count, rows}]`` sorted by reason."""
    grouped: dict[str, list[int]] = defaultdict(list)
    for rej in rejections:
        grouped[rej.reason].append(rej.row)
    return [
        {"reason": reason, "count": len(rows), "rows": sorted(rows)}
        for reason, rows in sorted(grouped.items())
    ]


# -- spatial association ------------------------------------------------------

def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def associate_areas(outages: Sequence[OutageRecord], stations: Sequence[Station]) -> list[Area]:
    """Assign every outage to its nearest station; one :class:`Area` per station.

    Areas come back ordered by station id.  Exact distance ties go to the
    lexicographically smaller station id.
    """
    if not stations:
        raise ValueError("need at least one station")
    ordered = sorted(stations, key=lambda s: s.id)
    if len({s.id for s in ordered}) != len(ordered):
        raise ValueError("station ids must be unique")
    areas = [Area(s, []) for s in ordered]
    if not outages:
        return areas
    lat = np.array([o.latitude for o in outages])[:, None]
    lon = np.array([o.longitude for o in outages])[:, None]
    slat = np.array([s.latitude for s in ordered])[None, :]
    slon = np.array([s.longitude for s in ordered])[None, :]
    # argmin returns the first minimum, i.e. the smallest id among ties
    nearest = np.argmin(haversine_km(lat, lon, slat, slon), axis=1)
    for o, j in zip(outages, nearest):
        areas[j].outages.append(o)
    return areas


def filter_stale_outages(area: Area, max_gap: float = DEFAULT_MAX_GAP
                         ) -> tuple[Area, list[tuple[OutageRecord, str]]]:
    """Drop outages whose start is more than ``max_gap`` minutes from any wind sample.

    Outages starting outside the span of the station's samples are dropped too,
    since wind cannot be interpolated there.
    """
    if max_gap <= 0:
        raise ValueError("max_gap must be positive")
    times = area.station.times
    kept, rejected = [], []
    for o in area.outages:
        i = np.searchsorted(times, o.start)
        gap = min(
            abs(o.start - times[i]) if i < len(times) else math.inf,
            abs(o.start - times[i - 1]) if i > 0 else math.inf,
        )
        if gap > max_gap:
            rejected.append((o, STALE_WIND))
        elif not times[0] <= o.start <= times[-1]:
            rejected.append((o, OUTSIDE_WIND))
        else:
            kept.append(o)
    return Area(area.station, kept), rejected
