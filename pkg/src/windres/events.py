"""Resilience events, performance curves and per-event metrics.

An event is a maximal run of outages whose ``[start, restore]`` intervals chain
together by overlap.  A restore and a new outage in the same minute keep the
event going.  All metric durations are in hours.
"""

from __future__ import annotations

import enum
import math
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .ingest import OutageRecord

DEFAULT_THRESHOLDS = (2, 15)

METRIC_NAMES = (
    "event_size",
    "outage_hours",
    "event_duration",
    "time_to_first_restore",
    "restore_duration",
    "restore_rate",
    "outage_rate",
    "customers_out",
    "customer_hours",
)
RATE_METRICS = ("restore_rate", "outage_rate")


class SizeClass(str, enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


SIZE_CLASSES = (SizeClass.SMALL, SizeClass.MEDIUM, SizeClass.LARGE)


def classify_size(n: int, thresholds=DEFAULT_THRESHOLDS) -> SizeClass:
    small_max, medium_max = thresholds
    if n <= small_max:
        return SizeClass.SMALL
    if n <= medium_max:
        return SizeClass.MEDIUM
    return SizeClass.LARGE


@dataclass(frozen=True)
class ResilienceEvent:
    outages: tuple[OutageRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "outages",
                           tuple(sorted(self.outages, key=lambda o: (o.start, o.restore, o.id))))

    @property
    def n(self) -> int:
        return len(self.outages)

    @property
    def o_sorted(self) -> list:
        return sorted(o.start for o in self.outages)

    @property
    def r_sorted(self) -> list:
        return sorted(o.restore for o in self.outages)

    @property
    def pairing(self) -> list[tuple]:
        return [(o.start, o.restore, o.customers) for o in self.outages]

    @property
    def start(self):
        return self.outages[0].start

    @property
    def end(self):
        return max(o.restore for o in self.outages)

    @property
    def ids(self) -> list[str]:
        return [o.id for o in self.outages]


@dataclass(frozen=True)
class MetricVector:
    event_size: float
    outage_hours: float
    event_duration: float
    time_to_first_restore: float
    restore_duration: float
    restore_rate: Optional[float]
    outage_rate: Optional[float]
    customers_out: float
    customer_hours: float

    def as_array(self) -> np.ndarray:
        return np.array([np.nan if x is None else float(x) for x in astuple(self)])

    @classmethod
    def from_array(cls, arr) -> "MetricVector":
        vals = [None if (isinstance(x, float) and math.isnan(x)) else float(x)
                for x in (float(a) for a in arr)]
        return cls(*vals)

    @classmethod
    def zero(cls) -> "MetricVector":
        return cls(*([0.0] * len(METRIC_NAMES)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def extract_events(outages: Iterable[OutageRecord]) -> list[ResilienceEvent]:
    """Group outages into events with a sweep over start times."""
    ordered = sorted(outages, key=lambda o: (o.start, o.restore, o.id))
    events: list[ResilienceEvent] = []
    current: list[OutageRecord] = []
    reach = -math.inf
    for o in ordered:
        if current and o.start > reach:
            events.append(ResilienceEvent(tuple(current)))
            current = []
        current.append(o)
        reach = o.restore if len(current) == 1 else max(reach, o.restore)
    if current:
        events.append(ResilienceEvent(tuple(current)))
    return events


def performance_curve(event: ResilienceEvent, customers: bool = False
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints and values of the (negative) unrestored count step function.

    ``values[i]`` holds on ``[times[i], times[i+1])``; the last value is 0.
    Outages and restores at the same instant are netted at that instant.
    """
    weight = (lambda o: o.customers) if customers else (lambda o: 1)
    delta: dict[float, float] = {}
    for o in event.outages:
        delta[o.start] = delta.get(o.start, 0) - weight(o)
        delta[o.restore] = delta.get(o.restore, 0) + weight(o)
    times = np.array(sorted(delta), dtype=float)
    values = np.cumsum([delta[t] for t in sorted(delta)]).astype(float)
    return times, values


def metrics(event: ResilienceEvent, zero_rates: bool = False) -> MetricVector:
    """The nine resilience metrics of one event.

    Rates with a zero time denominator are ``None`` (or 0 with ``zero_rates``).
    """
    n = event.n
    o, r = event.o_sorted, event.r_sorted
    outage_hours = sum(rk - ok for ok, rk in zip(o, r)) / 60.0
    restore_duration = (r[-1] - r[0]) / 60.0
    outage_span = (o[-1] - o[0]) / 60.0
    absent = 0.0 if zero_rates else None
    return MetricVector(
        event_size=float(n),
        outage_hours=outage_hours,
        event_duration=(r[-1] - o[0]) / 60.0,
        time_to_first_restore=(r[0] - o[0]) / 60.0,
        restore_duration=restore_duration,
        restore_rate=n / restore_duration if restore_duration > 0 else absent,
        outage_rate=n / outage_span if outage_span > 0 else absent,
        customers_out=float(sum(x.customers for x in event.outages)),
        # component pairing: area under the customer performance curve
        customer_hours=sum(x.customers * (x.restore - x.start) for x in event.outages) / 60.0,
    )


def classify(event: ResilienceEvent, thresholds=DEFAULT_THRESHOLDS) -> SizeClass:
    return classify_size(event.n, thresholds)


def average_vectors(vectors: Sequence[MetricVector]) -> Optional[MetricVector]:
    """Per-metric arithmetic mean; absent values are left out of their metric's mean."""
    if not vectors:
        return None
    return MetricVector.from_array(nan_mean_rows(np.array([v.as_array() for v in vectors])))


def mean_metrics(events: Sequence[ResilienceEvent], size_class: Optional[SizeClass] = None,
                 thresholds=DEFAULT_THRESHOLDS, zero_rates: bool = False) -> Optional[MetricVector]:
    """Mean metric vector over the events of one size class (or all events).

    Returns ``None`` for an empty class.
    """
    chosen = [e for e in events if size_class is None or classify(e, thresholds) == size_class]
    return average_vectors([metrics(e, zero_rates) for e in chosen])


def nan_mean_rows(matrix: np.ndarray) -> np.ndarray:
    """Column means ignoring NaN; NaN where a column has no values."""
    matrix = np.atleast_2d(matrix)
    ok = ~np.isnan(matrix)
    counts = ok.sum(axis=0)
    sums = np.where(ok, matrix, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


# -- columnar engine ----------------------------------------------------------

_SUMMED = np.array([name not in ("time_to_first_restore",) + RATE_METRICS
                    for name in METRIC_NAMES])


class EventTable:
    """Columnar view of a chronologically ordered list of disjoint events.

    Used to recompute super-event metrics many times over: each call takes a
    survivor mask and/or replacement restore times, optionally re-splits every
    original event into its connected parts, and aggregates the parts back per
    original event (sums for extensive metrics, part averages for time to
    first restore and the two rates, zeros for an emptied event).
    """

    def __init__(self, events: Sequence[ResilienceEvent], thresholds=DEFAULT_THRESHOLDS):
        self.events = sorted(events, key=lambda e: e.start)
        for prev, nxt in zip(self.events, self.events[1:]):
            if not prev.end < nxt.start:
                raise ValueError("events must be disjoint in time")
        self.thresholds = thresholds
        outs = [o for e in self.events for o in e.outages]
        self.ids = [o.id for o in outs]
        self.index = {rid: i for i, rid in enumerate(self.ids)}
        self.start = np.array([o.start for o in outs], dtype=float)
        self.restore = np.array([o.restore for o in outs], dtype=float)
        self.customers = np.array([o.customers for o in outs], dtype=float)
        self.sizes = np.array([e.n for e in self.events], dtype=np.int64)
        self.event = np.repeat(np.arange(len(self.events)), self.sizes)
        self.classes = np.array([SIZE_CLASSES.index(classify_size(int(n), thresholds))
                                 for n in self.sizes], dtype=np.int64)

    def __len__(self):
        return len(self.events)

    @property
    def n_outages(self) -> int:
        return len(self.ids)

    @property
    def offsets(self) -> np.ndarray:
        """Index of each event's first outage."""
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    def super_metrics(self, mask: Optional[np.ndarray] = None,
                      restore: Optional[np.ndarray] = None,
                      regroup: bool = True, zero_rates: bool = False) -> np.ndarray:
        """Metric matrix, one row per original event, columns in ``METRIC_NAMES`` order."""
        r_all = self.restore if restore is None else np.asarray(restore, dtype=float)
        if mask is None:
            s, r, c, ev = self.start, r_all, self.customers, self.event
        else:
            s, r, c, ev = self.start[mask], r_all[mask], self.customers[mask], self.event[mask]
        out = np.zeros((len(self.events), len(METRIC_NAMES)))
        if len(s) == 0:
            return out

        boundary = np.empty(len(s), dtype=bool)
        boundary[0] = True
        boundary[1:] = ev[1:] != ev[:-1]
        if regroup:
            # originals are disjoint and in time order, so a global running max
            # of restores never leaks from one original event into the next
            reach = np.maximum.accumulate(r)
            boundary[1:] |= s[1:] > reach[:-1]
        idx = np.flatnonzero(boundary)

        n = np.diff(np.append(idx, len(s))).astype(float)
        o1 = np.minimum.reduceat(s, idx)
        on = np.maximum.reduceat(s, idx)
        r1 = np.minimum.reduceat(r, idx)
        rn = np.maximum.reduceat(r, idx)
        dur = r - s
        part = np.empty((len(idx), len(METRIC_NAMES)))
        part[:, 0] = n
        part[:, 1] = np.add.reduceat(dur, idx) / 60.0
        part[:, 2] = (rn - o1) / 60.0
        part[:, 3] = (r1 - o1) / 60.0
        part[:, 4] = (rn - r1) / 60.0
        outage_span = (on - o1) / 60.0
        absent = 0.0 if zero_rates else np.nan
        with np.errstate(divide="ignore", invalid="ignore"):
            part[:, 5] = np.where(part[:, 4] > 0, n / part[:, 4], absent)
            part[:, 6] = np.where(outage_span > 0, n / outage_span, absent)
        part[:, 7] = np.add.reduceat(c, idx)
        part[:, 8] = np.add.reduceat(c * dur, idx) / 60.0

        origin = ev[idx]
        first = np.flatnonzero(np.r_[True, origin[1:] != origin[:-1]])
        ok = ~np.isnan(part)
        sums = np.add.reduceat(np.where(ok, part, 0.0), first, axis=0)
        counts = np.add.reduceat(ok.astype(float), first, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        out[origin[first]] = np.where(_SUMMED, sums, means)
        return out

    def class_means(self, matrix: np.ndarray) -> np.ndarray:
        """Per-class column means (rows ordered small, medium, large); NaN ignored."""
        res = np.full((len(SIZE_CLASSES), matrix.shape[1]), np.nan)
        for k in range(len(SIZE_CLASSES)):
            rows = matrix[self.classes == k]
            if len(rows):
                res[k] = nan_mean_rows(rows)
        return res
