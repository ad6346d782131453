"""Align minute-resolution outages with interpolated station wind.

The area outage rate at integer wind speed ``v`` is the mean, over every instant
the interpolated wind passes through ``v``, of the number of outages recorded in
the area at that (rounded) minute.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .ingest import Area, OutageRecord, Station


class WindDomainError(ValueError):
    """A wind value was requested outside the span of the station's samples."""


def round_half_up(x):
    """Nearest integer with halves rounded up; works on scalars and arrays."""
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class InterpolatedWind:
    """Piecewise-linear wind speed V(t) through a station's samples."""

    times: np.ndarray
    speeds: np.ndarray

    @property
    def start(self) -> int:
        return int(self.times[0])

    @property
    def end(self) -> int:
        return int(self.times[-1])

    @property
    def segments(self):
        t, s = self.times, self.speeds
        return list(zip(zip(t[:-1], s[:-1]), zip(t[1:], s[1:])))

    def covers(self, t) -> bool:
        return self.start <= t <= self.end

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.times[0]) or np.any(t_arr > self.times[-1]):
            raise WindDomainError(
                f"time outside wind coverage [{self.start}, {self.end}]")
        out = np.interp(t_arr, self.times, self.speeds)
        return float(out) if out.ndim == 0 else out


def interpolate(station: Station) -> InterpolatedWind:
    if len(station) < 2:
        raise ValueError(f"station {station.id}: need at least 2 samples to interpolate")
    return InterpolatedWind(station.times.astype(float), station.speeds.copy())


def level_set(wind: InterpolatedWind, v: float, window: Optional[tuple[float, float]] = None
              ) -> np.ndarray:
    """Sorted times at which V(t) == v.

    A strictly monotone segment contributes its one crossing.  A segment lying
    exactly at ``v`` contributes every whole minute it spans.  A sample time at
    ``v`` is counted once even when it ends one segment and starts the next.
    """
    if v < 0:
        raise ValueError("wind speed level must be nonnegative")
    t0, t1 = wind.times[:-1], wind.times[1:]
    s0, s1 = wind.speeds[:-1], wind.speeds[1:]

    found = [wind.times[wind.speeds == v]]

    rising = (s0 < v) & (v < s1)
    falling = (s1 < v) & (v < s0)
    inner = rising | falling
    # multiply before dividing so exact half-minute crossings stay exact
    found.append(t0[inner] + (v - s0[inner]) * (t1[inner] - t0[inner]) / (s1[inner] - s0[inner]))

    flat = np.flatnonzero((s0 == v) & (s1 == v))
    for i in flat:
        lo, hi = math.ceil(t0[i]), math.floor(t1[i])
        found.append(np.arange(lo, hi + 1, dtype=float))

    times = np.unique(np.concatenate(found))
    if window is not None:
        times = times[(times >= window[0]) & (times <= window[1])]
    return times


@dataclass
class OutageRateSeries:
    """Outages per minute; a minute with no entry has rate zero."""

    counts: dict[int, int] = field(default_factory=dict)

    def __call__(self, minute: int) -> int:
        return self.counts.get(int(minute), 0)

    def lookup(self, minutes: np.ndarray) -> np.ndarray:
        if not self.counts:
            return np.zeros(len(minutes), dtype=np.int64)
        keys = np.fromiter(self.counts.keys(), dtype=np.int64, count=len(self.counts))
        vals = np.fromiter(self.counts.values(), dtype=np.int64, count=len(self.counts))
        order = np.argsort(keys)
        keys, vals = keys[order], vals[order]
        idx = np.clip(np.searchsorted(keys, minutes), 0, len(keys) - 1)
        return np.where(keys[idx] == minutes, vals[idx], 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def rate_series(area: Area | Iterable[OutageRecord]) -> OutageRateSeries:
    outages = area.outages if isinstance(area, Area) else area
    return OutageRateSeries(dict(Counter(int(o.start) for o in outages)))


@dataclass
class OutageRateCurve:
    """Mean outage rate (outages/minute) and crossing count per integer wind speed."""

    points: dict[int, tuple[float, int]] = field(default_factory=dict)

    @property
    def speeds(self) -> np.ndarray:
        return np.array(sorted(self.points), dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.points[v][0] for v in sorted(self.points)])

    @property
    def exposures(self) -> np.ndarray:
        return np.array([self.points[v][1] for v in sorted(self.points)], dtype=float)

    def __len__(self):
        return len(self.points)

    def to_csv(self, provenance: Optional[dict] = None, fit=None) -> str:
        buf = io.StringIO()
        if provenance:
            buf.write("# " + json.dumps(provenance, sort_keys=True, separators=(",", ":")) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["v", "mean_rate", "exposure"] + (["fit"] if fit is not None else []))
        for v in sorted(self.points):
            rate, exposure = self.points[v]
            row = [v, repr(float(rate)), exposure]
            if fit is not None:
                row.append(repr(float(fit(v))))
            w.writerow(row)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"points": [
            {"v": v, "mean_rate": float(self.points[v][0]), "exposure": int(self.points[v][1])}
            for v in sorted(self.points)
        ]}

    @classmethod
    def from_dict(cls, data: dict) -> "OutageRateCurve":
        return cls({int(p["v"]): (float(p["mean_rate"]), int(p["exposure"])) for p in data["points"]})


def rate_curve(area: Area | Iterable[OutageRecord], wind: InterpolatedWind,
               v_max: Optional[int] = None,
               window: Optional[tuple[float, float]] = None) -> OutageRateCurve:
    """Build the area outage rate curve on integer speeds ``0..v_max``.

    ``window`` restricts the crossing instants to a common observation period
    of wind and outage data; by default the whole wind span is used.
    """
    series = area if isinstance(area, OutageRateSeries) else rate_series(area)
    if v_max is None:
        v_max = math.ceil(float(np.max(wind.speeds)))
    points = {}
    for v in range(0, int(v_max) + 1):
        ts = level_set(wind, v, window)
        if len(ts) == 0:
            continue
        r = series.lookup(round_half_up(ts))
        points[v] = (float(r.sum()) / len(ts), len(ts))
    return OutageRateCurve(points)


def wind_at_outage(wind: InterpolatedWind, o: OutageRecord) -> int:
    """Interpolated wind at the outage start, rounded half-up to whole mph."""
    return int(round_half_up(wind(o.start)))
