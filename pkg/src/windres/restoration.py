"""Counterfactual earlier or faster restoration of historical events.

Both transforms move each component's restore time and never let it precede
that component's own outage.  No outage is added or removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .events import (DEFAULT_THRESHOLDS, METRIC_NAMES, SIZE_CLASSES, EventTable, ResilienceEvent,
                     SizeClass)
from .hardening import CounterfactualResult

EARLIER = "earlier"
FASTER = "faster"


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RestorationSpec:
    mode: str
    t_earlier: Optional[float] = None
    c_faster: Optional[float] = None

    def __post_init__(self):
        if self.mode == EARLIER:
            if self.t_earlier is None or self.c_faster is not None:
                raise ValueError("earlier mode takes t_earlier only")
            if self.t_earlier < 0:
                raise ValueError("t_earlier must be >= 0")
        elif self.mode == FASTER:
            if self.c_faster is None or self.t_earlier is not None:
                raise ValueError("faster mode takes c_faster only")
            if not 0 < self.c_faster <= 1:
                raise ValueError("c_faster must lie in (0, 1]")
        else:
            raise ValueError(f"unknown restoration mode {self.mode!r}")

    @property
    def parameter(self) -> float:
        return self.t_earlier if self.mode == EARLIER else self.c_faster


def apply_earlier(event: ResilienceEvent, t_earlier: float) -> ResilienceEvent:
    """Restore every component ``t_earlier`` hours sooner, but not before its outage."""
    if t_earlier < 0:
        raise ValueError("t_earlier must be >= 0")
    if t_earlier == 0:
        return event
    shift = 60.0 * t_earlier
    return ResilienceEvent(tuple(
        replace(o, restore=max(o.restore - shift, o.start)) for o in event.outages))


def apply_faster(event: ResilienceEvent, c_faster: float) -> ResilienceEvent:
    """Contract each restore's delay after the first restore by ``c_faster``."""
    if not 0 < c_faster <= 1:
        raise ValueError("c_faster must lie in (0, 1]")
    if c_faster == 1:
        return event
    r1 = min(o.restore for o in event.outages)
    return ResilienceEvent(tuple(
        replace(o, restore=max(r1 + (o.restore - r1) * c_faster, o.start)) for o in event.outages))


def transformed_restores(table: EventTable, spec: RestorationSpec) -> np.ndarray:
    """Vectorised counterpart of :func:`apply_earlier` / :func:`apply_faster` over a table."""
    if spec.mode == EARLIER:
        if spec.t_earlier == 0:
            return table.restore
        return np.maximum(table.restore - 60.0 * spec.t_earlier, table.start)
    if spec.c_faster == 1:
        return table.restore
    r1 = np.repeat(np.minimum.reduceat(table.restore, table.offsets), table.sizes)
    return np.maximum(r1 + (table.restore - r1) * spec.c_faster, table.start)


def _apply(table: EventTable, spec: RestorationSpec, regroup: bool) -> np.ndarray:
    return table.class_means(table.super_metrics(restore=transformed_restores(table, spec),
                                                 regroup=regroup))


def run_restoration(events: Sequence[ResilienceEvent] | EventTable, spec: RestorationSpec,
                    thresholds=DEFAULT_THRESHOLDS, regroup: bool = False) -> CounterfactualResult:
    """Class-mean metrics before and after a restoration transform.

    Each transformed event keeps its original grouping unless ``regroup`` is
    set, in which case it is re-split into connected parts and scored as a
    super event.
    """
    table = events if isinstance(events, EventTable) else EventTable(events, thresholds)
    base = table.class_means(table.super_metrics())
    new = _apply(table, spec, regroup)
    return CounterfactualResult(
        kind=spec.mode,
        base=base,
        new=new,
        parameters={"t_earlier": spec.t_earlier} if spec.mode == EARLIER else {"c_faster": spec.c_faster},
        flags={"super_event_regroup": regroup, "event_duration_aggregation": "sum"},
    )


def calibrate_target(events: Sequence[ResilienceEvent] | EventTable, mode: str, target: float,
                     metric: str = "outage_hours", size_class: SizeClass = SizeClass.LARGE,
                     thresholds=DEFAULT_THRESHOLDS, regroup: bool = False,
                     rel_tol: float = 1e-12) -> float:
    """Parameter at which the class-mean ``metric`` falls by the fraction ``target``.

    Bisects ``t_earlier`` over ``[0, longest event duration]`` or ``c_faster``
    over ``[0.5, 1]``, widening the latter toward 0 when needed.
    """
    if not 0 <= target < 1:
        raise ValueError("target must lie in [0, 1)")
    table = events if isinstance(events, EventTable) else EventTable(events, thresholds)
    j = METRIC_NAMES.index(metric)
    k = SIZE_CLASSES.index(SizeClass(size_class))
    base = table.class_means(table.super_metrics())[k, j]
    if not math.isfinite(base) or base == 0:
        raise CalibrationError(f"no {size_class.value} events with nonzero {metric}")
    if target == 0:
        return 0.0 if mode == EARLIER else 1.0

    def change(p):
        spec = RestorationSpec(EARLIER, t_earlier=p) if mode == EARLIER else RestorationSpec(FASTER, c_faster=p)
        return _apply(table, spec, regroup)[k, j] / base - 1.0

    goal = -target
    if mode == EARLIER:
        durations = np.maximum.reduceat(table.restore, table.offsets) - table.start[table.offsets]
        lo, hi = 0.0, float(np.max(durations)) / 60.0
        if change(hi) > goal:
            raise CalibrationError(f"target unreachable: best change {change(hi):.6g} at t_earlier={hi:g}")
        # change decreases with t: lo side is above the goal
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if change(mid) > goal:
                lo = mid
            else:
                hi = mid
            if hi - lo <= rel_tol * max(hi, 1.0):
                break
        return 0.5 * (lo + hi)
    if mode == FASTER:
        lo, hi = 0.5, 1.0
        while change(lo) > goal:
            if lo < 1e-9:
                raise CalibrationError(f"target unreachable: best change {change(lo):.6g} as c_faster -> 0")
            hi, lo = lo, lo / 2.0
        # change increases with c: lo side is at or below the goal
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if change(mid) > goal:
                hi = mid
            else:
                lo = mid
            if hi - lo <= rel_tol:
                break
        return 0.5 * (lo + hi)
    raise ValueError(f"unknown restoration mode {mode!r}")

