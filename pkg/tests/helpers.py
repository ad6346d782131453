"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from windres.events import ResilienceEvent
from windres.ingest import OutageRecord, Station


def outage(start, restore, customers=1, rid=None, lat=42.0, lon=-93.0):
    return OutageRecord(id=rid or f"o{start}-{restore}-{customers}", latitude=lat, longitude=lon,
                        start=start, restore=restore, customers=customers)


def event(*triples):
    """Event from (start, restore[, customers]) minute triples with ids e1, e2, ..."""
    outs = []
    for i, t in enumerate(triples, 1):
        s, r, c = (t + (1,))[:3]
        outs.append(outage(s, r, c, rid=f"e{i}"))
    return ResilienceEvent(tuple(outs))


# nine chained outages: dropping e1 keeps one event, dropping e4 and e5
# leaves {e1, e2, e3} fully restored before e6 starts
NINE = [(0, 50), (10, 60), (20, 70), (40, 120), (65, 130),
        (100, 200), (110, 180), (150, 220), (190, 240)]


def station(times, speeds, sid="S", lat=42.0, lon=-93.0):
    return Station(sid, lat, lon, np.asarray(times, dtype=np.int64), np.asarray(speeds, dtype=float))


# -- oracles ---------------------------------------------------------------------

def union_find_groups(intervals):
    """Groups of indices whose closed intervals chain together, by exhaustive pairwise overlap."""
    n = len(intervals)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            (a0, a1), (b0, b1) = intervals[i], intervals[j]
            if a0 <= b1 and b0 <= a1:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return sorted(groups.values(), key=min)


def brute_force_curve(times, speeds, counts, v_max):
    """Rate curve by exact rational scan of every segment.

    Each segment is walked with Fractions: a flat segment at level v adds each
    whole minute it spans, a strictly monotone one adds its exact crossing.
    Sample instants are collected once in a set.
    """
    level = {v: set() for v in range(v_max + 1)}
    T = [Fraction(int(t)) for t in times]
    S = [Fraction(float(s)) for s in speeds]
    for (t0, s0, t1, s1) in zip(T, S, T[1:], S[1:]):
        for v in range(v_max + 1):
            if s0 == s1 == v:
                for minute in range(math.ceil(t0), math.floor(t1) + 1):
                    level[v].add(Fraction(minute))
            elif min(s0, s1) <= v <= max(s0, s1) and s0 != s1:
                level[v].add(t0 + (v - s0) * (t1 - t0) / (s1 - s0))
    out = {}
    for v, ts in level.items():
        if ts:
            total = sum(counts.get(math.floor(t + Fraction(1, 2)), 0) for t in ts)
            out[v] = (total / len(ts), len(ts))
    return out


def step_integral_hours(ev: ResilienceEvent, customers=False):
    """-integral of the performance curve, walking every minute boundary in order."""
    marks = sorted({o.start for o in ev.outages} | {o.restore for o in ev.outages})
    area = 0.0
    for a, b in zip(marks, marks[1:]):
        down = sum((o.customers if customers else 1) for o in ev.outages if o.start <= a and o.restore >= b)
        area += down * (b - a)
    return area / 60.0
