"""Counterfactual hardening by resampling historical outages per wind-speed bin.

A hardening that keeps a fraction ``rho`` of the outage rate at every wind
speed is realised by keeping ``ceil(k * rho)`` of the ``k`` historical outages
in each integer-mph bin.  Which outages survive is random, so metrics are
averaged over many replicates.  Each original event is tracked as a super event
so it keeps its size class even when sampling splits or empties it.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .events import (DEFAULT_THRESHOLDS, METRIC_NAMES, SIZE_CLASSES, EventTable, MetricVector,
                     ResilienceEvent, average_vectors, extract_events, metrics, nan_mean_rows)
from .ingest import Area, OutageRecord
from .windalign import InterpolatedWind, round_half_up


SUBSET = "subset"
REPLACEMENT_DEDUP = "replacement-dedup"
SAMPLING_MODES = (SUBSET, REPLACEMENT_DEDUP)

Retention = Union[float, Mapping[int, float]]


@dataclass
class WindBinIndex:
    """Outage ids grouped by rounded interpolated wind speed at outage start."""

    bins: dict[int, list[str]] = field(default_factory=dict)

    @property
    def sizes(self) -> dict[int, int]:
        return {v: len(ids) for v, ids in sorted(self.bins.items())}

    def bin_of(self) -> dict[str, int]:
        return {rid: v for v, ids in self.bins.items() for rid in ids}

    @property
    def total(self) -> int:
        return sum(len(ids) for ids in self.bins.values())


@dataclass(frozen=True)
class MonteCarloConfig:
    m: int = 2000
    d: float = 0.01
    confidence: float = 0.99
    seed: int = 0
    adaptive: bool = True
    max_factor: int = 4
    mode: str = SUBSET
    jobs: int = 1

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.d <= 0:
            raise ValueError("d must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.mode not in SAMPLING_MODES:
            raise ValueError(f"mode must be one of {SAMPLING_MODES}")


@dataclass
class SuperEvent:
    origin: ResilienceEvent
    parts: list[ResilienceEvent]

    @property
    def size(self) -> int:
        return sum(p.n for p in self.parts)


def bin_outages(area: Area | Iterable[OutageRecord], wind: InterpolatedWind) -> WindBinIndex:
    outages = area.outages if isinstance(area, Area) else list(area)
    if not outages:
        return WindBinIndex({})
    speeds = round_half_up(wind(np.array([o.start for o in outages], dtype=float)))
    bins: dict[int, list[str]] = {}
    for o, v in zip(outages, np.atleast_1d(speeds)):
        bins.setdefault(int(v), []).append(o.id)
    return WindBinIndex(dict(sorted(bins.items())))


def _ceil(x: float) -> int:
    # absorb float noise such as 100 * 0.9 = 90.00000000000001
    return math.ceil(x - 1e-9)


def sample_counts(index: WindBinIndex, rho: Retention) -> dict[int, int]:
    """Outages to keep per bin: ``ceil(k * ratio)``.

    ``rho`` is one retention factor for every bin (exponential curves) or a
    per-speed mapping of new-to-old outage-rate ratios.
    """
    counts = {}
    for v, k in index.sizes.items():
        ratio = rho[v] if isinstance(rho, Mapping) else rho
        if not 0 < ratio <= 1:
            raise ValueError(f"retention at {v} mph must lie in (0, 1], got {ratio}")
        counts[v] = min(k, _ceil(k * ratio)) if k else 0
    return counts


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent generator for one replicate, regardless of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))


def _draw_mask(codes: np.ndarray, keep: np.ndarray, rng: np.random.Generator,
               mode: str = SUBSET) -> np.ndarray:
    """Survivor mask; ``codes[i]`` is the bin of item ``i``, ``keep[b]`` the draws for bin ``b``."""
    n = len(codes)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    if mode == SUBSET:
        order = np.lexsort((rng.random(n), codes))
        sorted_codes = codes[order]
        first = np.searchsorted(sorted_codes, sorted_codes, side="left")
        rank = np.arange(n) - first
        mask[order[rank < keep[sorted_codes]]] = True
        return mask
    order = np.argsort(codes, kind="stable")
    sizes = np.bincount(codes, minlength=len(keep))
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    draw_codes = np.repeat(np.arange(len(keep)), keep)
    picks = offsets[draw_codes] + np.floor(rng.random(len(draw_codes)) * sizes[draw_codes]).astype(np.int64)
    mask[order[picks]] = True
    return mask


def draw_sample(index: WindBinIndex, counts: Mapping[int, int], rng: np.random.Generator,
                mode: str = SUBSET) -> set[str]:
    """Surviving outage ids for one replicate.

    ``subset`` keeps ``counts[v]`` distinct outages of each bin, uniformly.
    ``replacement-dedup`` draws ``counts[v]`` times with replacement and keeps
    the distinct picks, so fewer outages usually survive.
    """
    speeds = sorted(index.bins)
    ids = [rid for v in speeds for rid in index.bins[v]]
    codes = np.repeat(np.arange(len(speeds)), [len(index.bins[v]) for v in speeds])
    keep = np.array([counts.get(v, 0) for v in speeds], dtype=np.int64)
    for v, kv in zip(speeds, keep):
        if mode == SUBSET and kv > len(index.bins[v]):
            raise ValueError(f"bin {v} mph: cannot keep {kv} of {len(index.bins[v])} outages")
    mask = _draw_mask(codes, keep, rng, mode)
    return {rid for rid, kept in zip(ids, mask) if kept}


def super_events(original: Sequence[ResilienceEvent], survivors: set[str]) -> list[SuperEvent]:
    return [
        SuperEvent(e, extract_events(o for o in e.outages if o.id in survivors))
        for e in original
    ]


def super_metrics(se: SuperEvent, zero_rates: bool = False) -> MetricVector:
    """Sum extensive metrics over the parts, average time to first restore and rates.

    Event duration is summed like restore duration.  An emptied event scores zero.
    """
    if not se.parts:
        return MetricVector.zero()
    vecs = [metrics(p, zero_rates) for p in se.parts]
    mean = average_vectors(vecs)
    total = lambda name: sum(getattr(v, name) for v in vecs)
    return MetricVector(
        event_size=total("event_size"),
        outage_hours=total("outage_hours"),
        event_duration=total("event_duration"),
        time_to_first_restore=mean.time_to_first_restore,
        restore_duration=total("restore_duration"),
        restore_rate=mean.restore_rate,
        outage_rate=mean.outage_rate,
        customers_out=total("customers_out"),
        customer_hours=total("customer_hours"),
    )


# -- Monte Carlo driver -------------------------------------------------------

@dataclass
class CounterfactualResult:
    """Per-class means before and after a counterfactual (rows small, medium, large)."""

    kind: str
    base: np.ndarray
    new: np.ndarray
    halfwidth: Optional[np.ndarray] = None
    m: int = 0
    converged: bool = True
    parameters: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    replicates: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def percent_change(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = 100.0 * (self.new / self.base - 1.0)
        pct[~np.isfinite(pct)] = np.nan
        pct[(self.base == self.new) & np.isfinite(self.base)] = 0.0
        return pct

    def to_dict(self) -> dict:
        def table(arr):
            if arr is None:
                return None
            return {
                cls.value: {name: _num(arr[i, j]) for j, name in enumerate(METRIC_NAMES)}
                for i, cls in enumerate(SIZE_CLASSES)
            }
        return {
            "kind": self.kind,
            "parameters": self.parameters,
            "flags": self.flags,
            "m": self.m,
            "converged": self.converged,
            "base": table(self.base),
            "new": table(self.new),
            "percent_change": table(self.percent_change),
            "ci_halfwidth_normalized": table(self.halfwidth),
        }


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


_WORKER: dict = {}


def _init_worker(table, codes, keep, seed, mode, zero_rates):
    _WORKER.update(table=table, codes=codes, keep=keep, seed=seed, mode=mode, zero_rates=zero_rates)


def _run_replicates(indices: Sequence[int]) -> np.ndarray:
    w = _WORKER
    out = np.empty((len(indices), len(SIZE_CLASSES), len(METRIC_NAMES)))
    for j, i in enumerate(indices):
        mask = _draw_mask(w["codes"], w["keep"], replicate_rng(w["seed"], i), w["mode"])
        mat = w["table"].super_metrics(mask=mask, zero_rates=w["zero_rates"])
        out[j] = w["table"].class_means(mat)
    return out


def _replicates(state: tuple, start: int, stop: int, jobs: int) -> np.ndarray:
    indices = list(range(start, stop))
    if jobs <= 1 or len(indices) < 2 * jobs:
        _init_worker(*state)
        return _run_replicates(indices)
    chunk = math.ceil(len(indices) / (4 * jobs))
    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=state) as pool:
        # map preserves chunk order, so the reduction order is fixed
        return np.concatenate(list(pool.map(_run_replicates, chunks)))


def t_quantile(confidence: float, dof: int) -> float:
    return float(stats.t.ppf(0.5 + confidence / 2.0, dof))


def ci_halfwidth(normalized: np.ndarray, confidence: float = 0.99) -> np.ndarray:
    """Student-t half-width of the mean over the first axis (replicates)."""
    m = normalized.shape[0]
    with warnings.catch_warnings():
        # columns that are absent in every replicate give NaN, which is fine
        warnings.simplefilter("ignore", RuntimeWarning)
        s = np.nanstd(normalized, axis=0, ddof=1)
    return t_quantile(confidence, m - 1) * s / math.sqrt(m)


def _normalize(reps: np.ndarray, base: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = reps / base
    return np.where(np.isfinite(base) & (base != 0), norm, np.nan)


def run_hardening(events: Sequence[ResilienceEvent], index: WindBinIndex, rho: Retention,
                  cfg: MonteCarloConfig = MonteCarloConfig(),
                  thresholds=DEFAULT_THRESHOLDS, zero_rates: bool = False,
                  keep_replicates: bool = False) -> CounterfactualResult:
    """Average class-mean metrics over sampled hardening replicates.

    Starts with ``cfg.m`` replicates and, when ``cfg.adaptive`` is set, doubles
    the count (up to ``cfg.max_factor * cfg.m``) until the confidence
    half-width of every class mean, taken relative to its base value, is at
    most ``cfg.d``.
    """
    table = EventTable(events, thresholds)
    bin_of = index.bin_of()
    missing = [rid for rid in table.ids if rid not in bin_of]
    if missing:
        raise ValueError(f"{len(missing)} event outages have no wind bin (e.g. {missing[0]})")
    speeds = sorted(index.bins)
    code_of = {v: i for i, v in enumerate(speeds)}
    codes = np.array([code_of[bin_of[rid]] for rid in table.ids], dtype=np.int64)
    counts = sample_counts(index, rho)
    keep = np.array([counts[v] for v in speeds], dtype=np.int64)
    if table.n_outages != index.total:
        raise ValueError("wind bins and events must cover the same outages")

    base = table.class_means(table.super_metrics(zero_rates=zero_rates))
    state = (table, codes, keep, cfg.seed, cfg.mode, zero_rates)

    m = cfg.m
    reps = _replicates(state, 0, m, cfg.jobs)
    cap = cfg.m * (cfg.max_factor if cfg.adaptive else 1)
    while True:
        half = ci_halfwidth(_normalize(reps, base), cfg.confidence)
        ok = bool(np.all(np.isnan(half) | (half <= cfg.d)))
        if ok or m >= cap:
            break
        reps = np.concatenate([reps, _replicates(state, m, 2 * m, cfg.jobs)])
        m *= 2
    if not ok:
        msg = (f"confidence half-width target {cfg.d} not met at m={m}: "
               f"worst {np.nanmax(half):.4g}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    # average deviations from base so that replicates equal to base give base exactly
    plain = np.stack([nan_mean_rows(reps[:, k, :]) for k in range(len(SIZE_CLASSES))])
    shifted = base + np.stack([nan_mean_rows(reps[:, k, :] - base[k]) for k in range(len(SIZE_CLASSES))])
    new = np.where(np.isfinite(base), shifted, plain)
    survivors = int(keep.sum())
    result = CounterfactualResult(
        kind="hardening",
        base=base,
        new=new,
        halfwidth=half,
        m=m,
        converged=ok,
        parameters={
            "retention": rho if not isinstance(rho, Mapping) else {str(k): v for k, v in sorted(rho.items())},
            "expected_survivor_fraction": survivors / max(table.n_outages, 1),
        },
        flags={
            "sampling_mode": cfg.mode,
            "super_event_regroup": True,
            "event_duration_aggregation": "sum",
            "class_mean_over": "super_events",
            "absent_rates": "zero" if zero_rates else "excluded",
            "seed": cfg.seed,
            "d": cfg.d,
            "confidence": cfg.confidence,
        },
    )
    if keep_replicates:
        result.replicates = reps
    return result
