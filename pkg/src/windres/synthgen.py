"""Synthetic wind and outage corpora with known ground truth."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import Area, OutageRecord, Station, parse_timestamp, write_outages_csv, write_station_csv

KM_PER_DEG = 111.195


@dataclass(frozen=True)
class ScenarioSpec:
    duration_days: float = 365.0
    # hourly mean-reverting wind (mph)
    wind_mean: float = 8.0
    wind_reversion: float = 0.1
    wind_volatility: float = 1.5
    storm_count: int = 0
    storm_peak: float = 40.0
    storm_peak_spread: float = 0.0
    storm_width_hours: float = 6.0
    # outages per minute = a * exp(b * wind)
    a: float = 0.006
    b: float = 0.48
    # restore delay ~ lognormal(median * exp(slope * wind), shape) minutes
    restore_median: float = 90.0
    restore_shape: float = 1.0
    restore_wind_slope: float = 0.0
    customers_values: tuple = (1, 4, 12, 40, 150)
    customers_probs: tuple = (0.35, 0.25, 0.2, 0.15, 0.05)
    station_id: str = "S1"
    latitude: float = 42.03
    longitude: float = -93.62
    radius_km: float = 15.0
    start: str = "2015-01-01T00:00:00+00:00"
    seed: int = 0

    def __post_init__(self):
        if self.duration_days < 1:
            raise ValueError("duration must be at least one day")
        if min(self.wind_reversion, self.restore_median, self.restore_shape,
               self.storm_width_hours, self.radius_km) <= 0:
            raise ValueError("scales and rates must be positive")
        if self.a < 0 or self.wind_volatility < 0 or self.storm_count < 0:
            raise ValueError("a, volatility and storm count must be nonnegative")
        if len(self.customers_values) != len(self.customers_probs):
            raise ValueError("customers_values and customers_probs differ in length")
        if not math.isclose(sum(self.customers_probs), 1.0, rel_tol=1e-9):
            raise ValueError("customers_probs must sum to 1")

    @classmethod
    def from_mapping(cls, mapping: Optional[dict]) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        data = dict(mapping or {})
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        for key in ("customers_values", "customers_probs"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["customers_values"] = list(self.customers_values)
        d["customers_probs"] = list(self.customers_probs)
        return d


# named six-year scenarios; the outage-rate parameters are the two published area fits.
# storm_count is a total, so scale it with duration_days when overriding the length.
PRESETS = {
    "area1": dict(duration_days=6 * 365, a=1.44e-7, b=0.6, wind_mean=12.0, wind_reversion=0.15, wind_volatility=0.8,
                  storm_count=400, storm_peak=21.0, storm_peak_spread=5.0, storm_width_hours=4.0),
    "area2": dict(duration_days=6 * 365, a=0.006, b=0.48, wind_mean=1.0, wind_reversion=0.15, wind_volatility=0.5,
                  storm_count=400, storm_peak=8.0, storm_peak_spread=3.0, storm_width_hours=4.0),
}


def preset(name: str, **overrides) -> ScenarioSpec:
    return ScenarioSpec.from_mapping({**PRESETS[name], **overrides})


def _streams(seed: int):
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(3)]


def gen_wind(spec: ScenarioSpec) -> Station:
    rng = _streams(spec.seed)[0]
    hours = int(round(spec.duration_days * 24))
    n = hours + 1
    x = np.empty(n)
    x[0] = spec.wind_mean
    if spec.wind_volatility > 0:
        noise = rng.standard_normal(n - 1) * spec.wind_volatility
    else:
        noise = np.zeros(n - 1)
    keep = 1.0 - spec.wind_reversion
    drift = spec.wind_reversion * spec.wind_mean
    for i in range(n - 1):
        x[i + 1] = keep * x[i] + drift + noise[i]
    if spec.storm_count:
        h = np.arange(n, dtype=float)
        centers = rng.integers(0, n, size=spec.storm_count)
        peaks = spec.storm_peak + rng.uniform(-spec.storm_peak_spread, spec.storm_peak_spread,
                                              size=spec.storm_count)
        # overlapping storms do not stack: the strongest bump wins
        bump = np.zeros(n)
        reach = int(8 * spec.storm_width_hours)
        for c, p in zip(centers, peaks):
            lo, hi = max(0, c - reach), min(n, c + reach + 1)
            shape = (p - spec.wind_mean) * np.exp(-0.5 * ((h[lo:hi] - c) / spec.storm_width_hours) ** 2)
            bump[lo:hi] = np.maximum(bump[lo:hi], shape)
        x += bump
    speeds = np.maximum(x, 0.0)
    t0 = parse_timestamp(spec.start)
    times = t0 + 60 * np.arange(n, dtype=np.int64)
    return Station(spec.station_id, spec.latitude, spec.longitude, times, speeds)


def gen_outages(spec: ScenarioSpec, station: Station) -> Area:
    """Per-minute Poisson outage counts at rate ``a * exp(b * V(t))``."""
    _, rng, place_rng = _streams(spec.seed)
    minutes = np.arange(station.times[0], station.times[-1] + 1, dtype=np.int64)
    if spec.a == 0:
        return Area(station, [])
    wind = np.interp(minutes.astype(float), station.times.astype(float), station.speeds)
    counts = rng.poisson(spec.a * np.exp(spec.b * wind))
    starts = np.repeat(minutes, counts)
    v_start = np.repeat(wind, counts)
    n = len(starts)
    median = spec.restore_median * np.exp(spec.restore_wind_slope * v_start)
    delay = np.maximum(1, np.rint(rng.lognormal(np.log(median), spec.restore_shape)).astype(np.int64))
    customers = rng.choice(np.asarray(spec.customers_values), size=n, p=np.asarray(spec.customers_probs))
    radius = spec.radius_km * np.sqrt(place_rng.random(n))
    theta = place_rng.uniform(0.0, 2 * np.pi, n)
    lat = spec.latitude + radius * np.sin(theta) / KM_PER_DEG
    lon = spec.longitude + radius * np.cos(theta) / (KM_PER_DEG * math.cos(math.radians(spec.latitude)))
    cols = zip(lat.tolist(), lon.tolist(), starts.tolist(), (starts + delay).tolist(), customers.tolist())
    outages = [
        OutageRecord(id=f"{spec.station_id}-{i:07d}", latitude=la, longitude=lo, start=s, restore=r, customers=c)
        for i, (la, lo, s, r, c) in enumerate(cols)
    ]
    return Area(station, outages)


def generate(spec: ScenarioSpec) -> Area:
    return gen_outages(spec, gen_wind(spec))


def write_scenario(out_dir, spec: ScenarioSpec, area: Optional[Area] = None) -> dict:
    """Write ``outages.csv``, ``wind_<station>.csv`` and a ground-truth sidecar; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    area = area or generate(spec)
    paths = {
        "outages": out / f"outages_{spec.station_id}.csv",
        "wind": out / f"wind_{spec.station_id}.csv",
        "truth": out / f"truth_{spec.station_id}.json",
    }
    write_outages_csv(paths["outages"], area.outages)
    write_station_csv(paths["wind"], area.station)
    truth = {"scenario": spec.to_dict(), "n_outages": len(area.outages), "a": spec.a, "b": spec.b}
    paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
