import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windres.windalign import (OutageRateCurve, WindDomainError, interpolate,
                               level_set, rate_curve, rate_series, round_half_up, wind_at_outage)

from helpers import brute_force_curve, outage, station


def wind(times, speeds):
    return interpolate(station(times, speeds))


def test_interpolation_examples():
    w = wind([0, 60], [4, 6])
    assert w(30) == 5.0 and w(0) == 4.0 and w(60) == 6.0
    assert wind([0, 60, 120], [4, 6, 2])(90) == 4.0


def test_query_outside_domain_raises():
    w = wind([0, 60], [4, 6])
    with pytest.raises(WindDomainError):
        w(61)
    with pytest.raises(WindDomainError):
        w(np.array([-1.0, 3.0]))


def test_interpolate_needs_two_samples():
    with pytest.raises(ValueError):
        interpolate(station([0], [1]))


def test_level_set_examples():
    assert list(level_set(wind([0, 60], [4, 6]), 5)) == [30.0]
    assert list(level_set(wind([0, 60, 120], [4, 6, 4]), 5)) == [30.0, 90.0]
    assert list(level_set(wind([0, 60], [5, 5]), 5)) == list(range(61))


def test_shared_endpoint_counted_once():
    assert list(level_set(wind([0, 60, 120], [4, 6, 8]), 6)) == [60.0]
    # a touch from below counts once too
    assert list(level_set(wind([0, 60, 120], [4, 6, 4]), 6)) == [60.0]


def test_level_set_window():
    ts = level_set(wind([0, 60, 120], [4, 6, 4]), 5, window=(0, 60))
    assert list(ts) == [30.0]


def test_rate_series_examples():
    s = rate_series([outage(100, 110), outage(100, 120), outage(100, 130, 2)])
    assert s.counts == {100: 3}
    assert rate_series([]).counts == {}
    s = rate_series([outage(5, 6), outage(7, 8)])
    assert s.counts == {5: 1, 7: 1} and s(6) == 0
    assert list(s.lookup(np.array([4, 5, 6, 7, 8]))) == [0, 1, 0, 1, 0]


def test_rate_curve_single_crossing():
    w = wind([0, 60], [4, 6])
    curve = rate_curve([outage(30, 40), outage(30, 50)], w, v_max=6)
    assert curve.points[5] == (2.0, 1)
    assert curve.points[4] == (0.0, 1)


def test_rate_curve_without_outages_is_zero():
    curve = rate_curve([], wind([0, 60, 120], [0, 3, 1]))
    assert set(curve.points) == {0, 1, 2, 3}
    assert all(rate == 0.0 for rate, _ in curve.points.values())


def test_half_minute_crossing_rounds_up():
    # crossing of 5 at t=0.5 is attributed to minute 1
    curve = rate_curve([outage(1, 2)], wind([0, 1], [4.5, 5.5]), v_max=5)
    assert curve.points[5] == (1.0, 1)


def test_monotone_ramp_has_unit_exposure():
    w = wind([0, 600], [0, 10])
    outs = [outage(60 * v, 60 * v + 5, rid=f"r{v}") for v in range(11)]
    curve = rate_curve(outs, w)
    assert all(e == 1 and r == 1.0 for r, e in curve.points.values())


def test_wind_at_outage_rounding():
    w = wind([0, 60], [5, 6])
    assert wind_at_outage(w, outage(30, 40)) == 6
    assert wind_at_outage(wind([0, 60], [12, 3]), outage(0, 1)) == 12
    assert wind_at_outage(wind([0, 60], [4, 6]), outage(30, 31)) == 5
    assert list(round_half_up([0.5, 1.49, 2.5])) == [1, 1, 3]


def test_curve_serialisation_round_trip():
    curve = OutageRateCurve({0: (0.25, 10), 3: (1.5, 2)})
    assert OutageRateCurve.from_dict(curve.to_dict()) == curve
    lines = curve.to_csv({"p": 1}).splitlines()
    assert lines[0].startswith("# ") and lines[1] == "v,mean_rate,exposure"


def random_toy(rng):
    n = int(rng.integers(2, 11))
    gaps = rng.choice([15, 30, 60, 60, 90, 180], size=n - 1)
    times = np.concatenate([[0], np.cumsum(gaps)])
    if rng.random() < 0.5:
        speeds = rng.integers(0, 7, size=n).astype(float)
    else:
        speeds = np.round(rng.uniform(0, 6, size=n), 1)
    outs = [outage(int(t), int(t) + 1, rid=f"r{i}")
            for i, t in enumerate(rng.integers(0, times[-1] + 1, size=int(rng.integers(0, 51))))]
    return times, speeds, outs


def check_against_oracle(times, speeds, outs):
    w = wind(times, speeds)
    v_max = int(np.ceil(speeds.max()))
    curve = rate_curve(outs, w, v_max)
    expected = brute_force_curve(times, speeds, rate_series(outs).counts, v_max)
    assert set(curve.points) == set(expected)
    for v, (rate, exposure) in expected.items():
        assert curve.points[v][1] == exposure
        assert curve.points[v][0] == pytest.approx(float(rate), rel=1e-12, abs=1e-12)


def test_rate_curve_matches_oracle_on_random_toys():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        check_against_oracle(*random_toy(rng))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_curve_properties(seed):
    times, speeds, outs = random_toy(np.random.default_rng(seed))
    w = wind(times, speeds)
    curve = rate_curve(outs, w)
    series = rate_series(outs)
    assert series.total == len(outs)
    peak = max(series.counts.values(), default=0)
    for rate, exposure in curve.points.values():
        assert exposure >= 1 and 0 <= rate <= peak
