import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windres.events import METRIC_NAMES, EventTable, MetricVector, extract_events, metrics
from windres.hardening import (REPLACEMENT_DEDUP, MonteCarloConfig, SuperEvent,
                               WindBinIndex, bin_outages, draw_sample, replicate_rng,
                               run_hardening, sample_counts, super_events, super_metrics,
                               t_quantile)
from windres.ingest import Area
from windres.windalign import interpolate

from helpers import NINE, event, outage, station


def corpus(seed=0, n=1500, horizon=200_000):
    rng = np.random.default_rng(seed)
    starts = np.sort(rng.integers(0, horizon, size=n))
    outs = [outage(int(s), int(s + rng.integers(0, 400)), int(rng.integers(1, 60)), rid=f"r{i:05d}")
            for i, s in enumerate(starts)]
    hours = np.arange(0, horizon + 1000, 60)
    w = interpolate(station(hours, rng.uniform(0, 12, size=len(hours))))
    return outs, w


def test_bin_examples():
    w = interpolate(station([0, 60], [0.0, 0.2]))
    assert bin_outages([outage(0, 1, rid="a"), outage(59, 60, rid="b")], w).bins == {0: ["a", "b"]}
    w = interpolate(station([0, 100], [5.0, 6.0]))
    idx = bin_outages([outage(40, 41, rid="a"), outage(60, 61, rid="b")], w)
    assert idx.bins == {5: ["a"], 6: ["b"]}


def test_bins_match_per_outage_rounding():
    outs, w = corpus(1, n=300)
    idx = bin_outages(Area(None, outs), w)
    bin_of = idx.bin_of()
    for o in outs:
        assert bin_of[o.id] == int(np.floor(w(o.start) + 0.5))
    assert idx.total == len(outs)


def test_sample_count_examples():
    idx = WindBinIndex({3: [f"a{i}" for i in range(100)], 4: [f"b{i}" for i in range(7)], 5: ["c"]})
    assert sample_counts(idx, 0.9) == {3: 90, 4: 7, 5: 1}
    assert sample_counts(idx, 0.01) == {3: 1, 4: 1, 5: 1}
    assert sample_counts(idx, {3: 0.5, 4: 1.0, 5: 0.5}) == {3: 50, 4: 7, 5: 1}
    with pytest.raises(ValueError):
        sample_counts(idx, 0.0)


def test_rho_one_keeps_everything():
    idx = WindBinIndex({0: ["a", "b"], 1: ["c"]})
    kept = draw_sample(idx, sample_counts(idx, 1.0), np.random.default_rng(0))
    assert kept == {"a", "b", "c"}


def test_subset_marginals_are_uniform():
    idx = WindBinIndex({2: [f"x{i}" for i in range(10)]})
    hits = dict.fromkeys(idx.bins[2], 0)
    for i in range(10_000):
        kept = draw_sample(idx, {2: 9}, replicate_rng(5, i))
        assert len(kept) == 9
        for rid in kept:
            hits[rid] += 1
    # each item survives with hypergeometric marginal 9/10
    assert all(abs(h / 10_000 - 0.9) <= 0.01 for h in hits.values())


def test_draws_are_seeded():
    idx = WindBinIndex({0: [f"x{i}" for i in range(50)], 1: [f"y{i}" for i in range(30)]})
    counts = sample_counts(idx, 0.7)
    assert draw_sample(idx, counts, replicate_rng(3, 7)) == draw_sample(idx, counts, replicate_rng(3, 7))
    assert draw_sample(idx, counts, replicate_rng(3, 7)) != draw_sample(idx, counts, replicate_rng(3, 8))


def test_replacement_dedup_keeps_at_most_counts():
    idx = WindBinIndex({0: [f"x{i}" for i in range(50)]})
    kept = [len(draw_sample(idx, {0: 45}, replicate_rng(0, i), REPLACEMENT_DEDUP)) for i in range(200)]
    assert max(kept) <= 45
    # expected distinct picks: 50 * (1 - (49/50)^45)
    assert np.mean(kept) == pytest.approx(50 * (1 - (49 / 50) ** 45), rel=0.02)


def test_subset_rejects_oversized_counts():
    with pytest.raises(ValueError):
        draw_sample(WindBinIndex({0: ["a"]}), {0: 2}, np.random.default_rng(0))


def test_super_event_worked_example():
    nine = event(*NINE)
    (se,) = super_events([nine], set(nine.ids) - {"e1"})
    assert [p.n for p in se.parts] == [8]
    (se,) = super_events([nine], set(nine.ids) - {"e4", "e5"})
    assert [sorted(p.ids) for p in se.parts] == [["e1", "e2", "e3"], ["e6", "e7", "e8", "e9"]]
    single = event((0, 60, 5))
    (se,) = super_events([single], set())
    assert se.parts == [] and super_metrics(se) == MetricVector.zero()


def test_super_metrics_aggregation():
    a = event((0, 60, 1), (10, 90, 2), (20, 30, 3))
    b = event((500, 600, 1), (510, 530, 1), (520, 700, 4), (540, 560, 2))
    se = SuperEvent(origin=a, parts=[a, b])
    ma, mb, m = metrics(a), metrics(b), super_metrics(se)
    assert m.event_size == 7
    assert m.time_to_first_restore == pytest.approx((ma.time_to_first_restore + mb.time_to_first_restore) / 2)
    assert m.outage_hours == pytest.approx(ma.outage_hours + mb.outage_hours)
    assert m.event_duration == pytest.approx(ma.event_duration + mb.event_duration)
    assert m.restore_rate == pytest.approx((ma.restore_rate + mb.restore_rate) / 2)
    assert super_metrics(SuperEvent(a, [a])) == ma


def test_engine_matches_object_super_events():
    outs, _ = corpus(2, n=800)
    evs = extract_events(outs)
    table = EventTable(evs)
    rng = np.random.default_rng(4)
    for _ in range(20):
        mask = rng.random(table.n_outages) < rng.uniform(0.3, 1.0)
        survivors = {rid for rid, k in zip(table.ids, mask) if k}
        mat = table.super_metrics(mask=mask)
        for row, se in zip(mat, super_events(table.events, survivors)):
            assert np.allclose(row, super_metrics(se).as_array(), equal_nan=True, rtol=1e-12)


def hardening_setup(seed=3, n=1500):
    outs, w = corpus(seed, n=n)
    return extract_events(outs), bin_outages(outs, w)


def test_rho_one_reproduces_base():
    evs, idx = hardening_setup()
    res = run_hardening(evs, idx, 1.0, MonteCarloConfig(m=5, adaptive=False), keep_replicates=True)
    for rep in res.replicates:
        assert np.array_equal(rep, res.base, equal_nan=True)
    assert np.allclose(res.new, res.base, rtol=1e-14, equal_nan=True)
    assert np.all(np.nan_to_num(res.percent_change) == 0.0)


def test_survivors_sum_exactly():
    evs, idx = hardening_setup()
    table = EventTable(evs)
    res = run_hardening(evs, idx, 0.8, MonteCarloConfig(m=20, adaptive=False), keep_replicates=True)
    n_class = np.bincount(table.classes, minlength=3)
    kept = sum(sample_counts(idx, 0.8).values())
    for rep in res.replicates:
        assert float(np.nansum(rep[:, 0] * n_class)) == pytest.approx(kept, rel=1e-12)
    assert res.parameters["expected_survivor_fraction"] == pytest.approx(kept / idx.total)


def test_seeded_and_parallel_runs_agree():
    evs, idx = hardening_setup(n=600)
    cfg = MonteCarloConfig(m=40, adaptive=False, seed=9)
    a = run_hardening(evs, idx, 0.85, cfg)
    b = run_hardening(evs, idx, 0.85, cfg)
    c = run_hardening(evs, idx, 0.85, MonteCarloConfig(m=40, adaptive=False, seed=9, jobs=2))
    assert np.array_equal(a.new, b.new, equal_nan=True)
    assert np.array_equal(a.new, c.new, equal_nan=True)
    d = run_hardening(evs, idx, 0.85, MonteCarloConfig(m=40, adaptive=False, seed=10))
    assert not np.array_equal(a.new, d.new, equal_nan=True)


def test_adaptive_doubling_and_warning():
    evs, idx = hardening_setup(n=400)
    with pytest.warns(RuntimeWarning, match="not met"):
        res = run_hardening(evs, idx, 0.5, MonteCarloConfig(m=4, d=1e-6, max_factor=4))
    assert res.m == 16 and not res.converged
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = run_hardening(evs, idx, 0.5, MonteCarloConfig(m=50, d=10.0))
    assert res.m == 50 and res.converged


def test_index_must_match_events():
    evs, idx = hardening_setup(n=200)
    with pytest.raises(ValueError):
        run_hardening(evs[1:], idx, 0.9, MonteCarloConfig(m=2, adaptive=False))


def test_t_quantile_table_values():
    assert t_quantile(0.99, 30) == pytest.approx(2.750, abs=1e-3)
    assert t_quantile(0.99, 1000) == pytest.approx(2.581, abs=1e-3)
    assert t_quantile(0.99, 10**7) == pytest.approx(2.5758, abs=1e-4)


def test_result_dict_has_provenance_flags():
    evs, idx = hardening_setup(n=200)
    d = run_hardening(evs, idx, 0.9, MonteCarloConfig(m=4, adaptive=False, mode=REPLACEMENT_DEDUP)).to_dict()
    assert d["flags"]["sampling_mode"] == REPLACEMENT_DEDUP
    assert d["flags"]["event_duration_aggregation"] == "sum"
    assert set(d["percent_change"]["large"]) == set(METRIC_NAMES)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=6), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_subset_draw_hits_counts_exactly(sizes, rho, seed):
    idx = WindBinIndex({v: [f"{v}-{i}" for i in range(k)] for v, k in enumerate(sizes)})
    counts = sample_counts(idx, rho)
    kept = draw_sample(idx, counts, replicate_rng(seed, 0))
    bin_of = idx.bin_of()
    for v, k in counts.items():
        assert sum(bin_of[r] == v for r in kept) == k
