import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from staleracer import delays as dm
from staleracer.runtime import (BoundInapplicable, InvalidRank, NotDivisible, RuntimeKind, Variant,
                                VariantConfig, batch_means, expected_runtime,
                                kasync_over_kbatchasync_ratio, monte_carlo_runtime,
                                shifted_exp_consecutive_bound, speedup_exponential_asymptotic,
                                speedup_sync_over_async)

EXP1 = dm.Exponential(1.0)
SHIFTED = dm.ShiftedExponential(1.0, 1.0)
PARETO = dm.Pareto(2.0, 1.0)
HYPER = dm.HyperExponential((0.5, 0.5), (1.0, 10.0))

H = {n: sum(1.0 / i for i in range(1, n + 1)) for n in range(0, 65)}


def cfg(variant, K, P=8):
    return VariantConfig(Variant.parse(variant), K, P)


# -- VariantConfig --------------------------------------------------------------

@pytest.mark.parametrize("name", ["ksync", "K-sync", "k_batch_sync", "KASYNC", "k-batch-async"])
def test_variant_parse_is_lenient(name):
    assert Variant.parse(name) in Variant


def test_variant_parse_rejects_unknown():
    with pytest.raises(ValueError):
        Variant.parse("fully-async")


@pytest.mark.parametrize("kw", [dict(K=0, P=4), dict(K=5, P=4), dict(K=1, P=4, m=0),
                                dict(K=1, P=4, eta=0.0), dict(K=1, P=4, eta=-1.0)])
def test_variant_config_validation(kw):
    with pytest.raises(ValueError):
        VariantConfig(Variant.KSYNC, **kw)


# -- expected_runtime (table of results) ---------------------------------------

def test_table_examples():
    r = expected_runtime(cfg("kbatchasync", 2), PARETO)
    assert r.kind is RuntimeKind.EXACT and r.value == pytest.approx(0.5, rel=1e-15)
    assert "asymptotic" in r.assumptions
    r = expected_runtime(cfg("ksync", 8), EXP1)
    assert r.kind is RuntimeKind.EXACT and r.value == pytest.approx(761 / 280, rel=1e-15)
    r = expected_runtime(cfg("kasync", 4), EXP1)
    assert r.kind is RuntimeKind.EXACT and r.value == pytest.approx(0.6345238095238095, rel=1e-14)


@pytest.mark.parametrize("dist", [SHIFTED, PARETO])
def test_bounds_for_new_longer_than_used(dist):
    r = expected_runtime(cfg("kbatchsync", 3), dist)
    assert r.kind is RuntimeKind.UPPER_BOUND
    assert r.value == pytest.approx(3 * dm.expected_order_statistic(dist, 1, 8).value)
    r = expected_runtime(cfg("kasync", 3), dist)
    assert r.kind is RuntimeKind.UPPER_BOUND
    assert r.value == pytest.approx(dm.expected_order_statistic(dist, 3, 8).value)


def test_memoryless_batch_sync_is_exact():
    r = expected_runtime(cfg("kbatchsync", 3), EXP1)
    assert r.kind is RuntimeKind.EXACT and r.value == pytest.approx(3 / 8)


@pytest.mark.parametrize("variant", ["kbatchsync", "kasync"])
def test_bound_inapplicable_for_new_shorter_than_used(variant):
    with pytest.raises(BoundInapplicable):
        expected_runtime(cfg(variant, 2), HYPER)


def test_hyperexponential_batch_async_is_fine():
    assert expected_runtime(cfg("kbatchasync", 2), HYPER).value == pytest.approx(2 * 0.55 / 8)


@given(P=st.integers(1, 64), data=st.data(),
       dist=st.sampled_from([EXP1, SHIFTED, PARETO, dm.Exponential(3.0)]))
def test_runtime_nonnegative_and_ordered(P, data, dist):
    K = data.draw(st.integers(1, P))
    vals = {v: expected_runtime(VariantConfig(v, K, P), dist).value for v in Variant}
    assert all(x >= 0 for x in vals.values())
    # analytical ordering across the table
    assert vals[Variant.KBATCHASYNC] <= vals[Variant.KASYNC] + 1e-12
    assert vals[Variant.KASYNC] == pytest.approx(vals[Variant.KSYNC])


# -- speedups ------------------------------------------------------------------

def test_speedup_examples():
    assert speedup_sync_over_async(dm.Exponential(7.0), 2) == pytest.approx(3.0, rel=1e-15)
    assert speedup_sync_over_async(EXP1, 8) == pytest.approx(21.742857142857142, rel=1e-14)
    for d in (EXP1, SHIFTED, PARETO, HYPER):
        assert speedup_sync_over_async(d, 1) == 1.0


def test_speedup_exponential_asymptotic():
    s = speedup_exponential_asymptotic(2)
    assert s.exact == pytest.approx(3.0) and s.approx == pytest.approx(2 * math.log(2))
    assert speedup_exponential_asymptotic(8).exact == pytest.approx(21.742857142857142)
    big = speedup_exponential_asymptotic(1024)
    assert abs(big.exact / big.approx - 1) <= 0.10
    ratios = [speedup_exponential_asymptotic(P) for P in (16, 256, 4096, 65536)]
    gaps = [abs(r.exact / r.approx - 1) for r in ratios]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    with pytest.raises(ValueError):
        speedup_exponential_asymptotic(1)


def test_kasync_over_kbatchasync_ratio():
    assert kasync_over_kbatchasync_ratio(EXP1, 1, 8) == pytest.approx(1.0)
    assert kasync_over_kbatchasync_ratio(EXP1, 4, 8) == pytest.approx(8 * (H[8] - H[4]) / 4)
    assert kasync_over_kbatchasync_ratio(EXP1, 4, 8) == pytest.approx(1.2690476190476190)
    assert kasync_over_kbatchasync_ratio(EXP1, 7, 8) == pytest.approx(8 * (H[8] - H[1]) / 7)
    with pytest.raises(InvalidRank):
        kasync_over_kbatchasync_ratio(EXP1, 9, 8)


# -- consecutive-iteration bound ----------------------------------------------------

def test_consecutive_bound_examples():
    b = shifted_exp_consecutive_bound(1.0, 1.0, 2, 8)
    terms = [H[8] - H[6], H[6] - H[4], H[4] - H[2], H[2] - H[0]]
    assert b.n_iteration_total == pytest.approx(1 + sum(terms), rel=1e-14)
    assert b.per_iteration_approx == pytest.approx(2 / 8 + 2 * math.log(8) / 8)
    assert b.per_iteration_approx == pytest.approx(0.7698, abs=1e-4)
    zero = shifted_exp_consecutive_bound(0.0, 2.0, 2, 8)
    assert zero.n_iteration_total == pytest.approx(sum(terms) / 2)


@pytest.mark.parametrize("K,P", [(3, 8), (8, 8), (0, 8)])
def test_consecutive_bound_needs_divisibility(K, P):
    with pytest.raises(NotDivisible):
        shifted_exp_consecutive_bound(1.0, 1.0, K, P)


@given(shift=st.floats(0, 20), rate=st.floats(0.1, 10), K=st.integers(1, 8), n=st.integers(2, 8))
def test_consecutive_bound_gains_one_shift_per_extra_iteration(shift, rate, K, n):
    # n K-sync iterations cost n*(shift + E[X~_{K:P}]); the bound pays the shift once,
    # so the gap to K-sync shrinks by exactly (n - 1) per unit of shift
    P = n * K
    gap = lambda d: (shifted_exp_consecutive_bound(d, rate, K, P).n_iteration_total  # noqa: E731
                     - n * (d + dm.exponential_order_statistic(rate, K, P)))
    assert gap(shift) == pytest.approx(gap(0.0) - (n - 1) * shift, abs=1e-9)
    assert gap(0.0) >= 0
    crossover = gap(0.0) / (n - 1)
    assert gap(crossover + 1e-3) < 0


# -- batch means ----------------------------------------------------------------

def test_batch_means_on_iid_normal_has_nominal_coverage():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(400):
        bm = batch_means(rng.normal(3.0, 1.0, 3000))
        hits += abs(bm.mean - 3.0) <= bm.ci95
    assert 0.91 <= hits / 400 <= 0.99


def test_batch_means_needs_enough_data():
    with pytest.raises(ValueError):
        batch_means(np.ones(10))


# -- Monte-Carlo counterparts --------------------------------------------------------

@pytest.mark.parametrize("dist", [EXP1, SHIFTED, PARETO])
@pytest.mark.parametrize("K", [1, 3, 8])
def test_ksync_monte_carlo_matches_exact(dist, K):
    mc = monte_carlo_runtime(cfg("ksync", K), dist, 30_000, seed=K)
    exact = expected_runtime(cfg("ksync", K), dist).value
    assert abs(mc.mean - exact) <= 3 * mc.ci95


def test_kbatchasync_pareto_renewal():
    mc = monte_carlo_runtime(cfg("kbatchasync", 2), PARETO, 100_000, seed=1)
    assert abs(mc.mean / 0.5 - 1) <= 0.01
    assert abs(mc.pushes / mc.sim_time / (8 / 2.0) - 1) <= 0.01


@pytest.mark.parametrize("K", [1, 2, 5])
def test_kasync_exponential_exactness(K):
    mc = monte_carlo_runtime(cfg("kasync", K), EXP1, 40_000, seed=10 + K)
    assert abs(mc.mean - dm.expected_order_statistic(EXP1, K, 8).value) <= 3 * mc.ci95


def test_kbatchsync_exponential_exactness():
    mc = monte_carlo_runtime(cfg("kbatchsync", 4), EXP1, 40_000, seed=3)
    assert abs(mc.mean - 4 / 8) <= 3 * mc.ci95


@pytest.mark.parametrize("dist", [SHIFTED, PARETO])
@pytest.mark.parametrize("K", [2, 4])
def test_table_ordering_by_simulation(dist, K):
    m = {v: monte_carlo_runtime(VariantConfig(v, K, 8), dist, 20_000, seed=K) for v in Variant}
    tol = lambda a, b: 3 * (m[a].ci95 + m[b].ci95)  # noqa: E731
    assert m[Variant.KBATCHASYNC].mean <= m[Variant.KASYNC].mean + tol(Variant.KBATCHASYNC, Variant.KASYNC)
    assert m[Variant.KASYNC].mean <= m[Variant.KSYNC].mean + tol(Variant.KASYNC, Variant.KSYNC)
    assert m[Variant.KBATCHSYNC].mean <= m[Variant.KSYNC].mean + tol(Variant.KBATCHSYNC, Variant.KSYNC)
    ksync_exact = expected_runtime(VariantConfig(Variant.KSYNC, K, 8), dist).value
    assert m[Variant.KASYNC].mean <= ksync_exact + 3 * m[Variant.KASYNC].ci95


def test_speedup_ratio_of_two_monte_carlo_runs():
    P = 4
    sync = monte_carlo_runtime(cfg("ksync", P, P), SHIFTED, 30_000, seed=1)
    asyn = monte_carlo_runtime(cfg("kbatchasync", 1, P), SHIFTED, 30_000, seed=2)
    ratio = sync.mean / asyn.mean
    # delta-method half-width of the ratio
    half = ratio * math.hypot(sync.ci95 / sync.mean, asyn.ci95 / asyn.mean)
    assert abs(ratio - speedup_sync_over_async(SHIFTED, P)) <= 3 * half


def test_monte_carlo_is_seed_deterministic():
    a = monte_carlo_runtime(cfg("kasync", 2), PARETO, 1000, seed=5)
    b = monte_carlo_runtime(cfg("kasync", 2), PARETO, 1000, seed=5)
    assert a == b


def test_monte_carlo_needs_100_iterations():
    with pytest.raises(ValueError):
        monte_carlo_runtime(cfg("ksync", 1), EXP1, 99)
