import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import comb

from staleracer import delays as dm

EXP1 = dm.Exponential(1.0)
SHIFTED = dm.ShiftedExponential(1.0, 1.0)
PARETO = dm.Pareto(2.0, 1.0)
HYPER = dm.HyperExponential((0.5, 0.5), (1.0, 10.0))
CLOSED_FORM = [EXP1, SHIFTED, PARETO, dm.Exponential(2.5), dm.ShiftedExponential(0.3, 4.0),
               dm.Pareto(3.5, 0.7)]

# H_8 = 761/280, frozen from exact rational arithmetic
H8 = 761 / 280


def exact_harmonic(n):
    return sum(Fraction(1, i) for i in range(1, n + 1))


def order_stat_by_integration(dist, K, P):
    """E[X_{K:P}] = int_0^inf P(fewer than K of P draws are <= x) dx."""
    def tail(x):
        S = float(dm.survival(dist, x))
        F = 1.0 - S
        return sum(comb(P, i) * F**i * S ** (P - i) for i in range(K))
    lo = getattr(dist, "shift", 0.0) or 0.0
    lo = getattr(dist, "scale", lo) if isinstance(dist, dm.Pareto) else lo
    val, _ = integrate.quad(tail, lo, np.inf, limit=400, epsabs=1e-12, epsrel=1e-11)
    return lo + val


# -- construction ----------------------------------------------------------

@pytest.mark.parametrize("bad", [
    lambda: dm.Exponential(0.0),
    lambda: dm.Exponential(-1.0),
    lambda: dm.ShiftedExponential(-0.1, 1.0),
    lambda: dm.Pareto(1.0, 1.0),
    lambda: dm.Pareto(0.5, 1.0),
    lambda: dm.Pareto(2.0, 0.0),
    lambda: dm.HyperExponential((0.5, 0.4), (1.0, 2.0)),
    lambda: dm.HyperExponential((0.5, 0.5), (1.0,)),
    lambda: dm.HyperExponential((0.5, 0.5), (1.0, 0.0)),
])
def test_invalid_parameters_rejected(bad):
    with pytest.raises(dm.DelayModelError):
        bad()


def test_branch_probs_tolerance_is_1e_12():
    dm.HyperExponential((0.5, 0.5 + 5e-13), (1.0, 2.0))
    with pytest.raises(dm.DelayModelError):
        dm.HyperExponential((0.5, 0.5 + 1e-11), (1.0, 2.0))


# -- sampling ----------------------------------------------------------------

def test_same_seed_same_sequence():
    a = dm.sample_array(EXP1, np.random.default_rng(42), 1000)
    b = dm.sample_array(EXP1, np.random.default_rng(42), 1000)
    assert np.array_equal(a, b)
    assert np.all(a > 0)
    s1 = dm.DelayStream(PARETO, 9)
    s2 = dm.DelayStream(PARETO, 9)
    assert [s1() for _ in range(5000)] == [s2() for _ in range(5000)]


@pytest.mark.parametrize("dist,lower", [(SHIFTED, 1.0), (PARETO, 1.0), (EXP1, 0.0), (HYPER, 0.0)])
def test_support_lower_bound(dist, lower):
    x = dm.sample_array(dist, np.random.default_rng(1), 200_000)
    assert np.all(x >= lower)
    assert np.all(x > 0)


@pytest.mark.parametrize("dist,tol", [(EXP1, 0.01), (SHIFTED, 0.01), (HYPER, 0.01), (PARETO, 0.05)])
def test_sample_mean_converges(dist, tol):
    x = dm.sample_array(dist, np.random.default_rng(2), 1_000_000)
    assert abs(x.mean() / dm.mean(dist) - 1) <= tol


def test_sample_is_scalar_float():
    v = dm.sample(SHIFTED, np.random.default_rng(0))
    assert isinstance(v, float) and v >= 1.0


# -- means -----------------------------------------------------------------------

@pytest.mark.parametrize("dist,expected", [
    (EXP1, 1.0), (SHIFTED, 2.0), (PARETO, 2.0), (dm.Exponential(4.0), 0.25),
    (HYPER, 0.5 * 1.0 + 0.5 * 0.1), (dm.Pareto(3.0, 2.0), 3.0),
])
def test_mean(dist, expected):
    assert dm.mean(dist) == pytest.approx(expected, rel=1e-15)


# -- harmonic numbers and order statistics ---------------------------------------

@given(st.integers(1, 3000))
def test_harmonic_matches_rational(n):
    assert dm.harmonic(n) == pytest.approx(float(exact_harmonic(n)), rel=1e-15)


def test_harmonic_log_approx_is_close_for_large_n():
    assert abs(dm.harmonic_log_approx(10_000) - dm.harmonic(10_000)) < 1e-4


def test_exponential_order_statistic_examples():
    assert dm.expected_order_statistic(EXP1, 1, 8).value == pytest.approx(0.125, abs=1e-15)
    assert dm.expected_order_statistic(EXP1, 8, 8).value == pytest.approx(H8, abs=1e-14)
    assert dm.expected_order_statistic(EXP1, 8, 8).stderr is None


@pytest.mark.parametrize("dist", CLOSED_FORM)
@pytest.mark.parametrize("K,P", [(1, 1), (1, 4), (3, 4), (4, 4), (2, 8), (8, 8), (5, 16)])
def test_closed_form_matches_numerical_integration(dist, K, P):
    closed = dm.expected_order_statistic(dist, K, P).value
    assert closed == pytest.approx(order_stat_by_integration(dist, K, P), rel=1e-7)


def test_pareto_gamma_formula_frozen_values():
    # K=P=2, alpha=2, x_m=1: Gamma(3)Gamma(1/2)/(Gamma(1)Gamma(5/2)) = 8/3
    assert dm.expected_order_statistic(PARETO, 2, 2).value == pytest.approx(8 / 3, rel=1e-14)
    # min of P Pareto(alpha) is Pareto(P alpha): mean P alpha/(P alpha - 1)
    assert dm.expected_order_statistic(PARETO, 1, 8).value == pytest.approx(16 / 15, rel=1e-14)


def test_pareto_large_P_does_not_overflow():
    v = dm.expected_order_statistic(PARETO, 1000, 1000).value
    assert math.isfinite(v) and v > 1


@pytest.mark.parametrize("dist", [EXP1, SHIFTED, PARETO])
@pytest.mark.parametrize("K,P", [(2, 2), (1, 8), (4, 8)])
def test_closed_form_agrees_with_monte_carlo(dist, K, P):
    cf = dm.expected_order_statistic(dist, K, P).value
    mc = dm.expected_order_statistic(dist, K, P, dm.MonteCarlo(1_000_000, seed=K * 31 + P))
    assert mc.stderr > 0
    assert abs(mc.value - cf) <= 4 * mc.stderr


def test_monte_carlo_is_deterministic_and_chunking_is_order_free():
    a = dm.expected_order_statistic(HYPER, 2, 4, dm.MonteCarlo(60_000, 3, chunk=10_000))
    b = dm.expected_order_statistic(HYPER, 2, 4, dm.MonteCarlo(60_000, 3, chunk=10_000))
    assert a == b
    assert a.value == pytest.approx(order_stat_by_integration(HYPER, 2, 4), abs=4 * a.stderr)


def test_hyperexponential_has_no_closed_form():
    with pytest.raises(dm.UnsupportedClosedForm):
        dm.expected_order_statistic(HYPER, 1, 2)


@pytest.mark.parametrize("K,P", [(0, 4), (5, 4), (-1, 3), (1, 0)])
def test_invalid_rank(K, P):
    with pytest.raises(dm.InvalidRank):
        dm.expected_order_statistic(EXP1, K, P)


@pytest.mark.parametrize("dist", CLOSED_FORM)
@pytest.mark.parametrize("P", [2, 4, 8, 16])
def test_order_statistic_monotone_in_K_and_P(dist, P):
    vals = [dm.expected_order_statistic(dist, K, P).value for K in range(1, P + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    for K in range(1, P + 1):
        assert (dm.expected_order_statistic(dist, K, 2 * P).value
                <= dm.expected_order_statistic(dist, K, P).value)


@given(shift=st.floats(0, 50), rate=st.floats(0.01, 100), P=st.integers(1, 64), data=st.data())
def test_shift_commutes_with_order_statistics(shift, rate, P, data):
    K = data.draw(st.integers(1, P))
    lhs = dm.expected_order_statistic(dm.ShiftedExponential(shift, rate), K, P).value
    rhs = shift + dm.expected_order_statistic(dm.Exponential(rate), K, P).value
    assert lhs == rhs


# -- aging --------------------------------------------------------------------------

@pytest.mark.parametrize("dist,cls", [
    (EXP1, dm.AgingClass.MEMORYLESS),
    (SHIFTED, dm.AgingClass.NEW_LONGER_THAN_USED),
    (PARETO, dm.AgingClass.NEW_LONGER_THAN_USED),
    (HYPER, dm.AgingClass.NEW_SHORTER_THAN_USED),
    (dm.ShiftedExponential(0.0, 2.0), dm.AgingClass.MEMORYLESS),
    (dm.HyperExponential((0.3, 0.7), (2.0, 2.0)), dm.AgingClass.MEMORYLESS),
])
def test_classify_aging(dist, cls):
    assert dm.classify_aging(dist) is cls


@pytest.mark.parametrize("dist", [EXP1, SHIFTED, HYPER, dm.ShiftedExponential(3.0, 0.5),
                                  dm.HyperExponential((0.2, 0.3, 0.5), (0.5, 2.0, 9.0))])
def test_aging_inequality_on_grid(dist):
    # P(U > u + t | U > t) vs P(U > u)
    grid = np.linspace(0.0, 6.0, 41)
    t, u = np.meshgrid(grid, grid)
    cond = dm.survival(dist, u + t) / dm.survival(dist, t)
    fresh = dm.survival(dist, u)
    cls = dm.classify_aging(dist)
    if cls is dm.AgingClass.NEW_LONGER_THAN_USED:
        assert np.all(cond <= fresh + 1e-12)
    elif cls is dm.AgingClass.NEW_SHORTER_THAN_USED:
        assert np.all(cond >= fresh - 1e-12)
    else:
        assert np.allclose(cond, fresh, rtol=1e-12)


def test_pareto_aging_inequality_only_holds_near_the_scale():
    # The table files Pareto under new-longer-than-used; the defining
    # inequality holds for elapsed time t = scale but fails deep in the tail.
    grid = np.linspace(0.0, 6.0, 41)
    at_scale = dm.survival(PARETO, grid + 1.0) / dm.survival(PARETO, 1.0)
    assert np.all(at_scale <= dm.survival(PARETO, grid) + 1e-12)
    assert dm.survival(PARETO, 10.0) / dm.survival(PARETO, 5.0) > dm.survival(PARETO, 5.0)


@pytest.mark.parametrize("dist,P,kind,value", [
    (EXP1, 8, dm.P0Kind.EXACT, 0.125),
    (SHIFTED, 8, dm.P0Kind.UPPER, 0.125),
    (PARETO, 8, dm.P0Kind.UPPER, 0.125),
    (HYPER, 4, dm.P0Kind.LOWER, 0.25),
])
def test_p0_bound(dist, P, kind, value):
    assert dm.p0_bound(dist, P) == (kind, value)


def test_p0_bound_needs_a_worker():
    with pytest.raises(ValueError):
        dm.p0_bound(EXP1, 0)


# -- config tags -----------------------------------------------------------------------

@pytest.mark.parametrize("dist", [EXP1, SHIFTED, PARETO, HYPER])
def test_tagged_round_trip(dist):
    assert dm.from_dict(dm.to_dict(dist)) == dist


def test_tagged_errors():
    with pytest.raises(dm.DelayModelError):
        dm.from_dict({"kind": "weibull", "shape": 2})
    with pytest.raises(dm.DelayModelError):
        dm.from_dict({"kind": "shifted_exponential", "rate": 1.0})


def test_labels():
    assert [dm.label(d) for d in (EXP1, SHIFTED, PARETO)] == ["Exp(1)", "1+Exp(1)", "Pareto(2,1)"]
