"""Release-gate checks: simulation against every analytical result.

Each criterion returns a :class:`CriterionResult`; :func:`run_acceptance`
runs them all and never raises on a failing check (failures are entries in
the report).  Tolerances are fixed here and not tuned per run.
"""

from __future__ import annotations

import functools
import json
import math
import time
import traceback
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adasync as ada
from . import delays as dm
from . import objectives as ob
from .experiments import final_floor, speedup_curve, time_to_target
from .runtime import (Variant, VariantConfig, batch_means, monte_carlo_runtime,
                      shifted_exp_consecutive_bound)
from .simulator import Seeds, Simulation, SimTime, empirical_p0, empirical_p0_stderr, pooled_gamma, run

# quadratic testbed shared by the error-floor, bound and AdaSync criteria
DIM, C, L, SIGMA_SQ, M, ETA, P = 10, 1.0, 4.0, 1.0, 1, 0.05, 8
REPLICATIONS = 20
ERROR_HORIZON = 2000
ADASYNC_BUDGET = 4000.0


def testbed():
    obj = ob.Quadratic.log_spaced(DIM, C, L)
    return obj, ob.GradientOracle(obj, ob.AdditiveGaussian(SIGMA_SQ), M), np.ones(DIM)


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    measured: object
    expected: object
    tolerance: str
    seconds: float = 0.0
    budget: float | None = None
    details: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.budget:.0f}s" if self.budget else ""
        return (f"[{status}] C{self.id:02d} {self.name}: measured={self.measured} "
                f"expected={self.expected} tol={self.tolerance} ({self.seconds:.1f}s{budget})")


def _criterion(cid, name, budget=None):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper():
            t0 = time.perf_counter()
            try:
                res = fn()
            except Exception as exc:  # a crash is a failed criterion, not a crashed report
                res = CriterionResult(cid, name, False, f"error: {exc!r}", "-", "-",
                                      details=traceback.format_exc().splitlines()[-3:])
            res.id, res.name, res.budget = cid, name, budget
            res.seconds = time.perf_counter() - t0
            if budget is not None and res.seconds > budget:
                res.passed = False
                res.details.append(f"runtime {res.seconds:.1f}s exceeds budget {budget}s")
            return res
        wrapper.cid = cid
        CRITERIA[cid] = wrapper
        return wrapper
    return deco


CRITERIA: dict = {}


@_criterion(1, "K-sync runtime equals exponential order statistic", budget=30)
def c01_exponential_order_statistics():
    worst, details = 0.0, []
    for K in range(1, 9):
        mc = monte_carlo_runtime(VariantConfig(Variant.KSYNC, K, 8), dm.Exponential(1.0),
                                 100_000, seed=100 + K)
        exact = dm.harmonic(8) - dm.harmonic(8 - K)
        rel = abs(mc.mean / exact - 1.0)
        worst = max(worst, rel)
        details.append(f"K={K}: mc={mc.mean:.6f} exact={exact:.6f} rel={rel:.4%}")
    return CriterionResult(1, "", worst <= 0.01, f"max rel err {worst:.4%}", "H_P - H_(P-K)",
                           "1%", details=details)


@_criterion(2, "sync/async speedup equals P*H_P", budget=60)
def c02_speedup():
    worst, details = 0.0, []
    for P_ in (2, 4, 8, 16):
        sync = monte_carlo_runtime(VariantConfig(Variant.KSYNC, P_, P_), dm.Exponential(1.0),
                                   100_000, seed=200 + P_)
        asyn = monte_carlo_runtime(VariantConfig(Variant.KBATCHASYNC, 1, P_), dm.Exponential(1.0),
                                   100_000, seed=300 + P_)
        ratio = sync.mean / asyn.mean
        exact = P_ * dm.harmonic(P_)
        rel = abs(ratio / exact - 1.0)
        worst = max(worst, rel)
        details.append(f"P={P_}: simulated={ratio:.5f} P*H_P={exact:.5f} rel={rel:.4%}")
    return CriterionResult(2, "", worst <= 0.02, f"max rel err {worst:.4%}", "P*H_P", "2%",
                           details=details)


@_criterion(3, "K-batch-async renewal rate under Pareto(2,1)", budget=60)
def c03_renewal():
    cfg = VariantConfig(Variant.KBATCHASYNC, 2, 8)
    dist = dm.Pareto(2.0, 1.0)
    sim = Simulation(cfg, dist, delay_seed=3)
    times = sim.iteration_times(100_000)
    mean_T = float(times[10_000:].mean())
    rate = sim.pushes / sim.now
    rel_T = abs(mean_T / 0.5 - 1.0)
    rel_rate = abs(rate / (8 / dm.mean(dist)) - 1.0)
    ok = rel_T <= 0.01 and rel_rate <= 0.01
    return CriterionResult(3, "", ok, f"E[T]={mean_T:.5f}, push rate={rate:.5f}",
                           "E[T]=0.5, rate=4.0", "1% each",
                           details=[f"rel err T={rel_T:.4%}", f"rel err rate={rel_rate:.4%}"])


@_criterion(4, "K-batch-sync and K-async runtime bounds (new-longer-than-used)", budget=120)
def c04_nlu_bounds():
    ok, details, worst = True, [], -math.inf
    for dist in (dm.ShiftedExponential(1.0, 1.0), dm.Pareto(2.0, 1.0)):
        for K in (2, 4):
            checks = [
                (Variant.KBATCHSYNC, K * dm.expected_order_statistic(dist, 1, 8).value),
                (Variant.KASYNC, dm.expected_order_statistic(dist, K, 8).value),
            ]
            for variant, bound in checks:
                mc = monte_carlo_runtime(VariantConfig(variant, K, 8), dist, 50_000,
                                         seed=400 + K)
                good = mc.mean <= bound + 3 * mc.ci95
                ok &= good
                worst = max(worst, (mc.mean - bound) / bound)
                details.append(f"{dm.label(dist)} {variant.value} K={K}: mc={mc.mean:.4f} "
                               f"+-{mc.ci95:.4f} bound={bound:.4f} {'ok' if good else 'VIOLATED'}")
    return CriterionResult(4, "", ok, f"max (mc-bound)/bound={worst:.3f}", "mc <= bound",
                           "+3 CI", details=details)


@_criterion(5, "shifted-exponential n-iteration K-async bound", budget=120)
def c05_consecutive():
    ok, details = True, []
    K, P_, mu = 2, 8, 1.0
    n = P_ // K
    for shift in (1.0, 5.0):
        bound = shifted_exp_consecutive_bound(shift, mu, K, P_).n_iteration_total
        sim = Simulation(VariantConfig(Variant.KASYNC, K, P_), dm.ShiftedExponential(shift, mu),
                         delay_seed=500 + int(shift))
        times = sim.iteration_times(100_000)[10_000:]
        blocks = times[: times.size // n * n].reshape(-1, n).sum(axis=1)
        bm = batch_means(blocks)
        ksync4 = n * (shift + (dm.harmonic(P_) - dm.harmonic(P_ - K)) / mu)
        good = bm.mean <= bound + 3 * bm.ci95 and bound < ksync4
        ok &= good
        details.append(f"shift={shift:g}: mc(4 iters)={bm.mean:.4f}+-{bm.ci95:.4f} "
                       f"bound={bound:.4f} 4xKsync={ksync4:.4f}")
    return CriterionResult(5, "", ok, "; ".join(details), "mc <= bound < 4x K-sync", "+3 CI",
                           details=details)


@_criterion(6, "fresh-gradient probability p0 for 1-async", budget=60)
def c06_p0():
    cfg = VariantConfig(Variant.KASYNC, 1, 8)
    p = 1 / 8
    cases = [
        ("exact", dm.Exponential(1.0)),
        ("upper", dm.ShiftedExponential(1.0, 1.0)),
        ("lower", dm.HyperExponential((0.5, 0.5), (1.0, 10.0))),
    ]
    ok, details = True, []
    for kind, dist in cases:
        tr = run(cfg, dist, None, None, 100_000, Seeds(600, 0))
        p0, se = empirical_p0_stderr(tr)
        good = {"exact": abs(p0 - p) <= 3 * se, "upper": p0 <= p + 3 * se,
                "lower": p0 >= p - 3 * se}[kind]
        ok &= good
        details.append(f"{dm.label(dist)}: p0={p0:.5f} se={se:.5f} ({kind} 1/8)")
    return CriterionResult(6, "", ok, "; ".join(details), "1/8", "3 SE", details=details)


def serial_sgd(obj, sigma_sq, m, K, eta, w0, J, seed):
    """Mini-batch SGD with batch K*m made of K draws of size-m gradient noise."""
    rng = np.random.default_rng(seed)
    scale = math.sqrt(sigma_sq / (m * obj.dim))
    w = np.array(w0, dtype=float)
    out = []
    for _ in range(J):
        grads = [obj.gradient(w) + scale * rng.standard_normal(obj.dim) for _ in range(K)]
        w = w - eta / K * sum(grads)
        out.append(w)
    return out


@_criterion(7, "K-sync trajectory equals serial mini-batch SGD bitwise")
def c07_serial_equivalence():
    obj = ob.Quadratic.log_spaced(DIM, C, L)
    K, m, J = 4, 2, 1000
    oracle = ob.GradientOracle(obj, ob.AdditiveGaussian(SIGMA_SQ), m)
    w0 = np.ones(DIM)
    tr = run(VariantConfig(Variant.KSYNC, K, P, m, ETA), dm.Exponential(1.0), oracle, w0, J,
             Seeds(7, 77), keep_params=True)
    ref = serial_sgd(obj, SIGMA_SQ, m, K, ETA, w0, J, 77)
    equal = sum(np.array_equal(a, b) for a, b in zip(tr.params(), ref))
    return CriterionResult(7, "", equal == J, f"{equal}/{J} iterates identical", f"{J}/{J}",
                           "bitwise")


@functools.lru_cache(maxsize=None)
def _testbed_runs(variant: Variant, K: int):
    obj, oracle, w0 = testbed()
    cfg = VariantConfig(variant, K, P, M, ETA)
    return [run(cfg, dm.Exponential(1.0), oracle, w0, ERROR_HORIZON, Seeds(1000 + r, 2000 + r))
            for r in range(REPLICATIONS)]


@_criterion(8, "K-sync error floor", budget=120)
def c08_error_floor():
    medians, ok, details = [], True, []
    for K in (1, 2, 4, 8):
        floors = [final_floor(t) for t in _testbed_runs(Variant.KSYNC, K)]
        med = float(np.median(floors))
        bound = ETA * L * SIGMA_SQ / (2 * C * K * M)
        good = med <= 1.1 * bound
        ok &= good
        medians.append(med)
        details.append(f"K={K}: median floor={med:.5f} bound={bound:.5f}")
    monotone = all(b < a for a, b in zip(medians, medians[1:]))
    if not monotone:
        details.append("floors not decreasing in K")
    return CriterionResult(8, "", ok and monotone, [round(x, 6) for x in medians],
                           "<= 1.1 * eta L sigma^2 / (2cKm), decreasing in K", "1.1x",
                           details=details)


def _async_bound_inputs(K):
    traces = _testbed_runs(Variant.KASYNC, K)
    gamma = pooled_gamma(traces)
    p0 = float(np.mean([empirical_p0(t) for t in traces]))
    return traces, gamma, p0


@_criterion(9, "K-async error bound with measured gamma and p0", budget=180)
def c09_kasync_bound():
    ok, details, margins = True, [], []
    for K in (1, 4):
        traces, gamma, p0 = _async_bound_inputs(K)
        if gamma > 1:
            ok = False
            details.append(f"K={K}: measured gamma={gamma:.4f} > 1, gamma'={1 - gamma + p0 / 2:.4f}; "
                           "the bound's hypothesis gamma <= 1 does not hold")
            continue
        b = ob.BoundInputs(eta=ETA, c=C, L=L, sigma_sq=SIGMA_SQ, K=K, m=M, gamma=gamma, p0=p0,
                           F0_minus_Fstar=traces[0].loss0 - traces[0].f_star)
        mean_curve = np.mean([t.excess_loss() for t in traces], axis=0)
        bound = ob.kasync_error_bound(np.arange(1, mean_curve.size + 1), b).value
        worst = float(np.min(bound - mean_curve))
        margins.append(worst)
        good = worst >= 0
        ok &= good
        details.append(f"K={K}: gamma={gamma:.4f} p0={p0:.4f} gamma'={b.gamma_prime:.4f} "
                       f"min(bound-mean)={worst:.5f} at {int(np.sum(bound < mean_curve))} violations")
    return CriterionResult(9, "", ok, "; ".join(details), "bound >= mean excess loss at every j",
                           "one-sided", details=details)


@_criterion(10, "non-convex ergodic bound with measured gamma'")
def c10_ergodic():
    ok, details = True, []
    for K in (1, 4):
        traces, gamma, p0 = _async_bound_inputs(K)
        if gamma > 1:
            ok = False
            details.append(f"K={K}: measured gamma={gamma:.4f} > 1; hypothesis gamma <= 1 fails")
            continue
        b = ob.BoundInputs(eta=ETA, c=C, L=L, sigma_sq=SIGMA_SQ, K=K, m=M, gamma=gamma, p0=p0,
                           F0_minus_Fstar=traces[0].loss0 - traces[0].f_star)
        avg = float(np.mean([t.grad_norm_sq.mean() for t in traces]))
        bound = ob.nonconvex_ergodic_bound(ERROR_HORIZON, b)
        good = avg <= bound
        ok &= good
        details.append(f"K={K}: mean ||grad||^2={avg:.5f} bound={bound:.5f}")
    return CriterionResult(10, "", ok, "; ".join(details), "average <= bound", "one-sided",
                           details=details)


RULE_DISTS = {
    Variant.KSYNC: dm.Exponential(1.0),
    Variant.KBATCHSYNC: dm.Exponential(1.0),
    Variant.KASYNC: dm.ShiftedExponential(1.0, 1.0),
    Variant.KBATCHASYNC: dm.Pareto(2.0, 1.0),
}


def brute_force_K(variant, K0, ratio, P_):
    """Integer argmin of u(K) with constants chosen so that K0 is optimal at F0.

    Calibration uses a numerical derivative of the runtime model, so this
    path shares no algebra with the closed-form rule.
    """
    dist = RULE_DISTS[variant]
    F0, F_start = 1.0, 1.0 / ratio
    h = 1e-6
    dT = (ada.runtime_model(variant, K0 + h, P_, dist)
          - ada.runtime_model(variant, K0 - h, P_, dist)) / (2 * h)
    noise_term = 2.0 * F0 * dT * K0 * K0  # L eta sigma^2 / m with t = eta = gamma' = 1
    best, best_u = None, math.inf
    for K in range(1, P_ + 1):
        T = ada.runtime_model(variant, K, P_, dist)
        u = ada.objective_u(K, F_start, T, 1.0, 1.0, 1.0, noise_term, 1.0, 1.0)
        if u < best_u:
            best, best_u = K, u
    return best, noise_term


@_criterion(11, "AdaSync closed-form K vs brute-force minimisation")
def c11_adasync_rules():
    ok, n, details = True, 0, []
    for P_ in (8, 16, 64):
        for variant in Variant:
            cfg = ada.AdaSyncConfig(variant, 1, 1.0, P_, ada.Rounding.NEAREST, monotone=False)
            for K0 in (1, 2, 3):
                for ratio in (1, 2, 4, 16, 64):
                    K_rule = ada.next_K(cfg, K0, 1.0, 1.0 / ratio, P_)
                    K_bf, noise_term = brute_force_K(variant, K0, ratio, P_)
                    n += 1
                    if abs(K_rule - K_bf) > 1:
                        ok = False
                        details.append(f"{variant.value} P={P_} K0={K0} ratio={ratio}: "
                                       f"rule={K_rule} brute={K_bf}")
                    # curvature of u at the returned K (skip the K=P log singularity)
                    if K_rule < P_ - 1:
                        dist = RULE_DISTS[variant]
                        us = [ada.objective_u(k, 1.0 / ratio, ada.runtime_model(variant, k, P_, dist),
                                              1.0, 1.0, 1.0, noise_term, 1.0, 1.0)
                              for k in (K_rule - 0.5, K_rule, K_rule + 0.5)]
                        if not us[0] - 2 * us[1] + us[2] > 0:
                            ok = False
                            details.append(f"{variant.value} P={P_} K={K_rule}: d2u/dK2 <= 0")
    return CriterionResult(11, "", ok, f"{n - len(details)}/{n} cases agree",
                           "|rule - brute force| <= 1", "1 integer step", details=details)


@_criterion(12, "AdaSync beats fixed K=P on error vs time", budget=300)
def c12_adasync_end_to_end():
    obj, oracle, w0 = testbed()
    dist = dm.Exponential(1.0)
    fixed = [run(VariantConfig(Variant.KASYNC, P, P, M, ETA), dist, oracle, w0,
                 SimTime(ADASYNC_BUDGET), Seeds(3000 + r, 4000 + r)) for r in range(REPLICATIONS)]
    cfg = ada.AdaSyncConfig(Variant.KASYNC, 1, 20.0, P)
    adaptive = [ada.run_adasync(cfg, dist, oracle, w0, ADASYNC_BUDGET, ETA,
                                Seeds(3000 + r, 4000 + r)) for r in range(REPLICATIONS)]
    floor_fixed = float(np.median([final_floor(t) for t in fixed]))
    floor_ada = float(np.median([final_floor(t) for t in adaptive]))
    target = 2 * floor_fixed
    t_fixed = float(np.median([time_to_target(t, target) for t in fixed]))
    t_ada = float(np.median([time_to_target(t, target) for t in adaptive]))
    ok = t_ada <= t_fixed and floor_ada <= 1.1 * floor_fixed
    return CriterionResult(
        12, "", ok,
        f"time-to-2x-floor ada={t_ada:.1f}s fixed={t_fixed:.1f}s; floor ada={floor_ada:.5f} "
        f"fixed={floor_fixed:.5f}",
        "ada time <= fixed time, ada floor <= 1.1 fixed floor", "median of 20 seeds",
        details=[f"final K per seed: {[int(t.K[-1]) for t in adaptive]}"])


@_criterion(13, "speedup curve increasing in P, Exp(1) = P*H_P")
def c13_speedup_curve():
    Ps = (2, 4, 8, 16, 32)
    pts = speedup_curve(P_values=Ps)
    ok, details = True, []
    for label in {p.dist for p in pts}:
        vals = [p.log_speedup for p in pts if p.dist == label]
        inc = all(b > a for a, b in zip(vals, vals[1:]))
        ok &= inc
        details.append(f"{label}: {[round(v, 4) for v in vals]}{'' if inc else ' NOT increasing'}")
    exp_vals = [p.log_speedup for p in pts if p.dist == "Exp(1)"]
    err = max(abs(v - math.log(P_ * dm.harmonic(P_))) for v, P_ in zip(exp_vals, Ps))
    ok &= err <= 1e-12
    return CriterionResult(13, "", ok, f"Exp(1) max |log err|={err:.2e}", "log(P*H_P)", "1e-12",
                           details=sorted(details))


def run_acceptance(ids=None, echo=None) -> list:
    results = []
    for cid in sorted(CRITERIA):
        if ids is not None and cid not in ids:
            continue
        res = CRITERIA[cid]()
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results


def report_json(results) -> str:
    return json.dumps([{**asdict(r), "measured": str(r.measured), "expected": str(r.expected)}
                       for r in results], indent=2)
