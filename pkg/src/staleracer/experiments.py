"""Sweeps over (variant, K) and delay distributions, emitted as plot-ready CSV."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import delays as dm
from .runtime import (BoundInapplicable, RuntimeKind, Variant, VariantConfig, expected_runtime,
                      monte_carlo_runtime, speedup_sync_over_async)
from .simulator import Seeds, Trace, run

FLOOR_WINDOW = 0.2


def fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if x != x else f"{x:.9g}"
    return str(x)


def write_csv(rows, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def replication_seeds(base: Seeds, r: int) -> Seeds:
    return Seeds(base.delay_seed + r, base.data_seed + r)


def final_floor(trace: Trace, window: float = FLOOR_WINDOW) -> float:
    """Mean excess loss over the trailing ``window`` fraction of updates."""
    el = trace.excess_loss()
    n = max(1, int(round(window * el.size)))
    return float(np.nanmean(el[-n:]))


def time_to_target(trace: Trace, target: float) -> float:
    """First simulated time at which the excess loss is at or below ``target``
    (NaN if never reached)."""
    el = trace.excess_loss()
    hit = np.flatnonzero(el <= target)
    return float(trace.records[hit[0]].wallclock) if hit.size else math.nan


def _run_job(job):
    cfg, dist, oracle, w0, horizon, seeds, cadence = job
    return run(cfg, dist, oracle, w0, horizon, seeds, loss_every=cadence)


def run_replications(jobs, n_jobs: int = 1) -> list:
    """Run independent simulations; results come back in job order."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        traces = list(pool.map(_run_job, jobs))
    for t in traces:
        t.sim = None
    return traces


def _iqr(x) -> float:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return math.nan
    q1, q3 = np.percentile(x, [25, 75])
    return float(q3 - q1)


def _median(x) -> float:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    return float(np.median(x)) if x.size else math.nan


@dataclass
class FrontierPoint:
    variant: Variant
    K: int
    target: float
    time_to_target: float  # median over replications that reached it
    time_to_target_iqr: float
    reached: int
    replications: int
    final_floor: float  # median trailing-window excess loss
    final_floor_iqr: float

    @property
    def target_unreached(self) -> bool:
        return self.reached == 0


def sweep_tradeoff(exp, targets=None, n_jobs: int = 1) -> list:
    """Error-runtime frontier: time-to-target and final floor per (variant, K)."""
    targets = list(exp.targets if targets is None else targets)
    if not targets or any(t <= 0 for t in targets):
        raise ValueError("targets must be a non-empty list of positive loss levels")
    if any(b >= a for a, b in zip(targets, targets[1:])):
        raise ValueError("targets must be decreasing")
    jobs, keys = [], []
    for cfg in exp.variants:
        for r in range(exp.replications):
            jobs.append((cfg, exp.dist, exp.oracle, exp.w0, exp.horizon,
                         replication_seeds(exp.seeds, r), exp.loss_cadence))
            keys.append(cfg)
    traces = run_replications(jobs, n_jobs)
    by_cfg: dict = {}
    for cfg, tr in zip(keys, traces):
        by_cfg.setdefault(cfg, []).append(tr)
    points = []
    for cfg in sorted(by_cfg, key=lambda c: (c.K, list(Variant).index(c.variant))):
        trs = by_cfg[cfg]
        floors = [final_floor(t) for t in trs]
        for target in targets:
            times = [time_to_target(t, target) for t in trs]
            points.append(FrontierPoint(cfg.variant, cfg.K, target, _median(times), _iqr(times),
                                        int(np.sum(~np.isnan(times))), len(trs),
                                        _median(floors), _iqr(floors)))
    return points


def frontier_rows(points):
    rows = [["variant", "K", "target", "time_to_target_median", "time_to_target_iqr", "reached",
             "replications", "final_floor_median", "final_floor_iqr", "target_unreached"]]
    for p in points:
        rows.append([p.variant.value, p.K, p.target, p.time_to_target, p.time_to_target_iqr,
                     p.reached, p.replications, p.final_floor, p.final_floor_iqr,
                     int(p.target_unreached)])
    return rows


PAPER_DISTS = (dm.Exponential(1.0), dm.ShiftedExponential(1.0, 1.0), dm.Pareto(2.0, 1.0))


class SpeedupPoint(NamedTuple):
    dist: str
    P: int
    log_speedup: float
    ci95: float
    method: str


def speedup_curve(dists=PAPER_DISTS, P_values=(1, 2, 4, 8, 16, 32), mc_samples: int = 200_000,
                  seed: int = 0) -> list:
    """log(E[T_sync] / E[T_async]) per distribution and worker count."""
    out = []
    for dist in dists:
        for P in P_values:
            try:
                s = speedup_sync_over_async(dist, P)
                out.append(SpeedupPoint(dm.label(dist), P, math.log(s), 0.0, "analytic"))
            except dm.UnsupportedClosedForm:
                est = dm.expected_order_statistic(dist, P, P, dm.MonteCarlo(mc_samples, seed))
                s = P * est.value / dm.mean(dist)
                out.append(SpeedupPoint(dm.label(dist), P, math.log(s),
                                        1.96 * est.stderr / est.value, "monte_carlo"))
    return out


def speedup_rows(points):
    return [["dist", "P", "log_speedup", "ci95", "method"]] + [list(p) for p in points]


class VerifyRow(NamedTuple):
    variant: str
    K: int
    P: int
    dist: str
    analytic: float
    kind: str
    mc_mean: float
    mc_ci95: float
    passed: bool


def verify(dists=PAPER_DISTS, P: int = 8, Ks=(1, 2, 4, 8), iterations: int = 20_000,
           seed: int = 0, sigmas: float = 3.0) -> list:
    """Monte-Carlo runtime vs the analytical value or bound for each cell.

    Exact values pass when |mc - analytic| <= sigmas * ci95; upper bounds
    pass when mc <= analytic + sigmas * ci95.
    """
    rows = []
    for dist in dists:
        for variant in Variant:
            for K in Ks:
                if K > P:
                    continue
                cfg = VariantConfig(variant, K, P)
                mc = monte_carlo_runtime(cfg, dist, iterations, seed)
                try:
                    res = expected_runtime(cfg, dist)
                except BoundInapplicable:
                    rows.append(VerifyRow(variant.value, K, P, dm.label(dist), math.nan,
                                          "inapplicable", mc.mean, mc.ci95, True))
                    continue
                if res.kind is RuntimeKind.EXACT:
                    ok = abs(mc.mean - res.value) <= sigmas * mc.ci95
                else:
                    ok = mc.mean <= res.value + sigmas * mc.ci95
                rows.append(VerifyRow(variant.value, K, P, dm.label(dist), res.value,
                                      res.kind.value, mc.mean, mc.ci95, bool(ok)))
    return rows


def verify_rows(rows):
    out = [["variant", "K", "P", "dist", "analytic", "kind", "mc_mean", "mc_ci95", "pass"]]
    out += [list(r[:-1]) + [int(r.passed)] for r in rows]
    return out
