"""Expected runtime per iteration of the four aggregation protocols.

Analytical results come back as :class:`RuntimeResult` with an explicit
``kind`` so exact values and one-sided bounds are never mixed up.
:func:`monte_carlo_runtime` drives the event simulator (delays only) to
check them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import delays as dm
from .delays import AgingClass, DelayDistribution, InvalidRank


class BoundInapplicable(ValueError):
    """The delay distribution's aging class does not support the requested bound."""


class NotDivisible(ValueError):
    pass


class Variant(enum.Enum):
    KSYNC = "ksync"
    KBATCHSYNC = "kbatchsync"
    KASYNC = "kasync"
    KBATCHASYNC = "kbatchasync"

    @classmethod
    def parse(cls, v) -> "Variant":
        if isinstance(v, cls):
            return v
        key = str(v).lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown variant {v!r}; expected one of {[m.value for m in cls]}")

    @property
    def synchronous(self) -> bool:
        return self in (Variant.KSYNC, Variant.KBATCHSYNC)

    @property
    def batched(self) -> bool:
        return self in (Variant.KBATCHSYNC, Variant.KBATCHASYNC)


@dataclass(frozen=True)
class VariantConfig:
    variant: Variant
    K: int
    P: int
    m: int = 1
    eta: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not 1 <= self.K <= self.P:
            raise InvalidRank(f"need 1 <= K <= P, got K={self.K}, P={self.P}")
        if self.m < 1:
            raise ValueError("mini-batch size m must be >= 1")
        if not self.eta > 0:
            raise ValueError("learning rate must be positive")


class RuntimeKind(enum.Enum):
    EXACT = "exact"
    UPPER_BOUND = "upper_bound"


class RuntimeResult(NamedTuple):
    value: float
    kind: RuntimeKind
    assumptions: str = ""


def _os(dist, K, P) -> float:
    return dm.expected_order_statistic(dist, K, P).value


def _nlu_tag(dist) -> str:
    if isinstance(dist, dm.Pareto):
        # Pareto satisfies the aging inequality only for small elapsed times
        return "new-longer-than-used required (Pareto treated as such; holds only for t near scale)"
    return "new-longer-than-used required"


def expected_runtime(cfg: VariantConfig, dist: DelayDistribution) -> RuntimeResult:
    """Expected wallclock time between consecutive parameter updates."""
    K, P = cfg.K, cfg.P
    aging = dm.classify_aging(dist)
    v = cfg.variant
    if v is Variant.KSYNC:
        return RuntimeResult(_os(dist, K, P), RuntimeKind.EXACT, "any i.i.d. delays")
    if v is Variant.KBATCHASYNC:
        return RuntimeResult(K * dm.mean(dist) / P, RuntimeKind.EXACT,
                             "asymptotic in the number of iterations (renewal argument)")
    if aging is AgingClass.NEW_SHORTER_THAN_USED:
        raise BoundInapplicable(
            f"{v.value} runtime bound needs new-longer-than-used delays; "
            f"{dm.label(dist)} is new-shorter-than-used")
    if v is Variant.KBATCHSYNC:
        if aging is AgingClass.MEMORYLESS:
            # Erlang(K, P*mu): the bound is attained
            return RuntimeResult(K * _os(dist, 1, P), RuntimeKind.EXACT, "memoryless delays")
        return RuntimeResult(K * _os(dist, 1, P), RuntimeKind.UPPER_BOUND, _nlu_tag(dist))
    if aging is AgingClass.MEMORYLESS:
        return RuntimeResult(_os(dist, K, P), RuntimeKind.EXACT, "memoryless delays")
    return RuntimeResult(_os(dist, K, P), RuntimeKind.UPPER_BOUND, _nlu_tag(dist))


def speedup_sync_over_async(dist: DelayDistribution, P: int) -> float:
    """E[T_sync] / E[T_async] = P * E[X_{P:P}] / E[X]."""
    if P < 1:
        raise ValueError("P must be >= 1")
    if P == 1:
        return 1.0  # one worker: both protocols wait for the same single task
    return P * _os(dist, P, P) / dm.mean(dist)


class AsymptoticSpeedup(NamedTuple):
    exact: float
    approx: float


def speedup_exponential_asymptotic(P: int) -> AsymptoticSpeedup:
    """P * H_P for exponential delays, alongside the P log P growth rate."""
    if P < 2:
        raise ValueError("P must be >= 2")
    return AsymptoticSpeedup(P * dm.harmonic(P), P * math.log(P))


def kasync_over_kbatchasync_ratio(dist: DelayDistribution, K: int, P: int) -> float:
    """P * E[X_{K:P}] / (K * E[X])."""
    if not (1 <= K <= P):
        raise InvalidRank(f"need 1 <= K <= P, got K={K}, P={P}")
    return P * _os(dist, K, P) / (K * dm.mean(dist))


class ConsecutiveBound(NamedTuple):
    n_iteration_total: float
    per_iteration_approx: float


def shifted_exp_consecutive_bound(shift: float, rate: float, K: int, P: int) -> ConsecutiveBound:
    """Bound on the time of n = P/K consecutive K-async iterations under
    shift + Exp(rate) delays, plus its K*shift/P + K*log(P)/(P*rate) approximation."""
    if K < 1 or P % K:
        raise NotDivisible(f"K={K} does not divide P={P}")
    n = P // K
    if n < 2:
        raise NotDivisible(f"need P = nK with n >= 2, got n={n}")
    total = shift + math.fsum(dm.exponential_order_statistic(rate, K, P - i * K) for i in range(n))
    approx = K * shift / P + K * math.log(P) / (P * rate)
    return ConsecutiveBound(total, approx)


# -- Monte-Carlo counterparts -------------------------------------------------

class BatchMeans(NamedTuple):
    mean: float
    ci95: float
    n_batches: int


def batch_means(x, n_batches: int = 30) -> BatchMeans:
    """Mean and 95% half-width from non-overlapping batch means.

    Per-iteration times in the async variants are serially dependent, so the
    i.i.d. standard error would be too optimistic.
    """
    x = np.asarray(x, dtype=float)
    n = x.size // n_batches
    if n < 1:
        raise ValueError(f"need at least {n_batches} observations, got {x.size}")
    means = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    half = stats.t.ppf(0.975, n_batches - 1) * means.std(ddof=1) / math.sqrt(n_batches)
    return BatchMeans(float(x.mean()), float(half), n_batches)


class MCRuntime(NamedTuple):
    mean: float
    ci95: float
    iterations: int
    pushes: int
    sim_time: float


def monte_carlo_runtime(cfg: VariantConfig, dist: DelayDistribution, iterations: int, seed=0,
                        warmup: float | None = None, n_batches: int = 30) -> MCRuntime:
    """Mean simulated time per iteration with a batch-means 95% CI.

    ``warmup`` is the discarded leading fraction of iterations; it defaults
    to 10% for the asynchronous variants (their per-iteration law is only
    stationary in the limit) and to zero for the synchronous ones.
    """
    from .simulator import Simulation

    if iterations < 100:
        raise ValueError("need at least 100 iterations")
    if warmup is None:
        warmup = 0.0 if cfg.variant.synchronous else 0.1
    sim = Simulation(cfg, dist, oracle=None, delay_seed=seed)
    times = sim.iteration_times(iterations)
    start = int(round(warmup * iterations))
    bm = batch_means(times[start:], n_batches)
    return MCRuntime(bm.mean, bm.ci95, iterations - start, sim.pushes, sim.now)
