"""Per-mini-batch compute-time distributions and their order statistics.

Every worker's time to process one mini-batch is an i.i.d. draw from one of
four parametric families.  Besides sampling, this module provides exact
means, expected order statistics ``E[X_{K:P}]`` (closed form or Monte
Carlo) and the aging classification that decides which runtime bounds
apply.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np


class DelayModelError(ValueError):
    pass


class InvalidRank(DelayModelError):
    pass


class UnsupportedClosedForm(DelayModelError):
    pass


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise DelayModelError(f"rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class ShiftedExponential:
    shift: float
    rate: float

    def __post_init__(self):
        if not self.shift >= 0:
            raise DelayModelError(f"shift must be nonnegative, got {self.shift}")
        if not self.rate > 0:
            raise DelayModelError(f"rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class Pareto:
    # Pareto(2, 1) means shape=2, scale=1 (mean 2).
    shape: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.shape > 1:
            raise DelayModelError(f"Pareto shape must exceed 1 for a finite mean, got {self.shape}")
        if not self.scale > 0:
            raise DelayModelError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class HyperExponential:
    branch_probs: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.branch_probs)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "branch_probs", probs)
        object.__setattr__(self, "rates", rates)
        if len(probs) == 0 or len(probs) != len(rates):
            raise DelayModelError("branch_probs and rates must be non-empty and of equal length")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise DelayModelError(f"branch_probs must be a probability vector, got {probs}")
        if any(not r > 0 for r in rates):
            raise DelayModelError(f"rates must be positive, got {rates}")


DelayDistribution = Union[Exponential, ShiftedExponential, Pareto, HyperExponential]


class AgingClass(enum.Enum):
    NEW_LONGER_THAN_USED = "new_longer_than_used"
    MEMORYLESS = "memoryless"
    NEW_SHORTER_THAN_USED = "new_shorter_than_used"


# -- sampling -----------------------------------------------------------------

def sample_array(dist: DelayDistribution, rng: np.random.Generator, size) -> np.ndarray:
    """Draw ``size`` i.i.d. compute times."""
    if isinstance(dist, Exponential):
        return rng.exponential(1.0 / dist.rate, size)
    if isinstance(dist, ShiftedExponential):
        return dist.shift + rng.exponential(1.0 / dist.rate, size)
    if isinstance(dist, Pareto):
        # numpy's pareto is the Lomax form; shift by one for the classical law
        return dist.scale * (1.0 + rng.pareto(dist.shape, size))
    if isinstance(dist, HyperExponential):
        cum = np.cumsum(dist.branch_probs)
        branch = np.searchsorted(cum, rng.random(size), side="right")
        branch = np.minimum(branch, len(dist.rates) - 1)
        return rng.exponential(1.0, size) / np.asarray(dist.rates)[branch]
    raise TypeError(f"unknown delay distribution {dist!r}")


def sample(dist: DelayDistribution, rng: np.random.Generator) -> float:
    return float(sample_array(dist, rng, 1)[0])


class DelayStream:
    """Sequential draws from one distribution, generated in blocks.

    The sequence depends only on (dist, seed, block), so two streams built
    the same way hand out identical values in identical order.
    """

    def __init__(self, dist: DelayDistribution, seed, block: int = 4096):
        self.dist = dist
        self.rng = np.random.default_rng(seed)
        self.block = block
        self._buf: list[float] = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = sample_array(self.dist, self.rng, self.block).tolist()
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        return x


# -- moments and order statistics ---------------------------------------------

def mean(dist: DelayDistribution) -> float:
    if isinstance(dist, Exponential):
        return 1.0 / dist.rate
    if isinstance(dist, ShiftedExponential):
        return dist.shift + 1.0 / dist.rate
    if isinstance(dist, Pareto):
        return dist.shape * dist.scale / (dist.shape - 1.0)
    if isinstance(dist, HyperExponential):
        return sum(p / r for p, r in zip(dist.branch_probs, dist.rates))
    raise TypeError(f"unknown delay distribution {dist!r}")


def harmonic(n: int) -> float:
    """H_n by direct summation (math.fsum keeps it exact to rounding)."""
    if n < 0:
        raise ValueError("harmonic number of a negative index")
    return math.fsum(1.0 / i for i in range(1, n + 1))


def harmonic_log_approx(n: int) -> float:
    """ln n + Euler-Mascheroni; for display next to :func:`harmonic` only."""
    return math.log(n) + 0.5772156649015329


class ClosedForm:
    pass


@dataclass(frozen=True)
class MonteCarlo:
    samples: int = 100_000
    seed: int = 0
    chunk: int = 50_000


class Estimate(NamedTuple):
    value: float
    stderr: float | None = None


def _check_rank(K: int, P: int) -> None:
    if not (isinstance(K, (int, np.integer)) and isinstance(P, (int, np.integer))):
        raise InvalidRank(f"K and P must be integers, got K={K!r}, P={P!r}")
    if not 1 <= K <= P:
        raise InvalidRank(f"need 1 <= K <= P, got K={K}, P={P}")


def exponential_order_statistic(rate: float, K: int, P: int) -> float:
    """E[X_{K:P}] for Exp(rate): (H_P - H_{P-K}) / rate."""
    _check_rank(K, P)
    return math.fsum(1.0 / i for i in range(P - K + 1, P + 1)) / rate


def pareto_order_statistic(shape: float, scale: float, K: int, P: int) -> float:
    _check_rank(K, P)
    a = 1.0 / shape
    log_ratio = (math.lgamma(P + 1) + math.lgamma(P - K + 1 - a)
                 - math.lgamma(P - K + 1) - math.lgamma(P + 1 - a))
    return scale * math.exp(log_ratio)


def expected_order_statistic(dist: DelayDistribution, K: int, P: int, method=None) -> Estimate:
    """E[X_{K:P}], the K-th smallest of P i.i.d. draws.

    ``method`` is ``ClosedForm()`` (default) or ``MonteCarlo(...)``; the
    Monte-Carlo estimate carries its standard error.
    """
    _check_rank(K, P)
    method = ClosedForm() if method is None else method
    if isinstance(method, MonteCarlo):
        return _order_statistic_mc(dist, K, P, method)
    if isinstance(dist, Exponential):
        return Estimate(exponential_order_statistic(dist.rate, K, P))
    if isinstance(dist, ShiftedExponential):
        # a common shift commutes with ordering
        return Estimate(dist.shift + exponential_order_statistic(dist.rate, K, P))
    if isinstance(dist, Pareto):
        return Estimate(pareto_order_statistic(dist.shape, dist.scale, K, P))
    raise UnsupportedClosedForm(f"no closed-form order statistic for {type(dist).__name__}")


def _order_statistic_mc(dist, K, P, method: MonteCarlo) -> Estimate:
    # Independent child streams per chunk; totals are plain sums so the result
    # does not depend on the order chunks are reduced in.
    n = int(method.samples)
    if n < 2:
        raise ValueError("Monte-Carlo needs at least two samples")
    children = np.random.SeedSequence(method.seed).spawn(-(-n // method.chunk))
    s1 = 0.0
    s2 = 0.0
    remaining = n
    for child in children:
        size = min(method.chunk, remaining)
        remaining -= size
        x = sample_array(dist, np.random.default_rng(child), (size, P))
        kth = np.partition(x, K - 1, axis=1)[:, K - 1]
        s1 += float(kth.sum())
        s2 += float(np.dot(kth, kth))
    m = s1 / n
    var = max(s2 / n - m * m, 0.0) * n / (n - 1)
    return Estimate(m, math.sqrt(var / n))


# -- aging --------------------------------------------------------------------

def classify_aging(dist: DelayDistribution) -> AgingClass:
    if isinstance(dist, Exponential):
        return AgingClass.MEMORYLESS
    if isinstance(dist, ShiftedExponential):
        return AgingClass.NEW_LONGER_THAN_USED if dist.shift > 0 else AgingClass.MEMORYLESS
    if isinstance(dist, Pareto):
        return AgingClass.NEW_LONGER_THAN_USED
    if isinstance(dist, HyperExponential):
        live = {r for p, r in zip(dist.branch_probs, dist.rates) if p > 0}
        return AgingClass.NEW_SHORTER_THAN_USED if len(live) >= 2 else AgingClass.MEMORYLESS
    raise TypeError(f"unknown delay distribution {dist!r}")


def survival(dist: DelayDistribution, x) -> np.ndarray:
    """P(X > x), vectorised.  Used to spot-check the aging inequality."""
    x = np.asarray(x, dtype=float)
    if isinstance(dist, Exponential):
        return np.exp(-dist.rate * np.maximum(x, 0.0))
    if isinstance(dist, ShiftedExponential):
        return np.where(x < dist.shift, 1.0, np.exp(-dist.rate * (x - dist.shift)))
    if isinstance(dist, Pareto):
        return np.where(x < dist.scale, 1.0, (dist.scale / np.maximum(x, dist.scale)) ** dist.shape)
    if isinstance(dist, HyperExponential):
        xs = np.maximum(x, 0.0)
        return sum(p * np.exp(-r * xs) for p, r in zip(dist.branch_probs, dist.rates))
    raise TypeError(f"unknown delay distribution {dist!r}")


class P0Kind(enum.Enum):
    EXACT = "exact"
    UPPER = "upper"
    LOWER = "lower"


class P0Bound(NamedTuple):
    kind: P0Kind
    value: float


def p0_bound(dist: DelayDistribution, P: int) -> P0Bound:
    """What is known about the probability that a contributing gradient is fresh."""
    if P < 1:
        raise ValueError("P must be at least 1")
    kind = {
        AgingClass.MEMORYLESS: P0Kind.EXACT,
        AgingClass.NEW_LONGER_THAN_USED: P0Kind.UPPER,
        AgingClass.NEW_SHORTER_THAN_USED: P0Kind.LOWER,
    }[classify_aging(dist)]
    return P0Bound(kind, 1.0 / P)


# -- config round-trip --------------------------------------------------------

def from_dict(d: dict) -> DelayDistribution:
    """Build a distribution from a tagged record such as
    ``{"kind": "shifted_exponential", "shift": 1.0, "rate": 1.0}``."""
    d = dict(d)
    kind = d.pop("kind", None)
    try:
        if kind == "exponential":
            return Exponential(float(d["rate"]))
        if kind == "shifted_exponential":
            return ShiftedExponential(float(d["shift"]), float(d["rate"]))
        if kind == "pareto":
            return Pareto(float(d["shape"]), float(d.get("scale", 1.0)))
        if kind == "hyper_exponential":
            return HyperExponential(tuple(d["branch_probs"]), tuple(d["rates"]))
    except KeyError as exc:
        raise DelayModelError(f"{kind} distribution missing field {exc}") from None
    raise DelayModelError(f"unknown distribution kind {kind!r}")


def to_dict(dist: DelayDistribution) -> dict:
    if isinstance(dist, Exponential):
        return {"kind": "exponential", "rate": dist.rate}
    if isinstance(dist, ShiftedExponential):
        return {"kind": "shifted_exponential", "shift": dist.shift, "rate": dist.rate}
    if isinstance(dist, Pareto):
        return {"kind": "pareto", "shape": dist.shape, "scale": dist.scale}
    if isinstance(dist, HyperExponential):
        return {"kind": "hyper_exponential", "branch_probs": list(dist.branch_probs),
                "rates": list(dist.rates)}
    raise TypeError(f"unknown delay distribution {dist!r}")


def label(dist: DelayDistribution) -> str:
    """Short human label, e.g. ``1+Exp(1)`` or ``Pareto(2,1)``."""
    if isinstance(dist, Exponential):
        return f"Exp({dist.rate:g})"
    if isinstance(dist, ShiftedExponential):
        return f"{dist.shift:g}+Exp({dist.rate:g})"
    if isinstance(dist, Pareto):
        return f"Pareto({dist.shape:g},{dist.scale:g})"
    if isinstance(dist, HyperExponential):
        return "HyperExp(" + ",".join(f"{p:g}:{r:g}" for p, r in zip(dist.branch_probs, dist.rates)) + ")"
    return repr(dist)
