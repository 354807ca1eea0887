"""Adaptive synchronicity: grow K as the training loss falls.

Training time is cut into slots of simulated length ``slot_length``.  At
each slot boundary the full loss F(w_start) is measured and K is re-chosen
so that the per-slot error-runtime bound u(K) stays minimised, using only
the ratio F(w_0) / F(w_start) and the initial K0 (the unknown constants
cancel).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

from .delays import DelayDistribution, Exponential, ShiftedExponential
from .runtime import Variant, VariantConfig
from .simulator import Seeds, SimTime, Simulation, Trace, run


class NonPositiveLoss(ValueError):
    pass


class ExtrapolationWarning(UserWarning):
    """The K-sync rule was derived for (shifted) exponential delays only."""


class Rounding(enum.Enum):
    CEIL = "ceil"
    NEAREST = "nearest"


LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class AdaSyncConfig:
    variant: Variant
    K0: int
    slot_length: float
    P: int
    rounding: Rounding = Rounding.NEAREST
    monotone: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "rounding", Rounding(self.rounding))
        if not 1 <= self.K0 <= self.P:
            raise ValueError(f"need 1 <= K0 <= P, got K0={self.K0}, P={self.P}")
        if not self.slot_length > 0:
            raise ValueError("slot_length must be positive")


@dataclass
class AdaSyncState:
    K_current: int
    F0: float
    slot_index: int = 0
    history: list = field(default_factory=list)  # (slot_index, F_start, K_chosen)


def objective_u(K, F_start, expected_T, t, eta, gamma_prime, L, sigma_sq, m) -> float:
    """Heuristic bound on the mean squared gradient norm over one slot of length t.

    ``expected_T`` is the expected runtime per iteration at this K.  As in
    the derivation of the update rules, F* is dropped and F(w_start) enters
    on its own.
    """
    return (2.0 * F_start * expected_T / (t * eta * gamma_prime)
            + L * eta * sigma_sq / (K * m * gamma_prime))


def continuous_K(variant, K0: float, F0: float, F_start: float, P: int) -> float:
    """Unrounded stationary point of u(K) implied by the update rule."""
    variant = Variant.parse(variant)
    if F_start <= 0:
        raise NonPositiveLoss(f"F_start must be positive, got {F_start}")
    ratio = F0 / F_start
    if variant is Variant.KSYNC:
        if K0 >= P:
            return float(P)
        # K^2 / (P - K) = beta  <=>  K^2 + beta K - beta P = 0
        beta = K0 * K0 / (P - K0) * ratio
        # positive root, written without the -beta + sqrt(...) cancellation
        return 2.0 * beta * P / (beta + math.sqrt(beta * beta + 4.0 * beta * P))
    return K0 * math.sqrt(ratio)


def _round(x: float, rounding: Rounding) -> int:
    if rounding is Rounding.CEIL:
        return math.ceil(x - 1e-12)
    return math.floor(x + 0.5)


def next_K(cfg: AdaSyncConfig, K0: int, F0: float, F_start: float, P: int,
           K_current: int | None = None) -> int:
    """The K to use for the next slot."""
    if F_start <= 0:
        raise NonPositiveLoss(
            f"F_start must be positive, got {F_start}; floor F - F* at a small epsilon")
    K = _round(continuous_K(cfg.variant, K0, F0, F_start, P), cfg.rounding)
    K = min(max(K, 1), P)
    if cfg.monotone and K_current is not None:
        K = max(K, K_current)
    return K


def runtime_model(variant, K: float, P: int, dist: DelayDistribution) -> float:
    """The expected-runtime approximation each update rule is derived from.

    ksync: log(P / (P - K)) / mu; kbatchsync: K E[X_{1:P}];
    kasync: K Delta / P + K log P / (P mu); kbatchasync: K E[X] / P.
    Continuous in K so that u(K) can be differentiated.
    """
    from . import delays as dm

    variant = Variant.parse(variant)
    if variant is Variant.KBATCHASYNC:
        return K * dm.mean(dist) / P
    if variant is Variant.KBATCHSYNC:
        return K * dm.expected_order_statistic(dist, 1, P).value
    if not isinstance(dist, (Exponential, ShiftedExponential)):
        raise ValueError(f"{variant.value} runtime model needs (shifted) exponential delays")
    shift = getattr(dist, "shift", 0.0)
    if variant is Variant.KSYNC:
        return shift + math.log(P / (P - K)) / dist.rate if K < P else math.inf
    return K * shift / P + K * math.log(P) / (P * dist.rate)


class AdaSyncController:
    """Slot clock plus the K-update rule; drives a running :class:`Simulation`."""

    def __init__(self, cfg: AdaSyncConfig, F0: float, dist: DelayDistribution | None = None):
        self.cfg = cfg
        self.state = AdaSyncState(K_current=cfg.K0, F0=max(F0, LOSS_FLOOR))
        self.next_boundary = cfg.slot_length
        if cfg.variant is Variant.KSYNC and dist is not None \
                and not isinstance(dist, (Exponential, ShiftedExponential)):
            warnings.warn("K-sync AdaSync rule assumes (shifted) exponential delays; "
                          "applying it to other delays is an extrapolation", ExtrapolationWarning)

    def on_update(self, sim: Simulation, rec, trace: Trace) -> None:
        if sim.now < self.next_boundary:
            return
        st = self.state
        while self.next_boundary <= sim.now:
            self.next_boundary += self.cfg.slot_length
            st.slot_index += 1
        if st.K_current >= self.cfg.P:
            return
        F_start = max(sim.oracle.objective.loss(sim.w), LOSS_FLOOR)
        K = next_K(self.cfg, self.cfg.K0, st.F0, F_start, self.cfg.P, st.K_current)
        st.history.append((st.slot_index, F_start, K))
        trace.slots.append((st.slot_index, sim.now, F_start, K))
        if K != st.K_current:
            st.K_current = K
            sim.set_K(K)


def run_adasync(cfg: AdaSyncConfig, dist: DelayDistribution, oracle, w0, budget: float,
                eta: float, seeds: Seeds = Seeds(), loss_every: int = 1) -> Trace:
    """Run the variant under AdaSync control for ``budget`` simulated seconds.

    K changes take effect for the next update; in-flight work of the
    asynchronous variants is kept, never flushed.
    """
    vcfg = VariantConfig(cfg.variant, cfg.K0, cfg.P, oracle.m, eta)
    sim = Simulation(vcfg, dist, oracle, w0, seeds.delay_seed, seeds.data_seed,
                     loss_every=loss_every)
    ctrl = AdaSyncController(cfg, oracle.objective.loss(sim.w), dist)
    trace = run(vcfg, dist, oracle, w0, SimTime(budget), seeds, sim=sim,
                on_update=ctrl.on_update)
    trace.slot_length = cfg.slot_length
    return trace
