"""Discrete-event simulation of a parameter server with P delayed workers.

One :class:`Simulation` owns all state of a run: the parameter vector and
its version counter, each worker's in-flight task, the buffer of gradients
waiting for aggregation, and two independent random streams (compute delays
and gradient noise).  ``step()`` advances simulated time to the next
parameter update and returns its record.

Protocol semantics
------------------
ksync        all P workers start on w_j; the first K finishers are averaged,
             the other P-K tasks are cancelled and everyone restarts on w_{j+1}.
kbatchsync   all start on w_j; a finisher immediately starts another
             mini-batch, still on w_j.  The first K mini-batches (from any
             workers) are averaged, in-flight work is cancelled.
kasync       nobody is cancelled.  A finisher waits idle until K gradients
             have arrived; then exactly those K fetch w_{j+1} and restart.
kbatchasync  every finisher pushes, fetches the current parameters and
             restarts at once.  Every K pushes form one update.

Ties in completion time go to the lower worker id.  Gradient noise for an
update is drawn in worker-id order of its contributors.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .delays import DelayDistribution, DelayStream
from .objectives import GradientOracle
from .runtime import Variant, VariantConfig


class SimulationError(RuntimeError):
    pass


class HorizonTooSmall(SimulationError):
    pass


class NonFiniteLoss(SimulationError):
    pass


class InsufficientRecords(ValueError):
    pass


class Iterations(NamedTuple):
    J: int


class SimTime(NamedTuple):
    budget: float


class Seeds(NamedTuple):
    delay_seed: int = 0
    data_seed: int = 0


class Task(NamedTuple):
    worker: int
    start: float
    end: float
    read_version: int
    outcome: str  # "pushed" or "cancelled"


@dataclass
class UpdateRecord:
    j: int
    wallclock: float
    contributors: tuple
    staleness: tuple
    K: int
    loss: float = math.nan
    grad_norm_sq: float = math.nan
    stale_diff_sq: float = math.nan
    params: Optional[np.ndarray] = None


@dataclass
class Trace:
    """Per-update records of one run plus its metadata."""

    cfg: VariantConfig
    dist: DelayDistribution
    seeds: Seeds
    f_star: float = math.nan
    loss0: float = math.nan
    w0: Optional[np.ndarray] = None
    records: list = field(default_factory=list)
    diverged: bool = False
    slots: list = field(default_factory=list)  # (slot_index, wallclock, F_start, K_chosen)
    slot_length: float = math.nan
    sim: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def wallclock(self) -> np.ndarray:
        return self.column("wallclock")

    @property
    def loss(self) -> np.ndarray:
        return self.column("loss")

    @property
    def grad_norm_sq(self) -> np.ndarray:
        return self.column("grad_norm_sq")

    @property
    def K(self) -> np.ndarray:
        return np.array([r.K for r in self.records], dtype=int)

    def staleness_flat(self) -> np.ndarray:
        return np.fromiter((s for r in self.records for s in r.staleness), dtype=np.int64)

    def excess_loss(self) -> np.ndarray:
        """F(w_{j+1}) - F* for every record (NaN where not evaluated)."""
        return self.loss - self.f_star

    def params(self) -> list:
        return [r.params for r in self.records]

    def to_rows(self, adasync: bool = False):
        header = ["j", "wallclock", "loss", "grad_norm_sq", "staleness_mean", "staleness_max",
                  "contributors"]
        if adasync:
            header += ["slot", "K"]
        rows = [header]
        for r in self.records:
            row = [r.j, _fmt(r.wallclock), _fmt(r.loss), _fmt(r.grad_norm_sq),
                   _fmt(sum(r.staleness) / len(r.staleness)), max(r.staleness),
                   " ".join(str(c) for c in r.contributors)]
            if adasync:
                slot = int(r.wallclock // self.slot_length) if self.slot_length > 0 else 0
                row += [slot, r.K]
            rows.append(row)
        return rows

    def to_csv(self, path, adasync: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.to_rows(adasync))


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.9g}"


class Simulation:
    """Event-driven state of one run.  Pass ``oracle=None`` to simulate
    delays only (no parameters, no gradients)."""

    def __init__(self, cfg: VariantConfig, dist: DelayDistribution,
                 oracle: GradientOracle | None = None, w0=None, delay_seed=0, data_seed=0,
                 loss_every: int = 1, keep_params: bool = False, record_tasks: bool = False):
        self.cfg = cfg
        self.variant = cfg.variant
        self.K = cfg.K
        self.P = cfg.P
        self.eta = cfg.eta
        self.dist = dist
        self.oracle = oracle
        if oracle is not None:
            if w0 is None:
                raise ValueError("w0 is required when gradients are simulated")
            w0 = np.array(w0, dtype=float)
            if w0.shape != (oracle.dim,):
                raise ValueError(f"w0 has shape {w0.shape}, oracle dimension is {oracle.dim}")
            if oracle.m != cfg.m:
                raise ValueError(f"oracle mini-batch {oracle.m} differs from config m={cfg.m}")
            w0.setflags(write=False)
        self.w = w0
        self.j = 0
        self.now = 0.0
        self.draw = DelayStream(dist, delay_seed)
        self.data_rng = np.random.default_rng(data_seed)
        self.loss_every = max(1, int(loss_every))
        self.keep_params = keep_params
        self.tasks: list[Task] | None = [] if record_tasks else None
        self.pushes = 0
        self.cancelled = 0
        # per-worker task state, used by the persistent (async) protocols
        self.read_version = [0] * self.P
        self.read_w = [w0] * self.P
        self.task_start = [0.0] * self.P
        self.heap: list[tuple[float, int]] = []
        self.pending: list[tuple[int, int, object]] = []
        self._refetch = None
        if not self.variant.synchronous:
            for i in range(self.P):
                heapq.heappush(self.heap, (self.draw(), i))

    # -- protocol steps -----------------------------------------------------

    def step(self) -> UpdateRecord:
        v = self.variant
        if v is Variant.KSYNC:
            contrib = self._ksync()
        elif v is Variant.KBATCHSYNC:
            contrib = self._kbatchsync()
        elif v is Variant.KASYNC:
            contrib = self._kasync()
        else:
            contrib = self._kbatchasync()
        return self._aggregate(contrib)

    def _log(self, worker, start, end, version, outcome):
        if self.tasks is not None:
            self.tasks.append(Task(worker, start, end, version, outcome))

    def _ksync(self):
        t0 = self.now
        times = [self.draw() for _ in range(self.P)]
        order = sorted(range(self.P), key=lambda i: (times[i], i))
        self.now = t0 + times[order[self.K - 1]]
        self.pushes += self.K
        self.cancelled += self.P - self.K
        if self.tasks is not None:
            for r, i in enumerate(order):
                if r < self.K:
                    self._log(i, t0, t0 + times[i], self.j, "pushed")
                else:
                    self._log(i, t0, self.now, self.j, "cancelled")
        return [(i, self.j, self.w) for i in order[: self.K]]

    def _kbatchsync(self):
        t0 = self.now
        heap = [(t0 + self.draw(), i) for i in range(self.P)]
        starts = [t0] * self.P
        heapq.heapify(heap)
        contrib = []
        while len(contrib) < self.K:
            t, i = heapq.heappop(heap)
            self.now = t
            self.pushes += 1
            contrib.append((i, self.j, self.w))
            self._log(i, starts[i], t, self.j, "pushed")
            if len(contrib) < self.K:
                starts[i] = t
                heapq.heappush(heap, (t + self.draw(), i))
        self.cancelled += len(heap)
        if self.tasks is not None:
            for _, i in sorted(heap, key=lambda e: e[1]):
                self._log(i, starts[i], self.now, self.j, "cancelled")
        return contrib

    def _arrive(self):
        t, i = heapq.heappop(self.heap)
        self.now = t
        self.pushes += 1
        self._log(i, self.task_start[i], t, self.read_version[i], "pushed")
        return i

    def _restart(self, i):
        self.read_version[i] = self.j
        self.read_w[i] = self.w
        self.task_start[i] = self.now
        heapq.heappush(self.heap, (self.now + self.draw(), i))

    def _kasync(self):
        while len(self.pending) < self.K:
            i = self._arrive()
            self.pending.append((i, self.read_version[i], self.read_w[i]))
        contrib, self.pending = self.pending[: self.K], self.pending[self.K:]
        return contrib

    def _kbatchasync(self):
        self._refetch = None
        while len(self.pending) < self.K:
            i = self._arrive()
            self.pending.append((i, self.read_version[i], self.read_w[i]))
            if len(self.pending) < self.K:
                self._restart(i)
            else:
                self._refetch = i
        contrib, self.pending = self.pending[: self.K], self.pending[self.K:]
        return contrib

    # -- aggregation ----------------------------------------------------------

    def _aggregate(self, contrib) -> UpdateRecord:
        j = self.j
        ordered = sorted(contrib, key=lambda c: c[0])  # stable: keeps arrival order per worker
        record = UpdateRecord(j=j, wallclock=self.now,
                              contributors=tuple(c[0] for c in ordered),
                              staleness=tuple(j - c[1] for c in ordered), K=self.K)
        if self.oracle is not None:
            w = self.w
            grads = [self.oracle(c[2], self.data_rng) for c in ordered]
            total = grads[0].copy()
            for g in grads[1:]:
                total += g
            w_next = w - (self.eta / len(grads)) * total
            w_next.setflags(write=False)
            if j % self.loss_every == 0:
                obj = self.oracle.objective
                g_now = obj.gradient(w)
                record.grad_norm_sq = float(np.dot(g_now, g_now))
                record.stale_diff_sq = math.fsum(
                    0.0 if c[1] == j else float(np.sum((g_now - obj.gradient(c[2])) ** 2))
                    for c in ordered)
                record.loss = obj.loss(w_next)
            if self.keep_params:
                record.params = w_next
            self.w = w_next
        self.j = j + 1
        # Those whose gradients were just consumed fetch the new parameters.
        if self.variant is Variant.KASYNC:
            for i in sorted(c[0] for c in contrib):
                self._restart(i)
        elif self.variant is Variant.KBATCHASYNC and self._refetch is not None:
            # the push that completed the batch picks up the fresh parameters
            self._restart(self._refetch)
        return record

    def set_K(self, K: int) -> None:
        if not 1 <= K <= self.P:
            raise ValueError(f"K must lie in [1, {self.P}], got {K}")
        self.K = int(K)

    # -- drivers ------------------------------------------------------------

    def iteration_times(self, n: int) -> np.ndarray:
        """Simulated time between consecutive updates for the next n updates."""
        out = np.empty(n)
        last = self.now
        for k in range(n):
            rec = self.step()
            out[k] = rec.wallclock - last
            last = rec.wallclock
        return out


def run(cfg: VariantConfig, dist: DelayDistribution, oracle: GradientOracle | None, w0,
        horizon, seeds: Seeds = Seeds(), loss_every: int = 1, keep_params: bool = False,
        record_tasks: bool = False, sim: Simulation | None = None, on_update=None) -> Trace:
    """Simulate until the horizon and return the trace.

    ``horizon`` is ``Iterations(J)`` or ``SimTime(budget)``; with a time
    budget only updates completed by the budget are kept.  ``on_update`` is
    called as ``on_update(sim, record, trace)`` after each kept update.
    """
    if sim is None:
        sim = Simulation(cfg, dist, oracle, w0, seeds.delay_seed, seeds.data_seed,
                         loss_every=loss_every, keep_params=keep_params,
                         record_tasks=record_tasks)
    trace = Trace(cfg=cfg, dist=dist, seeds=seeds)
    if oracle is not None:
        trace.f_star = oracle.objective.f_star
        trace.w0 = sim.w
        trace.loss0 = oracle.objective.loss(sim.w)
    if isinstance(horizon, (int, np.integer)):
        horizon = Iterations(int(horizon))
    while True:
        if isinstance(horizon, Iterations) and len(trace.records) >= horizon.J:
            break
        rec = sim.step()
        if isinstance(horizon, SimTime) and rec.wallclock > horizon.budget:
            break
        trace.records.append(rec)
        if oracle is not None and rec.j % sim.loss_every == 0 and not math.isfinite(rec.loss):
            trace.diverged = True
            break
        if on_update is not None:
            on_update(sim, rec, trace)
    if not trace.records:
        raise HorizonTooSmall(f"horizon {horizon} admits no parameter update")
    trace.sim = sim
    return trace


# -- staleness statistics ---------------------------------------------------

def empirical_p0(trace: Trace) -> float:
    """Fraction of contributing gradients that were computed on the current parameters."""
    s = trace.staleness_flat()
    if s.size == 0:
        raise InsufficientRecords("trace has no contributions")
    return float(np.mean(s == 0))


def empirical_p0_stderr(trace: Trace, n_batches: int = 30) -> tuple[float, float]:
    """p0 with a batch-means standard error (staleness indicators are dependent)."""
    s = (trace.staleness_flat() == 0).astype(float)
    if s.size < n_batches:
        raise InsufficientRecords(f"need at least {n_batches} contributions")
    n = s.size // n_batches
    means = s[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(s.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def empirical_gamma(trace: Trace) -> float:
    """Sum of ||grad F(w_j) - grad F(w_tau)||^2 over contributors, divided by
    the sum of ||grad F(w_j)||^2 over the same contributor slots."""
    num = den = 0.0
    n = 0
    for r in trace.records:
        if r.stale_diff_sq == r.stale_diff_sq and r.grad_norm_sq == r.grad_norm_sq:
            num += r.stale_diff_sq
            den += len(r.contributors) * r.grad_norm_sq
            n += 1
    if n == 0:
        raise InsufficientRecords("trace carries no gradient-difference records "
                                  "(simulate with an oracle)")
    if den == 0.0:
        return 0.0
    return num / den


def pooled_gamma(traces) -> float:
    """empirical_gamma over several replications, pooling numerators and denominators."""
    num = den = 0.0
    for t in traces:
        for r in t.records:
            if r.stale_diff_sq == r.stale_diff_sq and r.grad_norm_sq == r.grad_norm_sq:
                num += r.stale_diff_sq
                den += len(r.contributors) * r.grad_norm_sq
    if den == 0.0:
        raise InsufficientRecords("no gradient-difference records")
    return num / den
