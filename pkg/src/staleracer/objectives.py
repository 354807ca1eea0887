"""Loss landscapes with known constants, gradient oracles, and error bounds.

The quadratic testbed is the workhorse: with a diagonal Hessian and additive
Gaussian gradient noise every constant in the convergence bounds (c, L,
sigma^2, M_G = 0, F*) is known exactly, so the bounds become sharp tests.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np


class DimensionMismatch(ValueError):
    pass


class AdmissibilityWarning(UserWarning):
    """Learning rate exceeds the range a bound was proven for."""


def _check_dim(w, dim):
    w = np.asarray(w, dtype=float)
    if w.shape != (dim,):
        raise DimensionMismatch(f"expected a vector of length {dim}, got shape {w.shape}")
    return w


@dataclass(frozen=True, eq=False)
class Quadratic:
    """F(w) = f_star + 1/2 sum_i lambda_i (w_i - w*_i)^2."""

    eigenvalues: np.ndarray
    w_star: np.ndarray = None
    f_star: float = 0.0

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.ndim != 1 or ev.size == 0 or np.any(ev <= 0):
            raise ValueError("eigenvalues must be a non-empty vector of positive reals")
        ws = np.zeros_like(ev) if self.w_star is None else np.asarray(self.w_star, dtype=float)
        if ws.shape != ev.shape:
            raise DimensionMismatch("w_star and eigenvalues differ in length")
        ev.setflags(write=False)
        ws.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "w_star", ws)
        object.__setattr__(self, "f_star", float(self.f_star))

    @classmethod
    def log_spaced(cls, dim: int, c: float, L: float, f_star: float = 0.0):
        if dim == 1:
            ev = np.array([c])
        else:
            ev = np.geomspace(c, L, dim)
            ev[0], ev[-1] = c, L
        return cls(ev, np.zeros(dim), f_star)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def c(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def L(self) -> float:
        return float(self.eigenvalues.max())

    def loss(self, w) -> float:
        d = _check_dim(w, self.dim) - self.w_star
        return self.f_star + 0.5 * float(np.dot(self.eigenvalues * d, d))

    def gradient(self, w) -> np.ndarray:
        return self.eigenvalues * (_check_dim(w, self.dim) - self.w_star)


@dataclass(frozen=True, eq=False)
class Logistic:
    """L2-regularised logistic regression on a fixed dataset (labels in {-1, +1}).

    F* is found once at construction by Newton's method to a gradient norm
    of 1e-10 and cached on the instance.
    """

    features: np.ndarray
    labels: np.ndarray
    l2: float = 0.0
    f_star: float = field(init=False, default=float("nan"))
    w_star: np.ndarray = field(init=False, default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DimensionMismatch("features must be N x d and labels length N")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.l2 > 0:
            w_star = self._newton_solve()
            object.__setattr__(self, "w_star", w_star)
            object.__setattr__(self, "f_star", self.loss(w_star))

    @classmethod
    def synthetic(cls, N: int, d: int, separation: float = 1.0, l2: float = 0.1, seed=0):
        """Two Gaussian blobs at +-separation/2 along a random unit direction."""
        rng = np.random.default_rng(seed)
        y = np.where(rng.random(N) < 0.5, -1.0, 1.0)
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        X = rng.standard_normal((N, d)) + 0.5 * separation * y[:, None] * direction
        return cls(X, y, l2)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def c(self) -> float:
        return float(self.l2)

    @property
    def L(self) -> float:
        return float(self.l2 + np.max(np.sum(self.features ** 2, axis=1)) / 4.0)

    def loss(self, w) -> float:
        w = _check_dim(w, self.dim)
        margins = self.labels * (self.features @ w)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * self.l2 * np.dot(w, w))

    def gradient(self, w) -> np.ndarray:
        return self._full_grad(_check_dim(w, self.dim))

    def _full_grad(self, w):
        margins = self.labels * (self.features @ w)
        coef = -self.labels * _sigmoid(-margins)
        return self.features.T @ coef / self.n_samples + self.l2 * w

    def sample_gradients(self, w, idx) -> np.ndarray:
        """Per-sample gradients (rows), regulariser included in each."""
        w = _check_dim(w, self.dim)
        X = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        coef = -y * _sigmoid(-y * (X @ w))
        return X * coef[:, None] + self.l2 * w

    def _newton_solve(self, tol=1e-10, max_iter=100):
        w = np.zeros(self.dim)
        for _ in range(max_iter):
            g = self._full_grad(w)
            if np.linalg.norm(g) <= tol:
                return w
            s = _sigmoid(self.labels * (self.features @ w))
            H = (self.features.T * (s * (1 - s))) @ self.features / self.n_samples
            H[np.diag_indices_from(H)] += self.l2
            step = np.linalg.solve(H, g)
            t, f0 = 1.0, self.loss(w)
            while self.loss(w - t * step) > f0 - 0.25 * t * np.dot(g, step) and t > 1e-12:
                t *= 0.5
            w = w - t * step
        if np.linalg.norm(self._full_grad(w)) > tol:
            raise RuntimeError("Newton solve for F* did not reach the gradient tolerance")
        return w


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


Objective = Union[Quadratic, Logistic]


def full_loss(obj: Objective, w) -> float:
    return obj.loss(w)


def full_gradient(obj: Objective, w) -> np.ndarray:
    return obj.gradient(w)


# -- stochastic gradients -----------------------------------------------------

@dataclass(frozen=True)
class AdditiveGaussian:
    sigma_sq: float


@dataclass(frozen=True)
class Subsampling:
    pass


@dataclass(frozen=True, eq=False)
class GradientOracle:
    """Unbiased mini-batch gradients of size ``m``.

    AdditiveGaussian adds isotropic noise with E||z||^2 = sigma_sq / m
    exactly (so M_G = 0).  Subsampling averages per-sample gradients over m
    points drawn without replacement.
    """

    objective: Objective
    noise: Union[AdditiveGaussian, Subsampling] = AdditiveGaussian(1.0)
    m: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("mini-batch size must be at least 1")
        if isinstance(self.noise, Subsampling):
            if not isinstance(self.objective, Logistic):
                raise ValueError("subsampling needs a dataset-backed objective")
            if self.m > self.objective.n_samples:
                raise ValueError("mini-batch larger than the dataset")

    @property
    def dim(self) -> int:
        return self.objective.dim

    @property
    def sigma_sq(self) -> float:
        if isinstance(self.noise, AdditiveGaussian):
            return self.noise.sigma_sq
        return float("nan")

    def __call__(self, w, rng: np.random.Generator) -> np.ndarray:
        if isinstance(self.noise, AdditiveGaussian):
            g = self.objective.gradient(w)
            scale = math.sqrt(self.noise.sigma_sq / (self.m * self.dim))
            return g + scale * rng.standard_normal(self.dim)
        idx = rng.choice(self.objective.n_samples, size=self.m, replace=False)
        return self.objective.sample_gradients(w, idx).mean(axis=0)


def stochastic_gradient(oracle: GradientOracle, w, rng: np.random.Generator) -> np.ndarray:
    return oracle(w, rng)


class NoiseConstants(NamedTuple):
    sigma_sq: float
    M_G: float


def estimate_noise_constants(obj: Logistic, points) -> NoiseConstants:
    """Estimate (sigma^2, M_G) for single-sample subsampled gradients.

    At each point the per-sample deviation E||g_n - grad F||^2 is computed
    exactly over the dataset; a least-squares line against ||grad F||^2 gives
    the intercept sigma^2 and slope M_G.  These are estimates, not bounds.
    """
    dev, gn = [], []
    for w in points:
        G = obj.sample_gradients(w, None)
        g = G.mean(axis=0)
        dev.append(float(np.mean(np.sum((G - g) ** 2, axis=1))))
        gn.append(float(np.dot(g, g)))
    A = np.column_stack([np.ones(len(gn)), gn])
    (sigma_sq, M_G), *_ = np.linalg.lstsq(A, np.asarray(dev), rcond=None)
    return NoiseConstants(max(float(sigma_sq), 0.0), max(float(M_G), 0.0))


# -- error bounds -------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    eta: float
    c: float
    L: float
    sigma_sq: float
    K: int
    m: int = 1
    M_G: float = 0.0
    gamma: float = 0.0
    p0: float = 0.0
    F0_minus_Fstar: float = 0.0

    def __post_init__(self):
        if self.gamma > 1:
            raise ValueError(f"staleness parameter gamma must be <= 1, got {self.gamma}")
        if not 0 <= self.p0 <= 1:
            raise ValueError(f"p0 must lie in [0, 1], got {self.p0}")

    @property
    def gamma_prime(self) -> float:
        return 1.0 - self.gamma + self.p0 / 2.0

    @classmethod
    def for_objective(cls, obj: Objective, oracle: GradientOracle, w0, eta: float, K: int, **kw):
        return cls(eta=eta, c=obj.c, L=obj.L, sigma_sq=oracle.sigma_sq, K=K, m=oracle.m,
                   F0_minus_Fstar=obj.loss(w0) - obj.f_star, **kw)


class Bound(NamedTuple):
    value: float | np.ndarray
    admissible: bool


def _flag(ok: bool, what: str) -> bool:
    if not ok:
        warnings.warn(f"learning rate outside the admissible range of the {what} bound",
                      AdmissibilityWarning, stacklevel=3)
    return ok


def ksync_error_bound(j, b: BoundInputs) -> Bound:
    """Bound on E[F(w_j)] - F* for K-sync SGD (serial SGD with batch K*m)."""
    ok = b.eta <= 1.0 / (2.0 * b.L * (b.M_G / (b.K * b.m) + 1.0))
    floor = b.eta * b.L * b.sigma_sq / (2.0 * b.c * b.K * b.m)
    j = np.asarray(j, dtype=float)
    val = floor + (1.0 - b.eta * b.c) ** j * (b.F0_minus_Fstar - floor)
    return Bound(val if val.ndim else float(val), _flag(ok, "K-sync"))


def kasync_error_bound(j, b: BoundInputs) -> Bound:
    """Bound on E[F(w_j)] - F* for K-async / K-batch-async SGD."""
    gp = b.gamma_prime
    ok = b.eta <= 1.0 / (2.0 * b.L * (b.M_G / (b.K * b.m) + 1.0 / b.K))
    floor = b.eta * b.L * b.sigma_sq / (2.0 * b.c * gp * b.K * b.m)
    j = np.asarray(j, dtype=float)
    val = floor + (1.0 - b.eta * b.c * gp) ** j * (b.F0_minus_Fstar - floor)
    return Bound(val if val.ndim else float(val), _flag(ok, "K-async"))


def nonconvex_ergodic_bound(J: int, b: BoundInputs) -> float:
    """Bound on (1/J) sum_{j<J} E||grad F(w_j)||^2."""
    if J < 1:
        raise ValueError("J must be at least 1")
    gp = b.gamma_prime
    return (2.0 * b.F0_minus_Fstar / (J * b.eta * gp)
            + b.L * b.eta * b.sigma_sq / (b.K * b.m * gp))


def max_learning_rate(variant, b: BoundInputs, P: int | None = None) -> float:
    """Largest admissible step, as stated for the synchronous and asynchronous analyses.

    For synchronous variants ``P`` is the number of gradients averaged per
    step (defaults to ``b.K``).
    """
    from .runtime import Variant

    variant = Variant.parse(variant)
    if variant.synchronous:
        P = b.K if P is None else P
        return max(1.0 / b.c, 1.0 / (2.0 * b.L * (b.M_G / (P * b.m) + 1.0)))
    return max(1.0 / (b.c * b.gamma_prime), 1.0 / (2.0 * b.L * (b.M_G / b.m + 1.0)))


def from_dict(d: dict) -> Objective:
    """Objective from a config record.

    ``{"kind": "quadratic", "eigenvalues": [...]}`` or
    ``{"kind": "quadratic", "dim": 10, "c": 1, "L": 4}``;
    ``{"kind": "logistic", "N": 500, "d": 5, "separation": 2, "l2": 0.1, "seed": 0}``.
    """
    d = dict(d)
    kind = d.get("kind")
    if kind == "quadratic":
        f_star = float(d.get("f_star", 0.0))
        if "eigenvalues" in d:
            ev = np.asarray(d["eigenvalues"], dtype=float)
            w_star = d.get("w_star")
            return Quadratic(ev, None if w_star is None else np.asarray(w_star, float), f_star)
        return Quadratic.log_spaced(int(d["dim"]), float(d["c"]), float(d["L"]), f_star)
    if kind == "logistic":
        return Logistic.synthetic(int(d["N"]), int(d["d"]), float(d.get("separation", 1.0)),
                                  float(d.get("l2", 0.1)), d.get("seed", 0))
    raise ValueError(f"unknown objective kind {kind!r}")
