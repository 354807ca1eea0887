"""Experiment configuration files (YAML or JSON).

A config is validated as a whole; :class:`ConfigError` lists every problem
found rather than stopping at the first.

Example::

    scenario: quadratic-exp
    variant: kasync            # or a list under sweep.variants
    K: 4
    P: 8
    m: 1
    eta: 0.05
    dist: {kind: exponential, rate: 1.0}
    objective: {kind: quadratic, dim: 10, c: 1.0, L: 4.0}
    noise: {kind: additive_gaussian, sigma_sq: 1.0}
    w0: 1.0                    # scalar fill or explicit list
    horizon: {iterations: 2000}   # or {sim_time: 500}
    seeds: {delay_seed: 0, data_seed: 1}
    loss_cadence: 1
    adasync: {K0: 1, slot_length: 20, rounding: nearest, monotone: true}
    sweep: {variants: [ksync, kasync], K: [1, 2, 4, 8], replications: 20,
            base_seed: 0, targets: [0.05, 0.01]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import delays as dm
from . import objectives as ob
from .adasync import AdaSyncConfig
from .runtime import Variant, VariantConfig
from .simulator import Iterations, Seeds, SimTime


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class ExperimentConfig:
    scenario: str
    variants: list  # VariantConfig grid
    dist: dm.DelayDistribution
    objective: ob.Objective
    oracle: ob.GradientOracle
    w0: np.ndarray
    horizon: object
    seeds: Seeds = Seeds()
    replications: int = 1
    loss_cadence: int = 1
    adasync: Optional[AdaSyncConfig] = None
    targets: list = field(default_factory=list)
    out: Optional[str] = None

    @property
    def primary(self) -> VariantConfig:
        return self.variants[0]


def read(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text) or {}


def load(source) -> ExperimentConfig:
    raw = source if isinstance(source, dict) else read(source)
    return parse(raw)


def _get(raw, key, problems, cast, default=None, required=False):
    if key not in raw:
        if required:
            problems.append(f"missing required field '{key}'")
        return default
    try:
        return cast(raw[key])
    except (TypeError, ValueError) as exc:
        problems.append(f"field '{key}': {exc}")
        return default


def parse(raw: dict) -> ExperimentConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])

    dist = None
    if "dist" not in raw:
        problems.append("missing required field 'dist'")
    else:
        try:
            dist = dm.from_dict(raw["dist"])
        except (ValueError, TypeError) as exc:
            problems.append(f"dist: {exc}")

    P = _get(raw, "P", problems, int, required=True)
    m = _get(raw, "m", problems, int, default=1)
    eta = _get(raw, "eta", problems, float, default=0.05)

    sweep = raw.get("sweep") or {}
    variant_names = sweep.get("variants") or [raw.get("variant", "ksync")]
    Ks = sweep.get("K") or [raw.get("K", 1)]
    if "adasync" in raw and raw["adasync"] and "K" not in raw and not sweep.get("K"):
        Ks = [raw["adasync"].get("K0", 1)]
    variants = []
    if P is not None and m is not None and eta is not None:
        for name in variant_names:
            for K in Ks:
                try:
                    variants.append(VariantConfig(Variant.parse(name), int(K), P, m, eta))
                except (ValueError, TypeError) as exc:
                    problems.append(f"variant {name!r} K={K}: {exc}")

    objective = oracle = None
    if "objective" not in raw:
        problems.append("missing required field 'objective'")
    else:
        try:
            objective = ob.from_dict(raw["objective"])
        except (ValueError, TypeError, KeyError) as exc:
            problems.append(f"objective: {exc}")
    if objective is not None and m is not None:
        noise = raw.get("noise") or {"kind": "additive_gaussian", "sigma_sq": 1.0}
        try:
            if noise.get("kind") == "additive_gaussian":
                model = ob.AdditiveGaussian(float(noise.get("sigma_sq", 1.0)))
            elif noise.get("kind") == "subsampling":
                model = ob.Subsampling()
            else:
                raise ValueError(f"unknown noise kind {noise.get('kind')!r}")
            oracle = ob.GradientOracle(objective, model, m)
        except (ValueError, TypeError) as exc:
            problems.append(f"noise: {exc}")

    w0 = None
    if objective is not None:
        spec = raw.get("w0", 1.0)
        try:
            w0 = np.full(objective.dim, float(spec)) if np.isscalar(spec) \
                else np.asarray(spec, dtype=float)
            if w0.shape != (objective.dim,):
                problems.append(f"w0 has length {w0.size}, objective dimension is {objective.dim}")
        except (TypeError, ValueError) as exc:
            problems.append(f"w0: {exc}")

    horizon = None
    h = raw.get("horizon")
    if h is None:
        problems.append("missing required field 'horizon'")
    elif isinstance(h, dict) and "iterations" in h:
        horizon = Iterations(int(h["iterations"]))
        if horizon.J < 1:
            problems.append("horizon.iterations must be >= 1")
    elif isinstance(h, dict) and "sim_time" in h:
        horizon = SimTime(float(h["sim_time"]))
        if not horizon.budget > 0:
            problems.append("horizon.sim_time must be positive")
    else:
        problems.append("horizon must be {iterations: J} or {sim_time: seconds}")

    seeds_raw = raw.get("seeds") or {}
    seeds = Seeds(int(seeds_raw.get("delay_seed", 0)), int(seeds_raw.get("data_seed", 0)))

    replications = int(sweep.get("replications", raw.get("replications", 1)))
    if replications < 1:
        problems.append("replication count must be >= 1")
    base_seed = sweep.get("base_seed")
    if base_seed is not None:
        seeds = Seeds(int(base_seed), int(base_seed) + 10_000)

    targets = [float(t) for t in sweep.get("targets", [])]
    if any(t <= 0 for t in targets):
        problems.append("sweep targets must be positive")
    if any(b >= a for a, b in zip(targets, targets[1:])):
        problems.append("sweep targets must be strictly decreasing")

    ada = None
    if raw.get("adasync"):
        a = raw["adasync"]
        try:
            ada = AdaSyncConfig(Variant.parse(a.get("variant", variant_names[0])), int(a.get("K0", 1)),
                                float(a["slot_length"]), P, a.get("rounding", "nearest"),
                                bool(a.get("monotone", True)))
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"adasync: {exc!r}")

    loss_cadence = _get(raw, "loss_cadence", problems, int, default=1)
    if loss_cadence is not None and loss_cadence < 1:
        problems.append("loss_cadence must be >= 1")

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(
        scenario=str(raw.get("scenario", "unnamed")), variants=variants, dist=dist,
        objective=objective, oracle=oracle, w0=w0, horizon=horizon, seeds=seeds,
        replications=replications, loss_cadence=loss_cadence, adasync=ada,
        targets=targets, out=raw.get("out"))
