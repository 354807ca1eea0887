"""staleracer command line.

    staleracer analyze  --config exp.yaml
    staleracer verify   [--config exp.yaml] [--iterations N]
    staleracer simulate --config exp.yaml --out trace.csv
    staleracer adasync  --config exp.yaml --out trace.csv
    staleracer sweep    --config exp.yaml --jobs 4 --out frontier.csv
    staleracer speedup  [--P 1 2 4 8 16 32]
    staleracer accept   [--only 1 7 11] [--out report.json]

CSV goes to --out or stdout; progress and summaries go to stderr.  The exit
code is 0 on success, 1 when acceptance criteria fail and 2 on bad input.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace

from . import delays as dm
from .acceptance import report_json, run_acceptance
from .adasync import run_adasync
from .config import ConfigError, ExperimentConfig, load
from .experiments import (PAPER_DISTS, final_floor, frontier_rows, replication_seeds, speedup_curve,
                          speedup_rows, sweep_tradeoff, verify, verify_rows, write_csv)
from .runtime import BoundInapplicable, expected_runtime
from .simulator import Seeds, SimTime, SimulationError, empirical_p0, pooled_gamma, run

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _config(args, required=True) -> ExperimentConfig | None:
    if args.config is None:
        if required:
            raise UsageError(f"'{args.command}' needs --config")
        return None
    exp = load(args.config)
    if args.seed is not None:
        exp = replace(exp, seeds=Seeds(args.seed, args.seed + 10_000))
    return exp


def cmd_analyze(args) -> int:
    exp = _config(args)
    rows = [["variant", "K", "P", "dist", "aging", "expected_runtime", "kind", "assumptions",
             "order_statistic", "p0_kind", "p0_value"]]
    for cfg in exp.variants:
        try:
            res = expected_runtime(cfg, exp.dist)
            value, kind, note = res.value, res.kind.value, res.assumptions
        except BoundInapplicable as exc:
            value, kind, note = math.nan, "inapplicable", str(exc)
        try:
            xk = dm.expected_order_statistic(exp.dist, cfg.K, cfg.P).value
        except dm.UnsupportedClosedForm:
            xk = math.nan
        p0 = dm.p0_bound(exp.dist, cfg.P)
        rows.append([cfg.variant.value, cfg.K, cfg.P, dm.label(exp.dist),
                     dm.classify_aging(exp.dist).value, value, kind, note, xk,
                     p0.kind.value, p0.value])
    _emit(write_csv(rows), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    exp = _config(args, required=False)
    dists = (exp.dist,) if exp else PAPER_DISTS
    P = exp.primary.P if exp else 8
    Ks = sorted({c.K for c in exp.variants}) if exp else (1, 2, 4, 8)
    seed = args.seed if args.seed is not None else 0
    rows = verify(dists, P, Ks, args.iterations, seed)
    _emit(write_csv(verify_rows(rows)), args.out)
    bad = [r for r in rows if not r.passed]
    _note(f"verify: {len(rows) - len(bad)}/{len(rows)} cells consistent")
    return EXIT_OK if not bad else EXIT_FAILED


def cmd_simulate(args) -> int:
    exp = _config(args)
    rows = None
    for cfg in exp.variants:
        traces = []
        for r in range(exp.replications):
            tr = run(cfg, exp.dist, exp.oracle, exp.w0, exp.horizon,
                     replication_seeds(exp.seeds, r), loss_every=exp.loss_cadence)
            traces.append(tr)
            body = tr.to_rows()
            if rows is None:
                rows = [["variant", "K", "replication"] + body[0]]
            rows += [[cfg.variant.value, cfg.K, r] + row for row in body[1:]]
            if tr.diverged:
                _note(f"{cfg.variant.value} K={cfg.K} rep {r}: diverged at j={len(tr) - 1}")
        floor = sum(final_floor(t) for t in traces) / len(traces)
        _note(f"{cfg.variant.value} K={cfg.K}: mean final floor={floor:.6g} "
              f"p0={sum(empirical_p0(t) for t in traces) / len(traces):.4f} "
              f"gamma={pooled_gamma(traces):.4f}")
    _emit(write_csv(rows), args.out)
    return EXIT_OK


def cmd_adasync(args) -> int:
    exp = _config(args)
    if exp.adasync is None:
        raise UsageError("config has no 'adasync' block")
    if not isinstance(exp.horizon, SimTime):
        raise UsageError("adasync needs a simulated-time horizon: {sim_time: seconds}")
    rows = None
    eta = exp.primary.eta
    for r in range(exp.replications):
        tr = run_adasync(exp.adasync, exp.dist, exp.oracle, exp.w0, exp.horizon.budget, eta,
                         replication_seeds(exp.seeds, r), exp.loss_cadence)
        body = tr.to_rows(adasync=True)
        if rows is None:
            rows = [["replication"] + body[0]]
        rows += [[r] + row for row in body[1:]]
        _note(f"rep {r}: K path {[s[3] for s in tr.slots]} final floor={final_floor(tr):.6g}")
    _emit(write_csv(rows), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp = _config(args)
    targets = args.targets or exp.targets
    if not targets:
        raise UsageError("no loss targets: set sweep.targets or pass --targets")
    points = sweep_tradeoff(exp, targets, n_jobs=args.jobs)
    _emit(write_csv(frontier_rows(points)), args.out)
    return EXIT_OK


def cmd_speedup(args) -> int:
    exp = _config(args, required=False)
    dists = (exp.dist,) if exp else PAPER_DISTS
    seed = args.seed if args.seed is not None else 0
    pts = speedup_curve(dists, tuple(args.P), args.mc_samples, seed)
    _emit(write_csv(speedup_rows(pts)), args.out)
    return EXIT_OK


def cmd_accept(args) -> int:
    results = run_acceptance(set(args.only) if args.only else None, echo=print)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report_json(results) + "\n")
    failed = [r.id for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_OK if not failed else EXIT_FAILED


def _global_flags(parser, defaults: bool) -> None:
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--config", default=d(None), help="experiment YAML or JSON file")
    parser.add_argument("--out", default=d(None), help="output path (default: stdout)")
    parser.add_argument("--seed", type=int, default=d(None),
                        help="base seed; delay seed = SEED, data seed = SEED + 10000")
    parser.add_argument("--jobs", type=int, default=d(1), help="worker processes for sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="staleracer", description=__doc__.split("\n")[0])
    _global_flags(parser, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("analyze", parents=[common], help="analytical runtime, aging class and p0")
    p = sub.add_parser("verify", parents=[common], help="Monte-Carlo vs analytical runtime")
    p.add_argument("--iterations", type=int, default=20_000)
    sub.add_parser("simulate", parents=[common], help="run the configured variants, emit traces")
    sub.add_parser("adasync", parents=[common], help="run under AdaSync control")
    p = sub.add_parser("sweep", parents=[common], help="error-runtime frontier")
    p.add_argument("--targets", type=float, nargs="+")
    p = sub.add_parser("speedup", parents=[common], help="log-speedup of async over sync vs P")
    p.add_argument("--P", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    p.add_argument("--mc-samples", type=int, default=200_000)
    p = sub.add_parser("accept", parents=[common], help="run the acceptance criteria")
    p.add_argument("--only", type=int, nargs="+", metavar="ID")
    return parser


COMMANDS = {"analyze": cmd_analyze, "verify": cmd_verify, "simulate": cmd_simulate,
            "adasync": cmd_adasync, "sweep": cmd_sweep, "speedup": cmd_speedup,
            "accept": cmd_accept}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        _note("error: --jobs must be >= 1")
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
    except (UsageError, FileNotFoundError) as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
    except SimulationError as exc:
        _note(f"simulation error: {exc}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
