"""Command-line interface.

Subcommands: select, bic, simulate, nc-verify, probe-rates.  All randomness
flows from --seed; reports are JSON with the fully resolved configuration so a
run can be reproduced from its own output.  Exit codes: 0 success, 1 usage
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import asdict
from typing import List, Optional

import numpy as np

from . import simharness
from .bench import run_bench
from .em import bic_select
from .hmm import HmmParams, Trajectory, load_trajectory
from .ncest import EstimatorConfig
from .select import consistency_probe, select_k, select_k_mixture
from .simharness import build_transition


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=min(4, os.cpu_count() or 1))
    p.add_argument("--method", choices=["is", "ris"], default="is")
    p.add_argument("--tail", choices=["gauss", "t2", "t3"], default=None)
    p.add_argument("--kmax", type=int, default=6)
    p.add_argument("--config", type=str, default=None,
                   help="JSON file overriding estimator budgets")


def _build_config(args) -> EstimatorConfig:
    cfg = EstimatorConfig(method=args.method, tail=args.tail, seed=args.seed)
    if args.config:
        overrides = json.loads(open(args.config).read())
        fields = {f.name for f in dataclasses.fields(EstimatorConfig)}
        unknown = set(overrides) - fields
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        if "mass_bracket" in overrides:
            overrides["mass_bracket"] = tuple(overrides["mass_bracket"])
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _read_trace(path: str) -> Trajectory:
    if path == "-":
        rec = json.load(sys.stdin)
        hidden = rec.get("hidden")
        return Trajectory(obs=np.asarray(rec["obs"], dtype=float),
                          hidden=None if hidden is None else np.asarray(hidden))
    return load_trajectory(path)


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _estimate_record(e) -> dict:
    return {
        "k": e.k,
        "log_ml": e.log_ml,
        "method": e.method,
        "ess": e.ess,
        "n_inside": e.n_inside,
        "diagnostics": {k: v for k, v in sorted(e.diagnostics.items())},
    }


def _cmd_select(args) -> int:
    cfg = _build_config(args)
    traj = _read_trace(args.input)
    runner = select_k_mixture if args.mixture else select_k
    res = runner(traj.obs, args.kmax, config=cfg, threads=args.threads)
    _emit(
        {
            "k_hat": res.k_hat,
            "indistinguishable": res.indistinguishable,
            "failures": {str(k): v for k, v in res.failures.items()},
            "estimates": [_estimate_record(e) for e in res.estimates],
            "config": {**asdict(cfg), "kmax": args.kmax, "mixture": bool(args.mixture)},
        }
    )
    return 0


def _cmd_bic(args) -> int:
    traj = _read_trace(args.input)
    k_hat, scores = bic_select(traj.obs, args.kmin, args.kmax,
                               restarts=args.restarts, rng_seed=args.seed)
    _emit(
        {
            "k_hat": k_hat,
            "scores": [asdict(s) for s in scores],
            "config": {"kmin": args.kmin, "kmax": args.kmax,
                       "restarts": args.restarts, "seed": args.seed},
        }
    )
    return 0


def _cmd_simulate(args) -> int:
    cfg = _build_config(args)
    specs = simharness.load_grid(args.grid)
    rows = simharness.run_grid(specs, config=cfg, threads=args.threads)
    if args.out_csv:
        simharness.write_grid_csv(rows, args.out_csv)
    archive = simharness.grid_archive(rows, specs, cfg)
    if args.out_json:
        with open(args.out_json, "w") as fh:
            fh.write(archive)
    else:
        sys.stdout.write(archive + "\n")
    return 0


def _cmd_nc_verify(args) -> int:
    import csv as _csv

    rows = []
    for spec in args.row or ["mixed3d:3", "gaussmix:4"]:
        kind, _, d = spec.partition(":")
        dim = int(d) if d else None
        rep = run_bench(
            kind,
            n_sim=args.n_sim,
            n_is=args.n_is,
            method=args.method,
            tail=args.tail or ("gauss" if args.method == "is" else "gauss"),
            reps=args.reps,
            rng_seed=args.seed,
            dim=dim,
        )
        rows.append(rep)
    writer = _csv.writer(open(args.out, "w", newline="") if args.out else sys.stdout)
    writer.writerow(["model", "D", "N_sim", "N_is", "method", "tail", "ci_lo", "ci_hi"])
    for r in rows:
        writer.writerow([r.target, r.dim, r.n_sim, r.n_is, r.method, r.tail,
                         f"{r.ci_lo:.4f}", f"{r.ci_hi:.4f}"])
    return 0


def _cmd_probe_rates(args) -> int:
    cfg = _build_config(args)
    params = HmmParams(
        k=args.kstar,
        trans=build_transition(args.q_kind, args.kstar),
        means=np.arange(1.0, args.kstar + 1.0),
        variances=np.full(args.kstar, args.sigma**2),
    )
    report = consistency_probe(args.kstar, params, args.n_grid, args.reps,
                               config=cfg, threads=args.threads)
    _emit(
        {
            "n_grid": report.n_grid,
            "under_slope": report.under_slope,
            "under_r2": report.under_r2,
            "over_slope": report.over_slope,
            "over_r2": report.over_r2,
            "mean_log_ratio_under": None
            if report.mean_log_ratio_under is None
            else report.mean_log_ratio_under.tolist(),
            "mean_log_ratio_over": report.mean_log_ratio_over.tolist(),
            "config": {**asdict(cfg), "kstar": args.kstar, "sigma": args.sigma,
                       "q_kind": args.q_kind, "reps": args.reps},
        }
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="hmmselect",
                     description="HMM order selection by marginal likelihood")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="pick K for a trace by marginal likelihood")
    _add_common(p)
    p.add_argument("--input", required=True, help="trace CSV/JSON path, or - for stdin JSON")
    p.add_argument("--mixture", action="store_true",
                   help="use the iid-mixture likelihood instead of the HMM one")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("bic", help="Baum-Welch/BIC baseline")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--restarts", type=int, default=50)
    p.set_defaults(func=_cmd_bic)

    p = sub.add_parser("simulate", help="run a replication grid from a JSON spec")
    _add_common(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("nc-verify", help="known-constant estimator benchmarks")
    _add_common(p)
    p.add_argument("--row", action="append",
                   help="target spec kind[:dim], e.g. gaussmix:10 (repeatable)")
    p.add_argument("--n-sim", type=int, default=2000)
    p.add_argument("--n-is", type=int, default=4000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_nc_verify)

    p = sub.add_parser("probe-rates", help="empirical consistency-rate probe")
    _add_common(p)
    p.add_argument("--kstar", type=int, default=2)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--q-kind", default="P2")
    p.add_argument("--n-grid", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    p.add_argument("--reps", type=int, default=30)
    p.set_defaults(func=_cmd_probe_rates)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (RuntimeError, ValueError, ArithmeticError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
