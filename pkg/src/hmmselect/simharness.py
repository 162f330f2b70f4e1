"""Replication harness: simulate HMM grids, run ML vs BIC, tally frequencies."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from .em import bic_select
from .hmm import HmmParams, simulate
from .ncest import EstimatorConfig
from .select import select_k

__all__ = ["ExperimentSpec", "FrequencyRow", "build_transition", "build_params",
           "run_experiment", "run_grid", "write_grid_csv"]

Q_KINDS = ("P1", "P2", "P3", "P4")


@dataclass(frozen=True)
class ExperimentSpec:
    k_star: int
    sigma: float
    n: int
    q_kind: str
    heter: bool = False
    reps: int = 50
    k_max: Optional[int] = None  # default k_star + 2
    master_seed: int = 0
    restarts: int = 50

    def resolved_k_max(self) -> int:
        return self.k_max if self.k_max is not None else self.k_star + 2


def build_transition(kind: str, k: int) -> np.ndarray:
    """The four experiment matrices: flat, moderate/strong diagonal, off-diagonal.

    P1 = E/K;  P2 = (0.8 - 0.2/(K-1)) I + 0.2/(K-1) E;
    P3 = (0.95 - 0.05/(K-1)) I + 0.05/(K-1) E;
    P4 = 0.9/(K-1) E - (0.9/(K-1) - 0.1) I.
    """
    if kind not in Q_KINDS:
        raise ValueError(f"q_kind must be one of {Q_KINDS}")
    if kind == "P1":
        if k < 1:
            raise ValueError("P1 needs k >= 1")
        q = np.full((k, k), 1.0 / k)
    else:
        if k < 2:
            raise ValueError(f"{kind} needs k >= 2")
        eye = np.eye(k)
        ones = np.ones((k, k))
        if kind == "P2":
            q = (0.8 - 0.2 / (k - 1)) * eye + (0.2 / (k - 1)) * ones
        elif kind == "P3":
            q = (0.95 - 0.05 / (k - 1)) * eye + (0.05 / (k - 1)) * ones
        else:
            q = (0.9 / (k - 1)) * ones - (0.9 / (k - 1) - 0.1) * eye
    return q / q.sum(axis=1, keepdims=True)


def build_params(spec: ExperimentSpec, rng: np.random.Generator) -> HmmParams:
    """Means 1..K; sigma_k = sigma * (0.5 + 2 U_k) per state when heterogeneous."""
    k = spec.k_star
    means = np.arange(1.0, k + 1.0)
    if spec.heter:
        sig = spec.sigma * (0.5 + 2.0 * rng.uniform(0.0, 1.0, size=k))
    else:
        sig = np.full(k, spec.sigma)
    return HmmParams(k=k, trans=build_transition(spec.q_kind, k), means=means, variances=sig**2)


@dataclass(frozen=True)
class FrequencyRow:
    k_star: int
    sigma: float
    n: int
    q_kind: str
    heter: bool
    reps: int
    ml_pct: float
    bic_pct: float
    ml_ok: int
    bic_ok: int
    ml_failures: int
    bic_failures: int


def _rep_seed(spec: ExperimentSpec, rep: int, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        [spec.master_seed, spec.k_star, int(round(spec.sigma * 1000)), spec.n,
         Q_KINDS.index(spec.q_kind), int(spec.heter), rep, tag]
    )


def run_experiment(
    spec: ExperimentSpec,
    config: EstimatorConfig = EstimatorConfig(),
    threads: int = 1,
    run_ml: bool = True,
    run_bic: bool = True,
) -> FrequencyRow:
    """Correct-identification percentages for ML and BIC over spec.reps replications."""
    if spec.reps < 1:
        raise ValueError("reps must be >= 1")
    k_max = spec.resolved_k_max()

    def one(rep: int) -> Dict[str, Optional[bool]]:
        rng_par = np.random.default_rng(_rep_seed(spec, rep, 0))
        params = build_params(spec, rng_par)
        traj = simulate(params, spec.n, np.random.default_rng(_rep_seed(spec, rep, 1)))
        out: Dict[str, Optional[bool]] = {"ml": None, "bic": None}
        if run_ml:
            try:
                cfg = replace(config, seed=int(_rep_seed(spec, rep, 2).generate_state(1)[0] % 2**31))
                res = select_k(traj.obs, k_max, config=cfg)
                out["ml"] = res.k_hat == spec.k_star
            except RuntimeError:
                pass
        if run_bic:
            try:
                seed = int(_rep_seed(spec, rep, 3).generate_state(1)[0] % 2**31)
                k_bic, _ = bic_select(traj.obs, 1, k_max, restarts=spec.restarts, rng_seed=seed)
                out["bic"] = k_bic == spec.k_star
            except RuntimeError:
                pass
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(spec.reps)))
    else:
        results = [one(r) for r in range(spec.reps)]
    ml_res = [r["ml"] for r in results]
    bic_res = [r["bic"] for r in results]
    ml_ok = sum(1 for v in ml_res if v)
    bic_ok = sum(1 for v in bic_res if v)
    ml_valid = sum(1 for v in ml_res if v is not None)
    bic_valid = sum(1 for v in bic_res if v is not None)
    return FrequencyRow(
        k_star=spec.k_star,
        sigma=spec.sigma,
        n=spec.n,
        q_kind=spec.q_kind,
        heter=spec.heter,
        reps=spec.reps,
        ml_pct=100.0 * ml_ok / ml_valid if ml_valid else float("nan"),
        bic_pct=100.0 * bic_ok / bic_valid if bic_valid else float("nan"),
        ml_ok=ml_ok,
        bic_ok=bic_ok,
        ml_failures=spec.reps - ml_valid if run_ml else 0,
        bic_failures=spec.reps - bic_valid if run_bic else 0,
    )


def load_grid(path: Union[str, Path]) -> List[ExperimentSpec]:
    cells = json.loads(Path(path).read_text())
    if not isinstance(cells, list):
        raise ValueError("grid file must contain a JSON list of cells")
    return [ExperimentSpec(**cell) for cell in cells]


def run_grid(
    specs: List[ExperimentSpec],
    config: EstimatorConfig = EstimatorConfig(),
    threads: int = 1,
) -> List[FrequencyRow]:
    return [run_experiment(s, config=config, threads=threads) for s in specs]


def write_grid_csv(rows: List[FrequencyRow], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "sigma", "n", "Q", "heter", "reps", "ML", "BIC",
                    "ml_failures", "bic_failures"])
        for r in rows:
            w.writerow([r.k_star, r.sigma, r.n, r.q_kind, int(r.heter), r.reps,
                        r.ml_pct, r.bic_pct, r.ml_failures, r.bic_failures])


def grid_archive(rows: List[FrequencyRow], specs: List[ExperimentSpec],
                 config: EstimatorConfig) -> str:
    return json.dumps(
        {
            "config": asdict(config),
            "cells": [asdict(s) for s in specs],
            "rows": [asdict(r) for r in rows],
        },
        sort_keys=True,
    )
