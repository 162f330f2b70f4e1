"""Top-level order selector: K_hat = argmax_K of the estimated marginal likelihood."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .hmm import HmmParams, _check_obs, simulate
from .mixture import estimate_marginal_mixture
from .ncest import EstimatorConfig, MarginalEstimate, estimate_marginal
from .priors import PriorSpec, default_prior

__all__ = ["SelectionResult", "RateReport", "select_k", "select_k_mixture", "consistency_probe"]


@dataclass(frozen=True)
class SelectionResult:
    k_hat: int
    estimates: List[MarginalEstimate]
    indistinguishable: List[int] = field(default_factory=list)
    failures: Dict[int, str] = field(default_factory=dict)

    def estimate_for(self, k: int) -> MarginalEstimate:
        for e in self.estimates:
            if e.k == k:
                return e
        raise KeyError(k)


def _run_all_k(
    obs: np.ndarray,
    k_max: int,
    prior_builder: Callable[[np.ndarray, int], PriorSpec],
    config: EstimatorConfig,
    estimator: Callable,
    threads: int = 1,
) -> SelectionResult:
    obs = _check_obs(obs)
    if k_max < 1:
        raise ValueError("k_max must be >= 1")

    def one(k: int):
        prior = prior_builder(obs, k)
        return estimator(obs, k, prior, config)

    estimates: List[MarginalEstimate] = []
    failures: Dict[int, str] = {}
    ks = list(range(1, k_max + 1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futs = {k: ex.submit(one, k) for k in ks}
            for k in ks:
                try:
                    estimates.append(futs[k].result())
                except RuntimeError as e:
                    failures[k] = str(e)
    else:
        for k in ks:
            try:
                estimates.append(one(k))
            except RuntimeError as e:
                failures[k] = str(e)
    if not estimates:
        raise RuntimeError(f"all candidate orders failed: {failures}")
    best = max(estimates, key=lambda e: e.log_ml)
    # under MC noise prefer the smallest K that is statistically indistinguishable
    band: List[int] = []
    for e in estimates:
        gap = best.log_ml - e.log_ml
        comb = 2.0 * float(np.hypot(e.log_ml_se, best.log_ml_se))
        if np.isfinite(comb) and gap <= comb:
            band.append(e.k)
    k_hat = min(band) if band else best.k
    indist = sorted(band) if len(band) > 1 else []
    return SelectionResult(
        k_hat=k_hat, estimates=sorted(estimates, key=lambda e: e.k),
        indistinguishable=indist, failures=failures,
    )


def select_k(
    obs: np.ndarray,
    k_max: int,
    prior_builder: Optional[Callable[[np.ndarray, int], PriorSpec]] = None,
    config: EstimatorConfig = EstimatorConfig(),
    threads: int = 1,
) -> SelectionResult:
    """Estimate log p_K(y) for K = 1..k_max (prior rebuilt per K) and pick the argmax."""
    return _run_all_k(obs, k_max, prior_builder or default_prior, config, estimate_marginal, threads)


def select_k_mixture(
    obs: np.ndarray,
    k_max: int,
    prior_builder: Optional[Callable[[np.ndarray, int], PriorSpec]] = None,
    config: EstimatorConfig = EstimatorConfig(),
    threads: int = 1,
) -> SelectionResult:
    """Same selector with the iid mixture likelihood (identical transition rows)."""
    return _run_all_k(
        obs, k_max, prior_builder or default_prior, config, estimate_marginal_mixture, threads
    )


@dataclass(frozen=True)
class RateReport:
    n_grid: List[int]
    mean_log_ratio_under: Optional[np.ndarray]  # log p_{K*-1} - log p_{K*} per n
    mean_log_ratio_over: np.ndarray  # log p_{K*+1} - log p_{K*} per n
    under_slope: Optional[float]
    under_r2: Optional[float]
    over_slope: float  # vs log n
    over_r2: float
    reps: int


def _regress(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(slope), r2


def consistency_probe(
    k_star: int,
    params: HmmParams,
    n_grid: List[int],
    reps: int,
    config: EstimatorConfig = EstimatorConfig(),
    threads: int = 1,
) -> RateReport:
    """Empirical decay rates of the marginal-likelihood ratios around K*.

    For under-fitting (K*-1) the mean log-ratio should fall linearly in n; for
    over-fitting (K*+1) it should fall linearly in log n with slope near
    -(K - K*) d / 2 = -1 for the Gaussian case.
    """
    if sorted(n_grid) != list(n_grid) or len(n_grid) < 2:
        raise ValueError("n_grid must be increasing with at least two points")
    if params.k != k_star:
        raise ValueError("params must have k_star states")
    ks = [k for k in (k_star - 1, k_star, k_star + 1) if k >= 1]

    def one(n: int, rep: int) -> Dict[int, float]:
        import dataclasses

        traj = simulate(params, n, np.random.default_rng(
            np.random.SeedSequence([config.seed, 101, n, rep])))
        cfg = dataclasses.replace(config, seed=config.seed + 7919 * rep + n)
        out: Dict[int, float] = {}
        for k in ks:
            prior = default_prior(traj.obs, k)
            out[k] = estimate_marginal(traj.obs, k, prior, cfg).log_ml
        return out

    tasks = [(n, r) for n in n_grid for r in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda t: one(*t), tasks))
    else:
        results = [one(*t) for t in tasks]
    by_n: Dict[int, List[Dict[int, float]]] = {n: [] for n in n_grid}
    for (n, _), res in zip(tasks, results):
        by_n[n].append(res)
    under = None
    under_slope = under_r2 = None
    if k_star > 1:
        under = np.array(
            [np.mean([r[k_star - 1] - r[k_star] for r in by_n[n]]) for n in n_grid]
        )
        under_slope, under_r2 = _regress(np.asarray(n_grid, dtype=float), under)
    over = np.array([np.mean([r[k_star + 1] - r[k_star] for r in by_n[n]]) for n in n_grid])
    over_slope, over_r2 = _regress(np.log(np.asarray(n_grid, dtype=float)), over)
    return RateReport(
        n_grid=list(n_grid),
        mean_log_ratio_under=under,
        mean_log_ratio_over=over,
        under_slope=under_slope,
        under_r2=under_r2,
        over_slope=over_slope,
        over_r2=over_r2,
        reps=reps,
    )
