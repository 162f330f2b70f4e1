"""Baum-Welch EM with random restarts and the BIC baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import _kernels
from .hmm import HmmParams, RngLike, as_generator, _check_obs

__all__ = ["EmResult", "BicScore", "baum_welch", "multistart_fit", "bic_select", "random_init"]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
VAR_FLOOR_FRAC = 1e-8  # times var(obs); blocks the one-observation degenerate mode


@dataclass(frozen=True)
class EmResult:
    params: HmmParams
    loglik: float
    iterations: int
    converged: bool
    restart_index: int
    loglik_trace: np.ndarray = field(repr=False, default=None)
    hit_floor: bool = False


@dataclass(frozen=True)
class BicScore:
    k: int
    bic: float
    penalty: float
    best_loglik: float


def random_init(obs: np.ndarray, k: int, rng: np.random.Generator) -> HmmParams:
    """Means from k random order statistics, IQR-based variances, flat-Dirichlet rows."""
    n = obs.size
    idx = rng.choice(n, size=k, replace=n < k)
    means = np.sort(obs[idx])
    iqr = float(np.quantile(obs, 0.75) - np.quantile(obs, 0.25))
    scale = max(iqr / (2.0 * k), 1e-3 * (1.0 + float(np.std(obs))))
    variances = np.full(k, scale**2)
    trans = rng.dirichlet(np.ones(k), size=k)
    trans = trans / trans.sum(axis=1, keepdims=True)
    return HmmParams(k=k, trans=trans, means=means, variances=variances)


def baum_welch(
    obs: np.ndarray,
    k: int,
    init: HmmParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    restart_index: int = 0,
) -> EmResult:
    """EM under the stationary-init likelihood; loglik trace is non-decreasing.

    The M-step uses the closed-form responsibility updates; the row update is
    accepted through a generalized-EM guard so the stationary-init term cannot
    push the likelihood down.  Variances are floored at 1e-8 * var(obs); a fit
    whose final variances sit on the floor is flagged (hit_floor) rather than
    raising.
    """
    obs = _check_obs(obs)
    if k < 1:
        raise ValueError("k must be >= 1")
    if init.k != k:
        raise ValueError("init has wrong number of states")
    if tol <= 0:
        raise ValueError("tol must be positive")
    var_floor = VAR_FLOOR_FRAC * float(np.var(obs)) + 1e-300
    trace = np.empty(max_iter)
    trans, means, variances, n_evals, converged, hit_floor = _kernels.em_fit(
        obs, init.trans, init.means, init.variances, tol, max_iter, var_floor, trace
    )
    if n_evals == 0:
        raise RuntimeError("EM could not evaluate the likelihood at the initial point")
    params = HmmParams(k=k, trans=trans, means=means, variances=variances)
    return EmResult(
        params=params,
        loglik=float(trace[n_evals - 1]),
        iterations=int(n_evals),
        converged=bool(converged),
        restart_index=restart_index,
        loglik_trace=trace[:n_evals].copy(),
        hit_floor=bool(hit_floor),
    )


def multistart_fit(
    obs: np.ndarray,
    k: int,
    restarts: int = 50,
    rng_seed: RngLike = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EmResult:
    """Best-of-restarts EM fit; ties break toward the lowest restart index."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    obs = _check_obs(obs)
    rng = as_generator(rng_seed)
    best: Optional[EmResult] = None
    for r in range(restarts):
        init = random_init(obs, k, rng)
        try:
            res = baum_welch(obs, k, init, tol=tol, max_iter=max_iter, restart_index=r)
        except RuntimeError:
            continue
        if res.hit_floor:
            continue
        if best is None or res.loglik > best.loglik:
            best = res
    if best is None:
        raise RuntimeError(f"all {restarts} restarts failed (variance collapse)")
    return best


def bic_penalty(k: int, n: int, d: int = 2) -> float:
    return k * (k + d - 1) * float(np.log(n))


def bic_select(
    obs: np.ndarray,
    k_min: int,
    k_max: int,
    d: int = 2,
    restarts: int = 50,
    rng_seed: RngLike = 0,
) -> Tuple[int, List[BicScore]]:
    """Fit each K in [k_min, k_max], return the BIC minimizer and all scores."""
    if not (1 <= k_min <= k_max):
        raise ValueError("need 1 <= k_min <= k_max")
    obs = _check_obs(obs)
    rng = as_generator(rng_seed)
    scores: List[BicScore] = []
    for k in range(k_min, k_max + 1):
        seed = int(rng.integers(0, 2**63 - 1))
        fit = multistart_fit(obs, k, restarts=restarts, rng_seed=seed)
        pen = bic_penalty(k, obs.size, d)
        scores.append(BicScore(k=k, bic=-2.0 * fit.loglik + pen, penalty=pen, best_loglik=fit.loglik))
    best = min(scores, key=lambda s: (s.bic, s.k))
    return best.k, scores
