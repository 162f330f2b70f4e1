"""Locally restricted RIS and IS estimators of the marginal likelihood.

Both estimators work in the unconstrained space against the transformed joint
p(y, phi(u)) |J(u)| whose normalizing constant equals p_K(y); the generic
cores also accept any unnormalized log-density, which the benchmark module
reuses for targets with known constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .gibbs import PosteriorDraws, run_gibbs
from .hmm import RngLike, as_generator, _check_obs
from .impfn import (
    ImportanceFn,
    choose_region,
    fit_importance,
    g_log_density,
    g_sample,
    in_region,
)
from .priors import PriorSpec, log_prior_batch
from .reparam import constrain_batch, unconstrain_batch

__all__ = [
    "MarginalEstimate",
    "EstimatorConfig",
    "hmm_log_target",
    "ris_core",
    "is_core",
    "estimate_ris",
    "estimate_is",
    "estimate_marginal",
]


@dataclass(frozen=True)
class MarginalEstimate:
    k: int
    log_ml: float
    method: str  # "ris" | "is"
    ess: float
    n_inside: int
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def log_ml_se(self) -> float:
        return self.diagnostics.get("log_ml_se", float("nan"))


def default_components(k: int) -> int:
    """Mixture size for the importance fit.

    Label switching fragments the posterior into up to K! relabeled copies,
    and under-fitted candidates add merge configurations on top, so 2K
    components under-cover already at K=2 on 3-state data (measured ESS
    collapse); K(K+1) capped at 12 tracks the fragmentation without blowing up
    the fit cost.
    """
    return min(k * (k + 1), 12)


@dataclass(frozen=True)
class EstimatorConfig:
    """Budgets and method switches for one marginal-likelihood estimation."""

    method: str = "is"
    tail: Optional[str] = None  # None: gaussian for RIS, t3 for IS
    n_draws: int = 5000
    n_burn: int = 1000
    thin: int = 1
    n_is: int = 10000
    mc_budget: int = 10000
    n_components: Optional[int] = None  # None: min(2K, 10)
    mass_bracket: Tuple[float, float] = (0.55, 0.98)
    seed: int = 0

    def resolved_tail(self) -> str:
        if self.tail is not None:
            return self.tail
        return "t3" if self.method == "is" else "gauss"


def hmm_log_target(
    obs: np.ndarray, k: int, prior: PriorSpec
) -> Callable[[np.ndarray], np.ndarray]:
    """Unnormalized log posterior density in u-space: loglik + prior + Jacobian."""
    obs = _check_obs(obs)

    def log_target(u: np.ndarray) -> np.ndarray:
        trans_b, means_b, vars_b, logj = constrain_batch(u, k)
        out = np.empty(u.shape[0])
        _kernels.loglik_batch(trans_b, means_b, vars_b, obs, out)
        return out + log_prior_batch(trans_b, means_b, vars_b, prior) + logj

    return log_target


def _weight_stats(log_w: np.ndarray, n_total: int) -> Tuple[float, float, float]:
    """(log_sum, ess, relvar of the mean over n_total draws), zeros outside region."""
    finite = log_w[np.isfinite(log_w)]
    if finite.size == 0:
        raise RuntimeError("all weights vanished")
    log_sum = float(logsumexp(finite))
    log_sum_sq = float(logsumexp(2.0 * finite))
    ess = float(np.exp(2.0 * log_sum - log_sum_sq))
    # Var(mean)/mean^2 with the zero weights of out-of-region draws included
    relvar = max(float(n_total * np.exp(log_sum_sq - 2.0 * log_sum) - 1.0), 0.0) / n_total
    return log_sum, ess, relvar


def ris_core(
    u_draws: np.ndarray,
    log_target_at_draws: np.ndarray,
    g: ImportanceFn,
    k: int = 0,
) -> MarginalEstimate:
    """Reciprocal importance sampling over posterior draws restricted to the region."""
    if g.region_mass is None:
        raise ValueError("region not set; run choose_region first")
    n = u_draws.shape[0]
    mask = in_region(g, u_draws)
    n_inside = int(mask.sum())
    if n_inside == 0:
        raise RuntimeError("no posterior draws inside the region")
    log_w = g_log_density(g, u_draws[mask]) - log_target_at_draws[mask]
    if not np.all(np.isfinite(log_w)):
        bad = int(np.flatnonzero(mask)[np.flatnonzero(~np.isfinite(log_w))[0]])
        raise RuntimeError(f"non-finite reciprocal weight at draw {bad}")
    log_sum, ess, relvar = _weight_stats(log_w, n)
    mass = g.region_mass
    log_ml = -(log_sum - np.log(n * mass))
    se = float(np.sqrt(relvar + (g.region_mass_se / mass) ** 2))
    diag = {
        "log_ml_se": se,
        "region_mass": mass,
        "region_mass_se": g.region_mass_se,
        "weight_relvar": relvar,
        "n_total": float(n),
    }
    return MarginalEstimate(
        k=k, log_ml=float(log_ml), method="ris", ess=ess, n_inside=n_inside, diagnostics=diag
    )


def is_core(
    g: ImportanceFn,
    log_target: Callable[[np.ndarray], np.ndarray],
    u_draws: np.ndarray,
    m: int,
    rng_seed: RngLike = 0,
    k: int = 0,
) -> MarginalEstimate:
    """Importance sampling with the in-region fraction of posterior draws as P_Omega."""
    if g.region_mass is None:
        raise ValueError("region not set; run choose_region first")
    if m < 1:
        raise ValueError("m must be >= 1")
    n = u_draws.shape[0]
    p_omega = float(in_region(g, u_draws).mean())
    if p_omega == 0.0:
        raise RuntimeError("P_Omega = 0: no posterior draws inside the region")
    v = g_sample(g, m, rng_seed)
    mask = in_region(g, v)
    n_inside = int(mask.sum())
    if n_inside == 0:
        raise RuntimeError("all importance draws fell outside the region")
    log_w = log_target(v[mask]) - g_log_density(g, v[mask])
    invalid = np.isnan(log_w) | np.isposinf(log_w)  # -inf is a zero weight, fine
    if invalid.any():
        bad = int(np.flatnonzero(mask)[np.flatnonzero(invalid)[0]])
        raise RuntimeError(f"invalid importance weight at draw {bad}")
    log_sum, ess, relvar = _weight_stats(log_w, m)
    log_ml = log_sum - np.log(m) - np.log(p_omega)
    relvar_p = (1.0 - p_omega) / (n * p_omega)
    se = float(np.sqrt(relvar + relvar_p))
    diag = {
        "log_ml_se": se,
        "region_mass": g.region_mass,
        "region_mass_se": g.region_mass_se,
        "p_omega": p_omega,
        "weight_relvar": relvar,
        "n_total": float(m),
    }
    return MarginalEstimate(
        k=k, log_ml=float(log_ml), method="is", ess=ess, n_inside=n_inside, diagnostics=diag
    )


def _posterior_log_target_vals(
    draws: PosteriorDraws, prior: PriorSpec, u: np.ndarray
) -> np.ndarray:
    # stored logliks avoid N extra forward passes; prior and Jacobian are cheap
    _, _, _, logj = constrain_batch(u, draws.k)
    lp = log_prior_batch(draws.trans, draws.means, draws.variances, prior)
    return draws.logliks + lp + logj


def estimate_ris(
    draws: PosteriorDraws, g: ImportanceFn, obs: np.ndarray, prior: PriorSpec
) -> MarginalEstimate:
    u = unconstrain_batch(draws.trans, draws.means, draws.variances)
    vals = _posterior_log_target_vals(draws, prior, u)
    return ris_core(u, vals, g, k=draws.k)


def estimate_is(
    draws: PosteriorDraws,
    g: ImportanceFn,
    obs: np.ndarray,
    prior: PriorSpec,
    m: int,
    rng_seed: RngLike = 0,
) -> MarginalEstimate:
    u = unconstrain_batch(draws.trans, draws.means, draws.variances)
    target = hmm_log_target(obs, draws.k, prior)
    return is_core(g, target, u, m, rng_seed, k=draws.k)


def _derived_seed(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(t) for t in tags]))


def estimate_marginal(
    obs: np.ndarray, k: int, prior: PriorSpec, config: EstimatorConfig = EstimatorConfig()
) -> MarginalEstimate:
    """Full pipeline: Gibbs -> importance fit -> region -> RIS/IS estimate."""
    obs = _check_obs(obs)
    stage = "gibbs"
    try:
        draws = run_gibbs(
            obs,
            k,
            prior,
            n_iter=config.n_burn + config.n_draws * config.thin,
            n_burn=config.n_burn,
            thin=config.thin,
            rng_seed=_derived_seed(config.seed, k, 1),
        )
        stage = "fit_importance"
        n_comp = config.n_components if config.n_components is not None else default_components(k)
        u = unconstrain_batch(draws.trans, draws.means, draws.variances)
        g = fit_importance(u, n_comp, tail=config.resolved_tail(),
                           rng_seed=_derived_seed(config.seed, k, 2))
        stage = "choose_region"
        g = choose_region(
            g,
            u,
            mc_budget=config.mc_budget,
            rng_seed=_derived_seed(config.seed, k, 3),
            mass_bracket=config.mass_bracket,
        )
        stage = f"estimate_{config.method}"
        if config.method == "ris":
            est = ris_core(u, _posterior_log_target_vals(draws, prior, u), g, k=k)
        elif config.method == "is":
            est = is_core(
                g,
                hmm_log_target(obs, k, prior),
                u,
                config.n_is,
                rng_seed=_derived_seed(config.seed, k, 4),
                k=k,
            )
        else:
            raise ValueError(f"unknown method {config.method!r}")
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        raise RuntimeError(f"marginal estimation failed at stage '{stage}' for K={k}: {e}") from e
    diag = dict(est.diagnostics)
    diag["accept_rate_rows"] = draws.accept_rate_rows
    return replace(est, diagnostics=diag)
