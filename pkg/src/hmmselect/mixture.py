"""Finite-mixture special case: identical transition rows, iid hidden states.

Shares the emission priors with the HMM; the single weight vector gets one
Dirichlet prior and an exact conjugate update.  The marginal-likelihood
pipeline mirrors the HMM one in a (3K-1)-dimensional unconstrained space.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .em import random_init
from .hmm import HmmParams, RngLike, as_generator, _check_obs
from .impfn import choose_region, fit_importance
from .ncest import (
    EstimatorConfig,
    MarginalEstimate,
    _derived_seed,
    default_components,
    is_core,
    ris_core,
)
from .priors import PriorSpec, six_logpdf

__all__ = [
    "MixtureDraws",
    "mixture_log_likelihood",
    "run_gibbs_mixture",
    "estimate_marginal_mixture",
]


@dataclass(frozen=True)
class MixtureDraws:
    k: int
    weights: np.ndarray  # (N, K)
    means: np.ndarray  # (N, K)
    variances: np.ndarray  # (N, K)
    logliks: np.ndarray
    n_burn: int
    thin: int


def mixture_log_likelihood(weights: np.ndarray, means: np.ndarray, variances: np.ndarray,
                           obs: np.ndarray) -> float:
    """log prod_i sum_k s_k N(y_i; mu_k, sigma_k^2).

    Equals the HMM log-likelihood when every transition row is s.
    """
    obs = _check_obs(obs)
    weights = np.asarray(weights, dtype=float)
    if abs(weights.sum() - 1.0) > 1e-8 or np.any(weights < 0):
        raise ValueError("weights must be a probability vector")
    return float(_kernels.mixture_loglik(weights, np.asarray(means, dtype=float),
                                         np.asarray(variances, dtype=float), obs))


def hmm_params_as_mixture(params: HmmParams) -> tuple:
    """(s, means, variances) for an identical-row transition matrix."""
    if not np.allclose(params.trans, params.trans[0], atol=1e-12):
        raise ValueError("transition rows are not identical")
    return params.trans[0].copy(), params.means.copy(), params.variances.copy()


def run_gibbs_mixture(
    obs: np.ndarray,
    k: int,
    prior: PriorSpec,
    n_iter: int = 6000,
    n_burn: int = 1000,
    thin: int = 1,
    rng_seed: RngLike = 0,
) -> MixtureDraws:
    obs = _check_obs(obs)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (n_iter > n_burn >= 0):
        raise ValueError("need n_iter > n_burn >= 0")
    if prior.k != k:
        raise ValueError("prior has wrong number of states")
    rng = as_generator(rng_seed)
    start = random_init(obs, k, rng)
    w0 = np.full(k, 1.0 / k)
    n_keep = (n_iter - n_burn + thin - 1) // thin
    weights_out = np.empty((n_keep, k))
    means_out = np.empty((n_keep, k))
    vars_out = np.empty((n_keep, k))
    ll_out = np.empty(n_keep)
    kept = _kernels.gibbs_chain_mixture(
        obs,
        w0,
        start.means,
        start.variances,
        float(prior.dirichlet_alpha),
        prior.mean_locs,
        float(prior.mean_sd**2),
        float(prior.var_df),
        float(prior.var_scale**2),
        int(n_iter),
        int(n_burn),
        int(thin),
        rng,
        weights_out,
        means_out,
        vars_out,
        ll_out,
    )
    if kept != n_keep or not np.all(np.isfinite(ll_out)):
        raise RuntimeError("mixture gibbs produced invalid draws")
    return MixtureDraws(
        k=k, weights=weights_out, means=means_out, variances=vars_out,
        logliks=ll_out, n_burn=n_burn, thin=thin,
    )


def _mix_dim(k: int) -> int:
    return 3 * k - 1


def mixture_unconstrain_batch(weights_b, means_b, vars_b) -> np.ndarray:
    n, k = means_b.shape
    u = np.empty((n, _mix_dim(k)))
    if k > 1:
        u[:, : k - 1] = np.log(weights_b[:, :-1] / weights_b[:, -1:])
    u[:, k - 1 : 2 * k - 1] = means_b
    u[:, 2 * k - 1 :] = np.log(vars_b)
    return u


def mixture_constrain_batch(u: np.ndarray, k: int):
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    logj = np.zeros(n)
    weights_b = np.ones((n, k))
    if k > 1:
        aug = np.concatenate([u[:, : k - 1], np.zeros((n, 1))], axis=1)
        m = aug.max(axis=1, keepdims=True)
        logq = aug - (m + np.log(np.exp(aug - m).sum(axis=1, keepdims=True)))
        weights_b = np.exp(logq)
        logj += logq.sum(axis=1)
    means_b = u[:, k - 1 : 2 * k - 1].copy()
    logvars = u[:, 2 * k - 1 :]
    with np.errstate(over="ignore"):
        vars_b = np.exp(logvars)
    logj += logvars.sum(axis=1)
    return weights_b, means_b, vars_b, logj


def mixture_log_prior_batch(weights_b, means_b, vars_b, prior: PriorSpec) -> np.ndarray:
    k = means_b.shape[1]
    a = prior.dirichlet_alpha
    bad = (weights_b <= 0.0).any(axis=1) | (vars_b <= 0.0).any(axis=1)
    safe_w = np.where(weights_b > 0.0, weights_b, 1.0)
    safe_v = np.where(vars_b > 0.0, vars_b, 1.0)
    lp = gammaln(k * a) - k * gammaln(a) + (a - 1.0) * np.log(safe_w).sum(axis=1)
    sd2 = prior.mean_sd**2
    lp += np.sum(-0.5 * (np.log(2.0 * np.pi * sd2) + (means_b - prior.mean_locs) ** 2 / sd2), axis=1)
    half = 0.5 * prior.var_df
    s2 = prior.var_scale**2
    lp += np.sum(
        half * np.log(half * s2) - gammaln(half) - (1.0 + half) * np.log(safe_v) - half * s2 / safe_v,
        axis=1,
    )
    return np.where(bad, -np.inf, lp)


def mixture_log_target(obs: np.ndarray, k: int, prior: PriorSpec) -> Callable:
    obs = _check_obs(obs)

    def log_target(u: np.ndarray) -> np.ndarray:
        weights_b, means_b, vars_b, logj = mixture_constrain_batch(u, k)
        out = np.empty(u.shape[0])
        _kernels.mixture_loglik_batch(weights_b, means_b, vars_b, obs, out)
        return out + mixture_log_prior_batch(weights_b, means_b, vars_b, prior) + logj

    return log_target


def estimate_marginal_mixture(
    obs: np.ndarray, k: int, prior: PriorSpec, config: EstimatorConfig = EstimatorConfig()
) -> MarginalEstimate:
    """Marginal likelihood of the iid K-component Gaussian mixture model."""
    obs = _check_obs(obs)
    stage = "gibbs"
    try:
        draws = run_gibbs_mixture(
            obs,
            k,
            prior,
            n_iter=config.n_burn + config.n_draws * config.thin,
            n_burn=config.n_burn,
            thin=config.thin,
            rng_seed=_derived_seed(config.seed, k, 11),
        )
        u = mixture_unconstrain_batch(draws.weights, draws.means, draws.variances)
        stage = "fit_importance"
        n_comp = config.n_components if config.n_components is not None else default_components(k)
        g = fit_importance(u, n_comp, tail=config.resolved_tail(),
                           rng_seed=_derived_seed(config.seed, k, 12))
        stage = "choose_region"
        g = choose_region(
            g,
            u,
            mc_budget=config.mc_budget,
            rng_seed=_derived_seed(config.seed, k, 13),
            mass_bracket=config.mass_bracket,
        )
        stage = f"estimate_{config.method}"
        target = mixture_log_target(obs, k, prior)
        if config.method == "ris":
            _, _, _, logj = mixture_constrain_batch(u, k)
            vals = (
                draws.logliks
                + mixture_log_prior_batch(draws.weights, draws.means, draws.variances, prior)
                + logj
            )
            est = ris_core(u, vals, g, k=k)
        elif config.method == "is":
            est = is_core(g, target, u, config.n_is,
                          rng_seed=_derived_seed(config.seed, k, 14), k=k)
        else:
            raise ValueError(f"unknown method {config.method!r}")
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        raise RuntimeError(
            f"mixture marginal estimation failed at stage '{stage}' for K={k}: {e}"
        ) from e
    return est
