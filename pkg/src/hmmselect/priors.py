"""Prior specification and (log-)density evaluation.

Per-row flat Dirichlet on the transition matrix, independent Normals on the
state means, independent scaled-inverse-chi-square on the state variances.
Default hyper-parameters follow the quantile-based recipe used throughout the
experiments: prior mean locations at the K equally spaced quantile levels
between 0.05 and 0.95 of the data, prior mean sd 100, nu = 3, and
s = IQR(obs) / (2K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .hmm import HmmParams

__all__ = ["PriorSpec", "default_prior", "log_prior", "six_logpdf"]


@dataclass(frozen=True)
class PriorSpec:
    dirichlet_alpha: float
    mean_locs: np.ndarray
    mean_sd: float
    var_df: float
    var_scale: float  # s, not s^2

    def __post_init__(self):
        locs = np.ascontiguousarray(self.mean_locs, dtype=np.float64)
        if locs.ndim != 1 or locs.size < 1:
            raise ValueError("mean_locs must be a nonempty vector")
        if not np.all(np.isfinite(locs)):
            raise ValueError("mean_locs must be finite")
        for name in ("dirichlet_alpha", "mean_sd", "var_df", "var_scale"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive")
        locs.flags.writeable = False
        object.__setattr__(self, "mean_locs", locs)

    @property
    def k(self) -> int:
        return self.mean_locs.size


def default_prior(obs: np.ndarray, k: int) -> PriorSpec:
    obs = np.asarray(obs, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    levels = np.linspace(0.05, 0.95, k) if k > 1 else np.array([0.5])
    locs = np.quantile(obs, levels)
    iqr = float(np.quantile(obs, 0.75) - np.quantile(obs, 0.25))
    s = max(iqr / (2.0 * k), 1e-12)
    return PriorSpec(dirichlet_alpha=1.0, mean_locs=locs, mean_sd=100.0, var_df=3.0, var_scale=s)


def six_logpdf(x, nu: float, s2: float):
    """Scaled-inverse-chi-square log density with nu df and scale s2."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    half = 0.5 * nu
    with np.errstate(divide="ignore", invalid="ignore"):
        out[pos] = (
            half * np.log(half * s2) - gammaln(half) - (1.0 + half) * np.log(x[pos]) - half * s2 / x[pos]
        )
    return out


def log_prior(params: HmmParams, prior: PriorSpec) -> float:
    """log p0(params); -inf on the boundary (zero row entry or zero variance)."""
    if prior.k != params.k:
        raise ValueError("prior has wrong number of states")
    k = params.k
    a = prior.dirichlet_alpha
    if np.any(params.trans <= 0.0) or np.any(params.variances <= 0.0):
        return -np.inf
    row_const = gammaln(k * a) - k * gammaln(a)
    lp = k * row_const + (a - 1.0) * float(np.sum(np.log(params.trans)))
    sd2 = prior.mean_sd**2
    lp += float(
        np.sum(-0.5 * (np.log(2.0 * np.pi * sd2) + (params.means - prior.mean_locs) ** 2 / sd2))
    )
    lp += float(np.sum(six_logpdf(params.variances, prior.var_df, prior.var_scale**2)))
    return lp


def log_prior_batch(
    trans_b: np.ndarray, means_b: np.ndarray, vars_b: np.ndarray, prior: PriorSpec
) -> np.ndarray:
    """Vectorized log p0 over a batch of raw parameter arrays."""
    k = means_b.shape[1]
    a = prior.dirichlet_alpha
    bad = (trans_b <= 0.0).any(axis=(1, 2)) | (vars_b <= 0.0).any(axis=1)
    safe_t = np.where(trans_b > 0.0, trans_b, 1.0)
    safe_v = np.where(vars_b > 0.0, vars_b, 1.0)
    row_const = gammaln(k * a) - k * gammaln(a)
    lp = k * row_const + (a - 1.0) * np.log(safe_t).sum(axis=(1, 2))
    sd2 = prior.mean_sd**2
    lp += np.sum(-0.5 * (np.log(2.0 * np.pi * sd2) + (means_b - prior.mean_locs) ** 2 / sd2), axis=1)
    half = 0.5 * prior.var_df
    s2 = prior.var_scale**2
    lp += np.sum(
        half * np.log(half * s2) - gammaln(half) - (1.0 + half) * np.log(safe_v) - half * s2 / safe_v,
        axis=1,
    )
    return np.where(bad, -np.inf, lp)
