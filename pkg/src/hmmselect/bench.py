"""Known-normalizing-constant benchmark targets for end-to-end estimator checks.

Two families: a d-dimensional 3-component Gaussian mixture scaled by exp(10),
and a 3-d product target (Normal(1,1) x Student-t(2) x Gamma(shape 6, scale 2))
scaled by exp(2).  Exact iid samplers stand in for posterior draws, so the
whole fit -> region -> estimate pipeline can be validated against the truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .hmm import RngLike, as_generator
from .impfn import choose_region, fit_importance
from .ncest import MarginalEstimate, is_core, ris_core

__all__ = ["BenchTarget", "BenchReport", "bench_target", "run_bench"]

GAUSSMIX_LOG_C = 10.0
MIXED3D_LOG_C = 2.0
GAUSSMIX_VAR = 0.1
# centers at 0, 3 e1, 6 e1: distinct and well separated relative to sqrt(0.1)
GAUSSMIX_SPACING = 3.0


@dataclass(frozen=True)
class BenchTarget:
    name: str
    dim: int
    log_c_true: float
    log_density: Callable[[np.ndarray], np.ndarray]  # unnormalized, includes C
    sample: Callable[[int, np.random.Generator], np.ndarray]


def bench_target(kind: str, dim: Optional[int] = None) -> BenchTarget:
    kind = kind.lower()
    if kind in ("gaussmix", "gaussmix3", "model1"):
        if dim is None or not (2 <= dim <= 30):
            raise ValueError("gaussmix needs 2 <= dim <= 30")
        centers = np.zeros((3, dim))
        centers[1, 0] = GAUSSMIX_SPACING
        centers[2, 0] = 2.0 * GAUSSMIX_SPACING

        def log_density(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(x)
            sq = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            comp = -0.5 * (dim * np.log(2.0 * np.pi * GAUSSMIX_VAR) + sq / GAUSSMIX_VAR)
            return GAUSSMIX_LOG_C + logsumexp(comp, axis=1) + np.log(1.0 / 3.0)

        def sample(n: int, rng: np.random.Generator) -> np.ndarray:
            which = rng.integers(0, 3, size=n)
            return centers[which] + rng.standard_normal((n, dim)) * np.sqrt(GAUSSMIX_VAR)

        return BenchTarget(
            name=f"gaussmix_d{dim}", dim=dim, log_c_true=GAUSSMIX_LOG_C,
            log_density=log_density, sample=sample,
        )
    if kind in ("mixed3d", "model2"):
        def log_density(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(x)
            lp = stats.norm.logpdf(x[:, 0], loc=1.0, scale=1.0)
            lp += stats.t.logpdf(x[:, 1], df=2)
            with np.errstate(divide="ignore", invalid="ignore"):
                lp += stats.gamma.logpdf(x[:, 2], a=6.0, scale=2.0)
            return MIXED3D_LOG_C + lp

        def sample(n: int, rng: np.random.Generator) -> np.ndarray:
            out = np.empty((n, 3))
            out[:, 0] = rng.normal(1.0, 1.0, size=n)
            out[:, 1] = rng.standard_t(2, size=n)
            out[:, 2] = rng.gamma(6.0, 2.0, size=n)
            return out

        return BenchTarget(
            name="mixed3d", dim=3, log_c_true=MIXED3D_LOG_C,
            log_density=log_density, sample=sample,
        )
    raise ValueError(f"unknown benchmark target {kind!r}")


@dataclass(frozen=True)
class BenchReport:
    target: str
    dim: int
    n_sim: int
    n_is: int
    method: str
    tail: str
    reps: int
    errors: np.ndarray  # log(C_hat / C) per rep
    ci_lo: float
    ci_hi: float

    @property
    def ci_width(self) -> float:
        return self.ci_hi - self.ci_lo

    @property
    def covers_zero(self) -> bool:
        return self.ci_lo <= 0.0 <= self.ci_hi


def run_bench(
    kind: str,
    n_sim: int,
    n_is: int,
    method: str = "is",
    tail: str = "gauss",
    reps: int = 100,
    rng_seed: RngLike = 0,
    dim: Optional[int] = None,
    n_components: int = 6,
    mass_bracket=(0.55, 0.98),
) -> BenchReport:
    """Replicated estimation of a known constant; 95% CI of log(C_hat/C) over reps."""
    target = bench_target(kind, dim)
    root = as_generator(rng_seed)
    seeds = root.integers(0, 2**31 - 1, size=(reps, 4))
    errors: List[float] = []
    for r in range(reps):
        draws = target.sample(n_sim, np.random.default_rng(int(seeds[r, 0])))
        g = fit_importance(draws, n_components, tail=tail, rng_seed=int(seeds[r, 1]))
        g = choose_region(g, draws, mc_budget=n_is, rng_seed=int(seeds[r, 2]),
                          mass_bracket=mass_bracket)
        if method == "ris":
            est: MarginalEstimate = ris_core(draws, target.log_density(draws), g)
        elif method == "is":
            est = is_core(g, target.log_density, draws, n_is, rng_seed=int(seeds[r, 3]))
        else:
            raise ValueError(f"unknown method {method!r}")
        errors.append(est.log_ml - target.log_c_true)
    errs = np.asarray(errors)
    lo, hi = np.percentile(errs, [2.5, 97.5])
    return BenchReport(
        target=target.name, dim=target.dim, n_sim=n_sim, n_is=n_is, method=method,
        tail=tail, reps=reps, errors=errs, ci_lo=float(lo), ci_hi=float(hi),
    )
