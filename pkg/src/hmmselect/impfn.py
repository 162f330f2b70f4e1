"""Importance function: over-fitted mixture on posterior draws plus a finite region.

The mixture is fitted by EM (k-means++ init) as a Gaussian mixture; Student-t
tails reuse the fitted locations and scales with the kernel swapped.  The
region is a union of per-component Mahalanobis ellipsoids whose radii start at
the 95% quantile of each component's own kernel and are scaled until the
Monte Carlo mass of the region under g sits inside the required bracket
(always within (1/2, 1)).
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
from scipy import stats
from scipy.special import gammaln
from sklearn.mixture import GaussianMixture

from .hmm import RngLike, as_generator

__all__ = [
    "ImportanceFn",
    "parse_tail",
    "fit_importance",
    "choose_region",
    "g_log_density",
    "g_sample",
    "in_region",
]

MAX_FIT_DRAWS = 2500  # deterministic strided subsample for the EM fit only


def parse_tail(tail: str) -> Tuple[str, Optional[float]]:
    t = tail.lower()
    if t in ("gauss", "gaussian", "normal"):
        return "gaussian", None
    if t in ("t", "student_t", "student-t"):
        return "student_t", 3.0
    if t.startswith("t") and t[1:].isdigit():
        return "student_t", float(t[1:])
    raise ValueError(f"unknown tail {tail!r}")


@dataclass(frozen=True)
class ImportanceFn:
    """Truncated mixture over the unconstrained space.

    radii_sq / region_mass are None until choose_region has run.
    """

    weights: np.ndarray  # (C,)
    centers: np.ndarray  # (C, D)
    scales: np.ndarray  # (C, D, D), symmetric positive definite
    tail: str  # "gaussian" | "student_t"
    df: Optional[float] = None
    radii_sq: Optional[np.ndarray] = None  # (C,)
    region_mass: Optional[float] = None
    region_mass_se: Optional[float] = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        c = np.ascontiguousarray(self.centers, dtype=np.float64)
        s = np.ascontiguousarray(self.scales, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-8 or np.any(w < 0):
            raise ValueError("weights must be a probability vector")
        if self.tail not in ("gaussian", "student_t"):
            raise ValueError("tail must be 'gaussian' or 'student_t'")
        if self.tail == "student_t" and not (self.df and self.df > 0):
            raise ValueError("student_t tail needs positive df")
        chols = np.linalg.cholesky(s)
        logdets = 2.0 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "_chols", chols)
        object.__setattr__(self, "_logdets", logdets)
        if self.radii_sq is not None:
            object.__setattr__(
                self, "radii_sq", np.ascontiguousarray(self.radii_sq, dtype=np.float64)
            )

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def to_json(self) -> str:
        rec = {
            "weights": self.weights.tolist(),
            "centers": self.centers.tolist(),
            "scales": self.scales.tolist(),
            "tail": self.tail,
            "df": self.df,
            "radii_sq": None if self.radii_sq is None else self.radii_sq.tolist(),
            "region_mass": self.region_mass,
            "region_mass_se": self.region_mass_se,
        }
        return json.dumps(rec, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ImportanceFn":
        rec = json.loads(text)
        return ImportanceFn(
            weights=np.asarray(rec["weights"]),
            centers=np.asarray(rec["centers"]),
            scales=np.asarray(rec["scales"]),
            tail=rec["tail"],
            df=rec["df"],
            radii_sq=None if rec["radii_sq"] is None else np.asarray(rec["radii_sq"]),
            region_mass=rec["region_mass"],
            region_mass_se=rec["region_mass_se"],
        )


def _as_matrix(draws) -> np.ndarray:
    if isinstance(draws, np.ndarray):
        if draws.ndim != 2:
            raise ValueError("draws matrix must be 2-d")
        return draws
    from .reparam import unconstrain_batch

    return unconstrain_batch(draws.trans, draws.means, draws.variances)


def fit_importance(
    draws,
    n_components: int,
    tail: str = "gaussian",
    rng_seed: RngLike = 0,
) -> ImportanceFn:
    """Fit the mixture to draws (PosteriorDraws or an (N,D) matrix)."""
    u = _as_matrix(draws)
    n = u.shape[0]
    if n < 1:
        raise ValueError("draws must be nonempty")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if n_components > n:
        warnings.warn(f"reducing n_components from {n_components} to {n} (too few draws)")
        n_components = n
    kind, df = parse_tail(tail)
    fit_u = u
    if n > MAX_FIT_DRAWS:
        step = n / MAX_FIT_DRAWS
        fit_u = u[(np.arange(MAX_FIT_DRAWS) * step).astype(int)]
    # whiten for the EM fit (posterior coordinates differ by orders of
    # magnitude and are strongly correlated between data-informed and
    # prior-dominated blocks), then map the fitted mixture back; the family is
    # affine-closed so nothing is lost
    d = u.shape[1]
    loc = fit_u.mean(axis=0)
    cov = np.cov(fit_u.T, bias=True).reshape(d, d)
    cov[np.diag_indices(d)] += 1e-10 * np.trace(cov) / d + 1e-30
    w_chol = np.linalg.cholesky(cov)
    z = sla.solve_triangular(w_chol, (fit_u - loc).T, lower=True).T
    seed = int(as_generator(rng_seed).integers(0, 2**31 - 1))
    gm = GaussianMixture(
        n_components=n_components,
        covariance_type="full",
        init_params="k-means++" if fit_u.shape[0] > n_components else "random",
        n_init=1,
        max_iter=100,
        reg_covar=1e-6,
        random_state=seed,
    ).fit(z)
    centers = loc + gm.means_ @ w_chol.T
    covs = np.einsum("ij,cjk,lk->cil", w_chol, gm.covariances_, w_chol)
    covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
    # drop near-empty satellite components: EM parks them on a handful of
    # fringe points with collapsed scales, and their density spikes blow up
    # the reciprocal weights; the local restriction keeps both estimators
    # exact under any component subset, so pruning only shrinks the region
    weights = gm.weights_
    floor = min(0.02, 0.2 / n_components)
    keep = weights >= min(floor, weights.max())
    weights = weights[keep] / weights[keep].sum()
    centers = centers[keep]
    covs = covs[keep]
    for c in range(covs.shape[0]):
        ridge = 1e-6 * np.trace(covs[c]) / d + 1e-12
        covs[c][np.diag_indices(d)] += ridge
    return ImportanceFn(
        weights=weights, centers=centers, scales=covs, tail=kind, df=df
    )


def _mahalanobis_sq(g: ImportanceFn, pts: np.ndarray) -> np.ndarray:
    """(C, M) squared Mahalanobis distances to each component."""
    out = np.empty((g.n_components, pts.shape[0]))
    for c in range(g.n_components):
        z = sla.solve_triangular(g._chols[c], (pts - g.centers[c]).T, lower=True)
        out[c] = np.einsum("ij,ij->j", z, z)
    return out


def g_log_density(g: ImportanceFn, pts: np.ndarray) -> np.ndarray:
    """Log mixture density at (M,D) points (untruncated kernel)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    d = g.dim
    m2 = _mahalanobis_sq(g, pts)
    logw = np.log(g.weights)[:, None]
    if g.tail == "gaussian":
        comp = -0.5 * (d * np.log(2.0 * np.pi) + g._logdets[:, None] + m2)
    else:
        df = g.df
        comp = (
            gammaln((df + d) / 2.0)
            - gammaln(df / 2.0)
            - 0.5 * d * np.log(df * np.pi)
            - 0.5 * g._logdets[:, None]
            - 0.5 * (df + d) * np.log1p(m2 / df)
        )
    a = logw + comp
    mx = a.max(axis=0)
    with np.errstate(divide="ignore"):
        return mx + np.log(np.exp(a - mx).sum(axis=0))


def g_sample(g: ImportanceFn, m: int, rng_seed: RngLike = 0) -> np.ndarray:
    """m ancestral draws from the (untruncated) mixture, deterministic per seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = as_generator(rng_seed)
    counts = rng.multinomial(m, g.weights)
    blocks = []
    for c, cnt in enumerate(counts):
        if cnt == 0:
            continue
        z = rng.standard_normal((cnt, g.dim))
        x = g.centers[c] + z @ g._chols[c].T
        if g.tail == "student_t":
            scale = np.sqrt(g.df / rng.chisquare(g.df, size=cnt))
            x = g.centers[c] + (x - g.centers[c]) * scale[:, None]
        blocks.append(x)
    out = np.vstack(blocks)
    return out[rng.permutation(m)]


def in_region(g: ImportanceFn, pts: np.ndarray) -> np.ndarray:
    """Boolean mask: inside the union of component ellipsoids."""
    if g.radii_sq is None:
        raise ValueError("region not set; run choose_region first")
    m2 = _mahalanobis_sq(g, np.atleast_2d(pts))
    return (m2 <= g.radii_sq[:, None]).any(axis=0)


def choose_region(
    g: ImportanceFn,
    draws=None,
    mc_budget: int = 10000,
    rng_seed: RngLike = 0,
    mass_bracket: Tuple[float, float] = (0.55, 0.98),
    start_quantile: float = 0.95,
    max_adjust: int = 50,
) -> ImportanceFn:
    """Attach per-component radii so that the region mass lands in the bracket.

    The region is an artifact of the *fitted* mixture (locations and scales),
    so both the starting radius (the chi-square quantile) and the Monte Carlo
    mass estimate are taken under the Gaussian-kernel view of the components;
    a Student-t tail swaps only the density kernel used in the estimator
    weights.  Radii shrink or grow geometrically until the mass estimate falls
    inside mass_bracket (a sub-interval of the required (1/2, 1)).
    """
    lo, hi = mass_bracket
    if not (0.5 < lo < hi < 1.0):
        raise ValueError("mass_bracket must sit strictly inside (1/2, 1)")
    radii_sq = np.full(g.n_components, float(stats.chi2.ppf(start_quantile, g.dim)))
    rng = as_generator(rng_seed)
    g_gauss = dataclasses.replace(g, tail="gaussian", df=None)
    cloud = g_sample(g_gauss, mc_budget, rng)
    m2 = _mahalanobis_sq(g, cloud)
    mass = None
    for _ in range(max_adjust):
        inside = (m2 <= radii_sq[:, None]).any(axis=0)
        mass = float(inside.mean())
        if lo < mass < hi:
            se = float(np.sqrt(mass * (1.0 - mass) / mc_budget))
            out = dataclasses.replace(
                g, radii_sq=radii_sq, region_mass=mass, region_mass_se=se
            )
            if draws is not None:
                u = _as_matrix(draws)
                if not in_region(out, u).any():
                    warnings.warn("no posterior draws fall inside the chosen region")
            return out
        factor = 0.85 if mass >= hi else 1.25
        radii_sq = radii_sq * factor
    raise RuntimeError(
        f"could not bracket the region mass in {max_adjust} adjustments "
        f"(last mass {mass!r}, bracket {mass_bracket}, dim {g.dim})"
    )
