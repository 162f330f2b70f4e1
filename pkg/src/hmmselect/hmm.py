"""Gaussian HMM parameter types, exact likelihood, simulation, FFBS.

State labels are 1-based in the public API (paths, Trajectory.hidden, file
formats); compiled kernels use 0-based arrays internally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _kernels

__all__ = [
    "HmmParams",
    "Trajectory",
    "stationary",
    "log_likelihood",
    "joint_log_density",
    "simulate",
    "ffbs_sample_path",
    "load_trajectory",
    "save_trajectory",
]

VAR_FLOOR = 1e-300  # below this the likelihood blows up; reject outright

RngLike = Union[int, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HmmParams:
    """Transition matrix plus per-state Gaussian emission parameters."""

    k: int
    trans: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        trans = np.asarray(self.trans, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        k = int(self.k)
        if k < 1:
            raise ValueError("k must be a positive integer")
        if trans.shape != (k, k):
            raise ValueError(f"trans must be {k}x{k}, got {trans.shape}")
        if means.shape != (k,) or variances.shape != (k,):
            raise ValueError("means and variances must have length k")
        if not np.all(np.isfinite(trans)) or not np.all(np.isfinite(means)):
            raise ValueError("non-finite parameter values")
        if np.any(trans < 0):
            raise ValueError("transition entries must be nonnegative")
        if np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if not np.all(np.isfinite(variances)) or np.any(variances <= VAR_FLOOR):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "trans", _readonly(trans))
        object.__setattr__(self, "means", _readonly(means))
        object.__setattr__(self, "variances", _readonly(variances))

    def permuted(self, perm: np.ndarray) -> "HmmParams":
        """Relabel states by permutation perm (perm[i] = new position of i)."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return HmmParams(
            k=self.k,
            trans=self.trans[np.ix_(inv, inv)],
            means=self.means[inv],
            variances=self.variances[inv],
        )


@dataclass(frozen=True)
class Trajectory:
    """Observed series plus the true hidden path when simulated (1-based)."""

    obs: np.ndarray
    hidden: Optional[np.ndarray] = None

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.float64)
        if obs.ndim != 1 or obs.size < 1:
            raise ValueError("obs must be a nonempty 1-d array")
        object.__setattr__(self, "obs", _readonly(obs))
        if self.hidden is not None:
            hidden = np.asarray(self.hidden, dtype=np.int64)
            if hidden.shape != obs.shape:
                raise ValueError("hidden must match obs length")
            if np.any(hidden < 1):
                raise ValueError("hidden states are 1-based")
            hidden = np.ascontiguousarray(hidden)
            hidden.flags.writeable = False
            object.__setattr__(self, "hidden", hidden)

    @property
    def n(self) -> int:
        return self.obs.size


def stationary(trans: np.ndarray) -> np.ndarray:
    """Stationary distribution mu with mu Q = mu, sum(mu) = 1.

    Raises ValueError when the chain has no unique stationary vector
    (singular/reducible transition matrix).
    """
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    if trans.ndim != 2 or trans.shape[0] != trans.shape[1]:
        raise ValueError("trans must be a square matrix")
    if np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-10) or np.any(trans < 0):
        raise ValueError("trans must be row-stochastic")
    mu, ok = _kernels.stationary_solve(trans)
    if not ok or np.max(np.abs(mu @ trans - mu)) > 1e-10:
        raise ValueError("no unique stationary distribution (reducible chain?)")
    return mu


def _check_obs(obs: np.ndarray) -> np.ndarray:
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    if obs.ndim != 1 or obs.size < 1:
        raise ValueError("obs must be a nonempty 1-d array")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observations must be finite")
    return obs


def log_likelihood(params: HmmParams, obs: np.ndarray) -> float:
    """log p(obs | params) by the scaled forward algorithm, stationary init."""
    obs = _check_obs(obs)
    mu = stationary(params.trans)
    return float(_kernels.forward_loglik(params.trans, params.means, params.variances, mu, obs))


def joint_log_density(params: HmmParams, path: np.ndarray, obs: np.ndarray) -> float:
    """log p(obs, path | params) for a 1-based state path.

    The initial factor sum_k mu_k q_{k x_1} collapses to mu_{x_1} because mu
    is stationary.
    """
    obs = _check_obs(obs)
    path = np.asarray(path, dtype=np.int64)
    if path.shape != obs.shape:
        raise ValueError("path and obs must have the same length")
    if np.any(path < 1) or np.any(path > params.k):
        raise ValueError(f"path entries must lie in 1..{params.k}")
    idx = path - 1
    mu = stationary(params.trans)
    m = params.means[idx]
    v = params.variances[idx]
    ll_obs = -0.5 * np.sum(np.log(2.0 * np.pi * v) + (obs - m) ** 2 / v)
    with np.errstate(divide="ignore"):
        ll_init = np.log(mu[idx[0]])
        ll_trans = float(np.sum(np.log(params.trans[idx[:-1], idx[1:]])))
    return float(ll_init + ll_trans + ll_obs)


def simulate(params: HmmParams, n: int, rng_seed: RngLike) -> Trajectory:
    """Draw X_0 from mu(Q), advance the chain, emit Gaussian observations."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(rng_seed)
    mu = stationary(params.trans)
    states = _kernels.simulate_states(params.trans, mu, int(n), rng)
    obs = rng.normal(params.means[states], np.sqrt(params.variances[states]))
    return Trajectory(obs=obs, hidden=states + 1)


def ffbs_sample_path(params: HmmParams, obs: np.ndarray, rng: RngLike) -> np.ndarray:
    """One exact draw of the hidden path given parameters (1-based)."""
    obs = _check_obs(obs)
    rng = as_generator(rng)
    mu = stationary(params.trans)
    alphas = np.empty((obs.size, params.k))
    ll = _kernels.forward_alphas(params.trans, params.means, params.variances, mu, obs, alphas)
    if not np.isfinite(ll):
        raise ValueError("forward pass underflowed; degenerate parameters")
    path = np.empty(obs.size, dtype=np.int64)
    _kernels.sample_path_from_alphas(params.trans, alphas, rng, path)
    return path + 1


def load_trajectory(path: Union[str, Path]) -> Trajectory:
    """Read a trajectory from .csv (obs[,hidden] per line) or .json."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        rec = json.loads(p.read_text())
        hidden = rec.get("hidden")
        return Trajectory(obs=np.asarray(rec["obs"], dtype=float),
                          hidden=None if hidden is None else np.asarray(hidden))
    data = np.loadtxt(p, delimiter=",", ndmin=2)
    if data.shape[1] == 1:
        return Trajectory(obs=data[:, 0])
    return Trajectory(obs=data[:, 0], hidden=data[:, 1].astype(np.int64))


def save_trajectory(traj: Trajectory, path: Union[str, Path]) -> None:
    p = Path(path)
    if p.suffix.lower() == ".json":
        rec = {
            "obs": traj.obs.tolist(),
            "hidden": None if traj.hidden is None else traj.hidden.tolist(),
        }
        p.write_text(json.dumps(rec))
        return
    with open(p, "w") as fh:
        if traj.hidden is None:
            for y in traj.obs:
                fh.write(f"{float(y)!r}\n")
        else:
            for y, x in zip(traj.obs, traj.hidden):
                fh.write(f"{float(y)!r},{int(x)}\n")
