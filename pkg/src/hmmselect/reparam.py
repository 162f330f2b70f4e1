"""Bijection between constrained HMM parameters and an unconstrained vector.

Rows go through the additive log-ratio transform with the last entry as
reference, variances through log, means untouched.  Layout of the vector:
K rows of (K-1) log-ratios, then K means, then K log-variances.  All
normalizing-constant estimation happens in this space against the transformed
joint p(y, phi(u)) |J(u)|; the constant is unchanged by the change of
variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hmm import HmmParams

__all__ = ["UnconstrainedPoint", "from_constrained", "to_constrained", "log_jacobian", "dim_for"]


@dataclass(frozen=True)
class UnconstrainedPoint:
    k: int
    vec: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vec, dtype=np.float64)
        if vec.shape != (dim_for(self.k),):
            raise ValueError(f"vec must have length {dim_for(self.k)} for k={self.k}")
        vec.flags.writeable = False
        object.__setattr__(self, "vec", vec)


def dim_for(k: int) -> int:
    return k * (k - 1) + 2 * k


def from_constrained(params: HmmParams) -> UnconstrainedPoint:
    if np.any(params.trans <= 0):
        raise ValueError("params must be strictly interior (no zero row entries)")
    k = params.k
    u = np.empty(dim_for(k))
    if k > 1:
        rows = np.log(params.trans[:, :-1] / params.trans[:, -1:])
        u[: k * (k - 1)] = rows.ravel()
    u[k * (k - 1) : k * (k - 1) + k] = params.means
    u[k * (k - 1) + k :] = np.log(params.variances)
    return UnconstrainedPoint(k=k, vec=u)


def to_constrained(point: UnconstrainedPoint) -> HmmParams:
    trans, means, variances, _ = constrain_batch(point.vec[None, :], point.k)
    return HmmParams(k=point.k, trans=trans[0], means=means[0], variances=variances[0])


def log_jacobian(point: UnconstrainedPoint) -> float:
    """log |det d(constrained)/d(unconstrained)|.

    Softmax rows contribute sum over all K entries of log q; variances
    contribute their log coordinate directly.
    """
    _, _, _, logj = constrain_batch(point.vec[None, :], point.k)
    return float(logj[0])


def unconstrain_batch(trans_b: np.ndarray, means_b: np.ndarray, vars_b: np.ndarray) -> np.ndarray:
    """Map (N,K,K),(N,K),(N,K) parameter arrays to (N,D) unconstrained rows."""
    n, k = means_b.shape
    u = np.empty((n, dim_for(k)))
    if k > 1:
        rows = np.log(trans_b[:, :, :-1] / trans_b[:, :, -1:])
        u[:, : k * (k - 1)] = rows.reshape(n, -1)
    u[:, k * (k - 1) : k * (k - 1) + k] = means_b
    u[:, k * (k - 1) + k :] = np.log(vars_b)
    return u


def constrain_batch(u: np.ndarray, k: int):
    """Inverse map on an (N,D) batch; returns (trans, means, vars, log_jacobian).

    Row probabilities are recovered through a stable log-softmax, so the
    Jacobian stays finite for any finite input even when entries underflow.
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.shape[0]
    logj = np.zeros(n)
    trans_b = np.ones((n, k, k))
    if k > 1:
        rows = u[:, : k * (k - 1)].reshape(n, k, k - 1)
        aug = np.concatenate([rows, np.zeros((n, k, 1))], axis=2)
        m = aug.max(axis=2, keepdims=True)
        lse = m + np.log(np.exp(aug - m).sum(axis=2, keepdims=True))
        logq = aug - lse
        trans_b = np.exp(logq)
        logj += logq.sum(axis=(1, 2))
    means_b = u[:, k * (k - 1) : k * (k - 1) + k].copy()
    logvars = u[:, k * (k - 1) + k :]
    with np.errstate(over="ignore"):
        vars_b = np.exp(logvars)
    logj += logvars.sum(axis=1)
    return trans_b, means_b, vars_b, logj
