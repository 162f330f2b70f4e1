"""Compiled inner loops: scaled forward pass, FFBS, Gibbs sweeps, EM.

Everything here works on raw arrays with 0-based state indices and is
deterministic given the ``numpy.random.Generator`` passed in.  Public wrappers
live in the sibling modules.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_LOG2PI = float(np.log(2.0 * np.pi))


@njit(cache=True, nogil=True)
def stationary_solve(trans):
    """Solve mu Q = mu, sum(mu) = 1 by Gaussian elimination.

    Returns (mu, ok). ok is False when the system is numerically singular
    (reducible chain / no unique stationary vector).
    """
    k = trans.shape[0]
    a = np.empty((k, k))
    for i in range(k - 1):
        for j in range(k):
            a[i, j] = trans[j, i]
        a[i, i] -= 1.0
    for j in range(k):
        a[k - 1, j] = 1.0
    b = np.zeros(k)
    b[k - 1] = 1.0
    for col in range(k):
        piv = col
        best = abs(a[col, col])
        for r in range(col + 1, k):
            v = abs(a[r, col])
            if v > best:
                best = v
                piv = r
        if best < 1e-12:
            return b, False
        if piv != col:
            for c2 in range(k):
                tmp = a[col, c2]
                a[col, c2] = a[piv, c2]
                a[piv, c2] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / a[col, col]
        for r in range(col + 1, k):
            f = a[r, col] * inv
            if f != 0.0:
                for c2 in range(col, k):
                    a[r, c2] -= f * a[col, c2]
                b[r] -= f * b[col]
    mu = np.empty(k)
    for r in range(k - 1, -1, -1):
        s = b[r]
        for c2 in range(r + 1, k):
            s -= a[r, c2] * mu[c2]
        mu[r] = s / a[r, r]
    tot = 0.0
    for j in range(k):
        if mu[j] < 0.0:
            if mu[j] < -1e-8:
                return mu, False
            mu[j] = 0.0
        tot += mu[j]
    if not (tot > 0.0) or not np.isfinite(tot):
        return mu, False
    for j in range(k):
        mu[j] /= tot
    return mu, True


@njit(cache=True, nogil=True)
def forward_loglik(trans, means, varis, mu, obs):
    """Scaled forward pass; returns log p(obs | params) or -inf on underflow."""
    n = obs.size
    k = means.size
    lognorm = np.empty(k)
    inv2 = np.empty(k)
    for j in range(k):
        if not (varis[j] > 0.0) or not np.isfinite(varis[j]):
            return -np.inf
        lognorm[j] = -0.5 * (_LOG2PI + np.log(varis[j]))
        inv2[j] = 0.5 / varis[j]
    alpha = np.empty(k)
    nxt = np.empty(k)
    c = 0.0
    for j in range(k):
        d = obs[0] - means[j]
        alpha[j] = mu[j] * np.exp(lognorm[j] - d * d * inv2[j])
        c += alpha[j]
    if not (c > 0.0) or not np.isfinite(c):
        return -np.inf
    ll = np.log(c)
    comp = 0.0
    for j in range(k):
        alpha[j] /= c
    for t in range(1, n):
        c = 0.0
        for j in range(k):
            s = 0.0
            for i in range(k):
                s += alpha[i] * trans[i, j]
            d = obs[t] - means[j]
            nxt[j] = s * np.exp(lognorm[j] - d * d * inv2[j])
            c += nxt[j]
        if not (c > 0.0) or not np.isfinite(c):
            return -np.inf
        # Kahan-compensated sum keeps the trace monotonicity check meaningful
        y = np.log(c) - comp
        tt = ll + y
        comp = (tt - ll) - y
        ll = tt
        for j in range(k):
            alpha[j] = nxt[j] / c
    return ll


@njit(cache=True, nogil=True)
def forward_loglik_full(trans, means, varis, obs):
    """Stationary initialization + scaled forward pass."""
    mu, ok = stationary_solve(trans)
    if not ok:
        return -np.inf
    return forward_loglik(trans, means, varis, mu, obs)


@njit(cache=True, nogil=True)
def loglik_batch(trans_b, means_b, vars_b, obs, out):
    """Log-likelihood of each candidate parameter triple in a batch."""
    m = out.size
    for i in range(m):
        out[i] = forward_loglik_full(trans_b[i], means_b[i], vars_b[i], obs)
    return out


@njit(cache=True, nogil=True)
def forward_alphas(trans, means, varis, mu, obs, alphas):
    """Scaled forward pass storing per-step normalized alphas; returns loglik."""
    n = obs.size
    k = means.size
    lognorm = np.empty(k)
    inv2 = np.empty(k)
    for j in range(k):
        if not (varis[j] > 0.0) or not np.isfinite(varis[j]):
            return -np.inf
        lognorm[j] = -0.5 * (_LOG2PI + np.log(varis[j]))
        inv2[j] = 0.5 / varis[j]
    c = 0.0
    for j in range(k):
        d = obs[0] - means[j]
        alphas[0, j] = mu[j] * np.exp(lognorm[j] - d * d * inv2[j])
        c += alphas[0, j]
    if not (c > 0.0) or not np.isfinite(c):
        return -np.inf
    ll = np.log(c)
    comp = 0.0
    for j in range(k):
        alphas[0, j] /= c
    for t in range(1, n):
        c = 0.0
        for j in range(k):
            s = 0.0
            for i in range(k):
                s += alphas[t - 1, i] * trans[i, j]
            d = obs[t] - means[j]
            alphas[t, j] = s * np.exp(lognorm[j] - d * d * inv2[j])
            c += alphas[t, j]
        if not (c > 0.0) or not np.isfinite(c):
            return -np.inf
        y = np.log(c) - comp
        tt = ll + y
        comp = (tt - ll) - y
        ll = tt
        for j in range(k):
            alphas[t, j] /= c
    return ll


@njit(cache=True, nogil=True)
def sample_path_from_alphas(trans, alphas, rng, path):
    """Backward sampling given stored forward alphas; fills 0-based path."""
    n = alphas.shape[0]
    k = alphas.shape[1]
    u = rng.random()
    acc = 0.0
    x = k - 1
    for j in range(k):
        acc += alphas[n - 1, j]
        if u <= acc:
            x = j
            break
    path[n - 1] = x
    for t in range(n - 2, -1, -1):
        tot = 0.0
        for j in range(k):
            tot += alphas[t, j] * trans[j, path[t + 1]]
        u = rng.random() * tot
        acc = 0.0
        x = k - 1
        for j in range(k):
            acc += alphas[t, j] * trans[j, path[t + 1]]
            if u <= acc:
                x = j
                break
        path[t] = x
    return path


@njit(cache=True, nogil=True)
def simulate_states(trans, mu, n, rng):
    """Draw x0 from mu, advance the chain n steps, return x_{1:n} (0-based)."""
    k = trans.shape[0]
    path = np.empty(n, np.int64)
    u = rng.random()
    acc = 0.0
    x = k - 1
    for j in range(k):
        acc += mu[j]
        if u <= acc:
            x = j
            break
    for t in range(n):
        u = rng.random()
        acc = 0.0
        nxt = k - 1
        for j in range(k):
            acc += trans[x, j]
            if u <= acc:
                nxt = j
                break
        x = nxt
        path[t] = x
    return path


@njit(cache=True, nogil=True)
def _transition_qfun(q, gamma1, counts):
    """Expected complete-data objective terms that depend on the rows."""
    k = q.shape[0]
    mu, ok = stationary_solve(q)
    if not ok:
        return -np.inf
    f = 0.0
    for j in range(k):
        if gamma1[j] > 0.0:
            if mu[j] <= 0.0:
                return -np.inf
            f += gamma1[j] * np.log(mu[j])
    for i in range(k):
        for j in range(k):
            if counts[i, j] > 0.0:
                if q[i, j] <= 0.0:
                    return -np.inf
                f += counts[i, j] * np.log(q[i, j])
    return f


@njit(cache=True, nogil=True)
def em_fit(obs, trans0, means0, vars0, tol, max_iter, var_floor, trace):
    """Baum-Welch under the stationary-init likelihood.

    The emission M-step is the exact maximizer; the row update is the
    count-normalized candidate, accepted only if the full expected
    complete-data objective (which includes the stationary-init term) does not
    decrease, backtracking toward the previous rows otherwise.  That keeps the
    recorded loglik trace non-decreasing.

    Returns (trans, means, vars, n_evals, converged, hit_floor).
    """
    n = obs.size
    k = means0.size
    trans = trans0.copy()
    means = means0.copy()
    varis = vars0.copy()
    alphas = np.empty((n, k))
    betas = np.empty((n, k))
    scales = np.empty(n)
    emis = np.empty((n, k))
    lognorm = np.empty(k)
    inv2 = np.empty(k)
    counts = np.empty((k, k))
    cand = np.empty((k, k))
    qlam = np.empty((k, k))
    gamma1 = np.empty(k)
    prev = -np.inf
    n_evals = 0
    converged = False
    for _ in range(max_iter):
        mu, ok = stationary_solve(trans)
        if not ok:
            break
        for j in range(k):
            lognorm[j] = -0.5 * (_LOG2PI + np.log(varis[j]))
            inv2[j] = 0.5 / varis[j]
        for t in range(n):
            for j in range(k):
                d = obs[t] - means[j]
                emis[t, j] = np.exp(lognorm[j] - d * d * inv2[j])
        # forward
        c = 0.0
        for j in range(k):
            alphas[0, j] = mu[j] * emis[0, j]
            c += alphas[0, j]
        if not (c > 0.0) or not np.isfinite(c):
            break
        scales[0] = c
        ll = np.log(c)
        comp = 0.0
        for j in range(k):
            alphas[0, j] /= c
        bad = False
        for t in range(1, n):
            c = 0.0
            for j in range(k):
                s = 0.0
                for i in range(k):
                    s += alphas[t - 1, i] * trans[i, j]
                alphas[t, j] = s * emis[t, j]
                c += alphas[t, j]
            if not (c > 0.0) or not np.isfinite(c):
                bad = True
                break
            scales[t] = c
            y = np.log(c) - comp
            tt = ll + y
            comp = (tt - ll) - y
            ll = tt
            for j in range(k):
                alphas[t, j] /= c
        if bad:
            break
        trace[n_evals] = ll
        n_evals += 1
        if ll - prev < tol and n_evals > 1:
            converged = True
            break
        prev = ll
        if n_evals >= max_iter:
            break
        # backward (scaled so gamma_t = alphas_t * betas_t sums to one)
        for j in range(k):
            betas[n - 1, j] = 1.0
        for t in range(n - 2, -1, -1):
            for i in range(k):
                s = 0.0
                for j in range(k):
                    s += trans[i, j] * emis[t + 1, j] * betas[t + 1, j]
                betas[t, i] = s / scales[t + 1]
        # expected transition counts
        for i in range(k):
            for j in range(k):
                counts[i, j] = 0.0
        for t in range(n - 1):
            for i in range(k):
                ai = alphas[t, i]
                if ai > 0.0:
                    for j in range(k):
                        counts[i, j] += (
                            ai * trans[i, j] * emis[t + 1, j] * betas[t + 1, j] / scales[t + 1]
                        )
        for j in range(k):
            gamma1[j] = alphas[0, j] * betas[0, j]
        # emission M-step (exact maximizer given responsibilities)
        for j in range(k):
            w = 0.0
            sy = 0.0
            for t in range(n):
                g = alphas[t, j] * betas[t, j]
                w += g
                sy += g * obs[t]
            if w > 1e-12:
                m = sy / w
                sv = 0.0
                for t in range(n):
                    g = alphas[t, j] * betas[t, j]
                    d = obs[t] - m
                    sv += g * d * d
                means[j] = m
                v = sv / w
                if v < var_floor:
                    v = var_floor
                varis[j] = v
        # row candidate and generalized-EM backtracking
        if k > 1:
            for i in range(k):
                tot = 0.0
                for j in range(k):
                    tot += counts[i, j]
                if tot > 1e-12:
                    for j in range(k):
                        cand[i, j] = counts[i, j] / tot
                else:
                    for j in range(k):
                        cand[i, j] = trans[i, j]
            f_old = _transition_qfun(trans, gamma1, counts)
            lam = 1.0
            for _bt in range(40):
                for i in range(k):
                    for j in range(k):
                        qlam[i, j] = (1.0 - lam) * trans[i, j] + lam * cand[i, j]
                f_new = _transition_qfun(qlam, gamma1, counts)
                if f_new >= f_old:
                    for i in range(k):
                        for j in range(k):
                            trans[i, j] = qlam[i, j]
                    break
                lam *= 0.5
    hit_floor = False
    for j in range(k):
        if varis[j] <= var_floor * (1.0 + 1e-9):
            hit_floor = True
    return trans, means, varis, n_evals, converged, hit_floor


@njit(cache=True, nogil=True)
def _propose_permutation(k, rng, perm):
    """Uniform random permutation via Fisher-Yates; fills perm in place."""
    for i in range(k):
        perm[i] = i
    for i in range(k - 1, 0, -1):
        j = rng.integers(0, i + 1)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm


@njit(cache=True, nogil=True)
def gibbs_chain_hmm(
    obs,
    trans0,
    means0,
    vars0,
    alpha,
    mu0,
    tau2,
    nu,
    s2,
    n_iter,
    n_burn,
    thin,
    mh_correct,
    rng,
    trans_out,
    means_out,
    vars_out,
    ll_out,
):
    """Data-augmentation Gibbs sweep for the Gaussian HMM posterior.

    Per sweep: FFBS path draw; conjugate Normal mean updates; conjugate
    scaled-inv-chi-square variance updates; row proposal Dirichlet(alpha +
    transition counts) accepted with Metropolis-Hastings ratio
    mu_{x1}(Q') / mu_{x1}(Q) so the stationary-init factor of the likelihood
    is honored exactly (skipped when mh_correct is False); a label-permutation
    MH move (ratio = prior ratio, likelihood invariant) so all relabeled
    posterior modes are visited evenly rather than by luck.

    Stored draw i is the chain state entering sweep n_burn + i*thin, together
    with its log-likelihood (a byproduct of that sweep's forward pass).
    Returns (n_kept, n_accept, n_prop).
    """
    n = obs.size
    k = means0.size
    trans = trans0.copy()
    means = means0.copy()
    varis = vars0.copy()
    alphas = np.empty((n, k))
    path = np.empty(n, np.int64)
    counts = np.empty((k, k))
    prop = np.empty((k, k))
    perm = np.empty(k, np.int64)
    tmp_means = np.empty(k)
    tmp_vars = np.empty(k)
    keep = 0
    accept = 0
    props = 0
    for it in range(n_iter):
        mu, ok = stationary_solve(trans)
        if not ok:
            for j in range(k):
                mu[j] = 1.0 / k
        ll = forward_alphas(trans, means, varis, mu, obs, alphas)
        if it >= n_burn and (it - n_burn) % thin == 0 and keep < ll_out.size:
            for i in range(k):
                for j in range(k):
                    trans_out[keep, i, j] = trans[i, j]
                means_out[keep, i] = means[i]
                vars_out[keep, i] = varis[i]
            ll_out[keep] = ll
            keep += 1
        sample_path_from_alphas(trans, alphas, rng, path)
        # means: Normal conjugate given assignments and current variances
        for j in range(k):
            cnt = 0
            sy = 0.0
            for t in range(n):
                if path[t] == j:
                    cnt += 1
                    sy += obs[t]
            if cnt > 0:
                prec = 1.0 / tau2 + cnt / varis[j]
                m = (mu0[j] / tau2 + sy / varis[j]) / prec
                means[j] = m + rng.normal(0.0, 1.0) / np.sqrt(prec)
            else:
                means[j] = mu0[j] + np.sqrt(tau2) * rng.normal(0.0, 1.0)
            ss = 0.0
            for t in range(n):
                if path[t] == j:
                    d = obs[t] - means[j]
                    ss += d * d
            varis[j] = (nu * s2 + ss) / rng.chisquare(nu + cnt)
        # rows: Dirichlet(alpha + counts) proposal, MH-corrected for mu_{x1}
        if k > 1:
            for i in range(k):
                for j in range(k):
                    counts[i, j] = 0.0
            for t in range(1, n):
                counts[path[t - 1], path[t]] += 1.0
            for i in range(k):
                tot = 0.0
                for j in range(k):
                    g = rng.gamma(alpha + counts[i, j], 1.0)
                    prop[i, j] = g
                    tot += g
                for j in range(k):
                    prop[i, j] /= tot
            props += 1
            if mh_correct:
                mup, okp = stationary_solve(prop)
                if okp and mu[path[0]] > 0.0:
                    ratio = mup[path[0]] / mu[path[0]]
                    if ratio >= 1.0 or rng.random() < ratio:
                        for i in range(k):
                            for j in range(k):
                                trans[i, j] = prop[i, j]
                        accept += 1
            else:
                for i in range(k):
                    for j in range(k):
                        trans[i, j] = prop[i, j]
                accept += 1
            # label-permutation move: flat Dirichlet and SIX blocks are
            # exchangeable, so only the mean-location prior enters the ratio
            _propose_permutation(k, rng, perm)
            logr = 0.0
            for j in range(k):
                d_new = means[perm[j]] - mu0[j]
                d_old = means[j] - mu0[j]
                logr += (d_old * d_old - d_new * d_new) / (2.0 * tau2)
            if logr >= 0.0 or rng.random() < np.exp(logr):
                for j in range(k):
                    tmp_means[j] = means[perm[j]]
                    tmp_vars[j] = varis[perm[j]]
                for j in range(k):
                    means[j] = tmp_means[j]
                    varis[j] = tmp_vars[j]
                for i in range(k):
                    for j in range(k):
                        counts[i, j] = trans[perm[i], perm[j]]
                for i in range(k):
                    for j in range(k):
                        trans[i, j] = counts[i, j]
    return keep, accept, props


@njit(cache=True, nogil=True)
def mixture_loglik(weights, means, varis, obs):
    """Log-likelihood of an iid Gaussian mixture."""
    n = obs.size
    k = means.size
    lognorm = np.empty(k)
    inv2 = np.empty(k)
    logw = np.empty(k)
    for j in range(k):
        if not (varis[j] > 0.0) or not np.isfinite(varis[j]):
            return -np.inf
        if not (weights[j] >= 0.0):
            return -np.inf
        lognorm[j] = -0.5 * (_LOG2PI + np.log(varis[j]))
        inv2[j] = 0.5 / varis[j]
        logw[j] = np.log(weights[j]) if weights[j] > 0.0 else -np.inf
    ll = 0.0
    comp = 0.0
    for t in range(n):
        best = -np.inf
        for j in range(k):
            d = obs[t] - means[j]
            v = logw[j] + lognorm[j] - d * d * inv2[j]
            if v > best:
                best = v
        if not np.isfinite(best):
            return -np.inf
        s = 0.0
        for j in range(k):
            d = obs[t] - means[j]
            s += np.exp(logw[j] + lognorm[j] - d * d * inv2[j] - best)
        y = (best + np.log(s)) - comp
        tt = ll + y
        comp = (tt - ll) - y
        ll = tt
    return ll


@njit(cache=True, nogil=True)
def mixture_loglik_batch(weights_b, means_b, vars_b, obs, out):
    m = out.size
    for i in range(m):
        out[i] = mixture_loglik(weights_b[i], means_b[i], vars_b[i], obs)
    return out


@njit(cache=True, nogil=True)
def gibbs_chain_mixture(
    obs,
    weights0,
    means0,
    vars0,
    alpha,
    mu0,
    tau2,
    nu,
    s2,
    n_iter,
    n_burn,
    thin,
    rng,
    weights_out,
    means_out,
    vars_out,
    ll_out,
):
    """Gibbs sweep for the iid Gaussian mixture (identical-row HMM special case).

    The weight vector has an exact Dirichlet conjugate update, so no MH step
    is needed.  Storage convention matches gibbs_chain_hmm.
    """
    n = obs.size
    k = means0.size
    weights = weights0.copy()
    means = means0.copy()
    varis = vars0.copy()
    z = np.empty(n, np.int64)
    probs = np.empty(k)
    lognorm = np.empty(k)
    inv2 = np.empty(k)
    logw = np.empty(k)
    perm = np.empty(k, np.int64)
    keep = 0
    for it in range(n_iter):
        for j in range(k):
            lognorm[j] = -0.5 * (_LOG2PI + np.log(varis[j]))
            inv2[j] = 0.5 / varis[j]
            logw[j] = np.log(weights[j]) if weights[j] > 0.0 else -np.inf
        ll = 0.0
        comp = 0.0
        for t in range(n):
            best = -np.inf
            for j in range(k):
                d = obs[t] - means[j]
                probs[j] = logw[j] + lognorm[j] - d * d * inv2[j]
                if probs[j] > best:
                    best = probs[j]
            s = 0.0
            for j in range(k):
                probs[j] = np.exp(probs[j] - best)
                s += probs[j]
            y = (best + np.log(s)) - comp
            tt = ll + y
            comp = (tt - ll) - y
            ll = tt
            u = rng.random() * s
            acc = 0.0
            x = k - 1
            for j in range(k):
                acc += probs[j]
                if u <= acc:
                    x = j
                    break
            z[t] = x
        if it >= n_burn and (it - n_burn) % thin == 0 and keep < ll_out.size:
            for j in range(k):
                weights_out[keep, j] = weights[j]
                means_out[keep, j] = means[j]
                vars_out[keep, j] = varis[j]
            ll_out[keep] = ll
            keep += 1
        for j in range(k):
            cnt = 0
            sy = 0.0
            for t in range(n):
                if z[t] == j:
                    cnt += 1
                    sy += obs[t]
            if cnt > 0:
                prec = 1.0 / tau2 + cnt / varis[j]
                m = (mu0[j] / tau2 + sy / varis[j]) / prec
                means[j] = m + rng.normal(0.0, 1.0) / np.sqrt(prec)
            else:
                means[j] = mu0[j] + np.sqrt(tau2) * rng.normal(0.0, 1.0)
            ss = 0.0
            for t in range(n):
                if z[t] == j:
                    d = obs[t] - means[j]
                    ss += d * d
            varis[j] = (nu * s2 + ss) / rng.chisquare(nu + cnt)
        tot = 0.0
        for j in range(k):
            cnt = 0
            for t in range(n):
                if z[t] == j:
                    cnt += 1
            g = rng.gamma(alpha + cnt, 1.0)
            weights[j] = g
            tot += g
        for j in range(k):
            weights[j] /= tot
        # label-permutation move (see gibbs_chain_hmm)
        if k > 1:
            _propose_permutation(k, rng, perm)
            logr = 0.0
            for j in range(k):
                d_new = means[perm[j]] - mu0[j]
                d_old = means[j] - mu0[j]
                logr += (d_old * d_old - d_new * d_new) / (2.0 * tau2)
            if logr >= 0.0 or rng.random() < np.exp(logr):
                for j in range(k):
                    probs[j] = means[perm[j]]
                    lognorm[j] = varis[perm[j]]
                    inv2[j] = weights[perm[j]]
                for j in range(k):
                    means[j] = probs[j]
                    varis[j] = lognorm[j]
                    weights[j] = inv2[j]
    return keep
