"""Prior densities and the Gibbs sampler against conjugate/quadrature oracles."""

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln, logsumexp

from hmmselect import (
    HmmParams,
    PriorSpec,
    default_prior,
    log_joint,
    log_likelihood,
    log_prior,
    run_gibbs,
    simulate,
)
from hmmselect.gibbs import save_draws_csv
from hmmselect.priors import six_logpdf

from conftest import random_hmm_params


def tame_prior(k, locs=None):
    return PriorSpec(
        dirichlet_alpha=1.0,
        mean_locs=np.zeros(k) if locs is None else np.asarray(locs, dtype=float),
        mean_sd=3.0,
        var_df=3.0,
        var_scale=0.7,
    )


# ---------------------------------------------------------------- densities
def test_six_logpdf_matches_invgamma_oracle():
    # scaled-inv-chi-square(nu, s2) == inv-gamma(nu/2, nu s2 / 2)
    nu, s2 = 3.0, 0.42
    xs = np.array([0.05, s2, 1.0, 4.0])
    oracle = stats.invgamma.logpdf(xs, a=nu / 2, scale=nu * s2 / 2)
    assert np.allclose(six_logpdf(xs, nu, s2), oracle, atol=1e-12)


def test_six_logpdf_at_scale_hand_value():
    # ((nu s2/2)^(nu/2)/Gamma(nu/2)) x^-(1+nu/2) exp(-nu s2/(2x)) at x = s2
    nu, s2 = 3.0, 0.25
    hand = (
        1.5 * np.log(1.5 * s2) - gammaln(1.5) - 2.5 * np.log(s2) - 1.5
    )
    assert six_logpdf(np.array([s2]), nu, s2)[0] == pytest.approx(hand, abs=1e-12)


def test_flat_dirichlet_row_constant(rng):
    for k in (2, 3, 4):
        p = random_hmm_params(rng, k=k)
        prior = tame_prior(k)
        lp = log_prior(p, prior)
        means_part = stats.norm.logpdf(p.means, prior.mean_locs, prior.mean_sd).sum()
        vars_part = six_logpdf(p.variances, prior.var_df, prior.var_scale**2).sum()
        assert lp - means_part - vars_part == pytest.approx(k * gammaln(k), abs=1e-10)


def test_log_prior_relabeling_invariance_with_equal_locs(rng):
    p = random_hmm_params(rng, k=3)
    prior = tame_prior(3)
    perm = rng.permutation(3)
    assert log_prior(p, prior) == pytest.approx(log_prior(p.permuted(perm), prior), rel=1e-12)


def test_log_prior_boundary_is_neg_inf():
    p = HmmParams(k=2, trans=[[1.0, 0.0], [0.5, 0.5]], means=[0.0, 1.0], variances=[1.0, 1.0])
    assert log_prior(p, tame_prior(2)) == -np.inf


def test_log_joint_is_sum_of_parts(rng):
    p = random_hmm_params(rng, k=2)
    obs = rng.normal(size=30)
    prior = tame_prior(2)
    assert log_joint(p, obs, prior) == pytest.approx(
        log_likelihood(p, obs) + log_prior(p, prior), rel=1e-12
    )


def test_default_prior_follows_quantile_recipe(rng):
    obs = rng.normal(2.0, 1.0, size=500)
    pr = default_prior(obs, 3)
    assert np.allclose(pr.mean_locs, np.quantile(obs, [0.05, 0.5, 0.95]))
    iqr = np.quantile(obs, 0.75) - np.quantile(obs, 0.25)
    assert pr.var_scale == pytest.approx(iqr / 6.0)
    assert pr.mean_sd == 100.0 and pr.var_df == 3.0 and pr.dirichlet_alpha == 1.0


# ---------------------------------------------------------------- K=1 oracle
def posterior_mu_cdf_oracle(obs, prior, grid):
    """P(mu <= g | obs) for K=1 by 1-d quadrature over sigma^2 at each grid mu."""
    n = obs.size
    tau2 = prior.mean_sd**2
    nu, s2 = prior.var_df, prior.var_scale**2
    loc = prior.mean_locs[0]

    def log_joint_mu_v(mu, logv):
        v = np.exp(logv)
        ll = -0.5 * n * np.log(2 * np.pi * v) - np.sum((obs - mu) ** 2) / (2 * v)
        lp_mu = stats.norm.logpdf(mu, loc, np.sqrt(tau2))
        lp_v = six_logpdf(np.array([v]), nu, s2)[0] + logv  # + logv: d sigma^2 = v d logv
        return ll + lp_mu + lp_v

    mus = np.linspace(obs.mean() - 6 * obs.std() / np.sqrt(n), obs.mean() + 6 * obs.std() / np.sqrt(n), 400)
    logvs = np.linspace(np.log(obs.var()) - 4, np.log(obs.var()) + 4, 300)
    grid_vals = np.array([[log_joint_mu_v(m, lv) for lv in logvs] for m in mus])
    log_marg_mu = logsumexp(grid_vals, axis=1)
    dens = np.exp(log_marg_mu - logsumexp(log_marg_mu))
    cdf = np.cumsum(dens)
    return np.interp(grid, mus, cdf)


def test_k1_posterior_matches_quadrature_oracle():
    rng = np.random.default_rng(3)
    obs = rng.normal(1.0, 0.8, size=200)
    prior = default_prior(obs, 1)
    draws = run_gibbs(obs, 1, prior, n_iter=6000, n_burn=1000, rng_seed=5)
    mus = np.sort(draws.means[:, 0])
    emp_cdf = np.arange(1, mus.size + 1) / mus.size
    oracle_cdf = posterior_mu_cdf_oracle(obs, prior, mus)
    ks = np.max(np.abs(emp_cdf - oracle_cdf))
    assert ks < 0.03
    # posterior mean of mu concentrates at ybar (tau is huge)
    assert draws.means.mean() == pytest.approx(obs.mean(), abs=0.02)


# ---------------------------------------------------------------- sampler
def test_gibbs_strong_signal_recovers_truth():
    p = HmmParams(k=3, trans=[[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]],
                  means=[1.0, 2.0, 3.0], variances=[0.01] * 3)
    traj = simulate(p, 1000, 17)
    prior = default_prior(traj.obs, 3)
    draws = run_gibbs(traj.obs, 3, prior, n_iter=4000, n_burn=1000, rng_seed=2)
    # label moves permute states; compare per-draw sorted means
    sorted_means = np.sort(draws.means, axis=1)
    assert np.max(np.abs(sorted_means.mean(axis=0) - [1.0, 2.0, 3.0])) < 0.05


def test_gibbs_deterministic_given_seed(rng):
    obs = rng.normal(size=100)
    prior = default_prior(obs, 2)
    d1 = run_gibbs(obs, 2, prior, n_iter=400, n_burn=100, rng_seed=9)
    d2 = run_gibbs(obs, 2, prior, n_iter=400, n_burn=100, rng_seed=9)
    assert np.array_equal(d1.means, d2.means)
    assert np.array_equal(d1.trans, d2.trans)
    assert np.array_equal(d1.logliks, d2.logliks)


def test_gibbs_draw_count_and_finite_joint(rng):
    obs = rng.normal(size=80)
    prior = default_prior(obs, 2)
    draws = run_gibbs(obs, 2, prior, n_iter=900, n_burn=300, thin=3, rng_seed=1)
    assert len(draws) == 200
    for i in range(0, len(draws), 50):
        assert np.isfinite(log_joint(draws.param_at(i), obs, prior))


def test_gibbs_mh_toggle():
    p = HmmParams(k=2, trans=[[0.8, 0.2], [0.3, 0.7]], means=[0.0, 3.0], variances=[0.2, 0.2])
    obs = simulate(p, 300, 12).obs
    prior = default_prior(obs, 2)
    plain = run_gibbs(obs, 2, prior, n_iter=1500, n_burn=500, rng_seed=3,
                      stationary_correction=False)
    assert plain.accept_rate_rows == 1.0
    corrected = run_gibbs(obs, 2, prior, n_iter=1500, n_burn=500, rng_seed=3)
    assert 0.5 < corrected.accept_rate_rows < 1.0
    # the initial-state factor is one term out of n; posteriors nearly agree
    a = np.sort(plain.means, axis=1).mean(axis=0)
    b = np.sort(corrected.means, axis=1).mean(axis=0)
    assert np.max(np.abs(a - b)) < 0.1


def test_gibbs_empty_state_falls_back_to_prior():
    # K=3 chain on two-cluster data: the surplus state keeps drawing from the prior
    p = HmmParams(k=2, trans=[[0.9, 0.1], [0.1, 0.9]], means=[0.0, 10.0], variances=[0.01, 0.01])
    traj = simulate(p, 300, 4)
    prior = default_prior(traj.obs, 3)
    draws = run_gibbs(traj.obs, 3, prior, n_iter=2000, n_burn=500, rng_seed=6)
    spread = np.sort(draws.means, axis=1)
    assert np.all(np.isfinite(draws.logliks))
    # surplus state wanders far beyond the data range in some draws (prior sd 100)
    assert np.abs(draws.means).max() > 20.0
    del spread


def test_gibbs_validates_inputs(rng):
    obs = rng.normal(size=50)
    with pytest.raises(ValueError):
        run_gibbs(obs, 2, default_prior(obs, 2), n_iter=100, n_burn=100)
    with pytest.raises(ValueError):
        run_gibbs(obs, 2, default_prior(obs, 3))


def test_draw_dump_csv(tmp_path, rng):
    obs = rng.normal(size=60)
    prior = default_prior(obs, 2)
    draws = run_gibbs(obs, 2, prior, n_iter=300, n_burn=100, rng_seed=8)
    f = tmp_path / "draws.csv"
    save_draws_csv(draws, f)
    header = f.read_text().splitlines()[0].split(",")
    assert header == ["iter", "q_11", "q_12", "q_21", "q_22", "mu_1", "mu_2", "var_1", "var_2"]
    assert len(f.read_text().splitlines()) == len(draws) + 1
