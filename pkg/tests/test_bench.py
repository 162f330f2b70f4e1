"""Known-constant benchmark targets and the replicated estimator check."""

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from hmmselect.bench import bench_target, run_bench


def test_gaussmix_density_normalizes():
    t = bench_target("gaussmix", dim=4)
    rng = np.random.default_rng(0)
    # importance check against a wide gaussian proposal covering all 3 modes
    loc = np.zeros(4)
    loc[0] = 3.0
    cov = np.eye(4) * 12.0
    x = rng.multivariate_normal(loc, cov, size=200_000)
    log_w = t.log_density(x) - t.log_c_true - stats.multivariate_normal.logpdf(x, loc, cov)
    est = np.exp(logsumexp(log_w) - np.log(x.shape[0]))
    assert est == pytest.approx(1.0, rel=0.02)


def test_gaussmix_sampler_mean_matches_center_average():
    t = bench_target("gaussmix", dim=3)
    s = t.sample(200_000, np.random.default_rng(1))
    assert s.shape == (200_000, 3)
    assert s[:, 0].mean() == pytest.approx(3.0, abs=0.02)  # (0 + 3 + 6)/3
    assert np.allclose(s[:, 1:].mean(axis=0), 0.0, atol=0.01)


def test_mixed3d_moments():
    t = bench_target("mixed3d")
    s = t.sample(300_000, np.random.default_rng(2))
    assert s[:, 0].mean() == pytest.approx(1.0, abs=0.01)
    assert s[:, 2].mean() == pytest.approx(12.0, abs=0.1)  # Gamma shape*scale


def test_mixed3d_density_components():
    t = bench_target("mixed3d")
    x = np.array([[1.0, 0.0, 12.0], [0.0, 2.0, 1.0]])
    expected = (
        2.0
        + stats.norm.logpdf(x[:, 0], 1.0, 1.0)
        + stats.t.logpdf(x[:, 1], df=2)
        + stats.gamma.logpdf(x[:, 2], a=6.0, scale=2.0)
    )
    assert np.allclose(t.log_density(x), expected, atol=1e-12)
    # out of support: zero density
    assert t.log_density(np.array([[0.0, 0.0, -1.0]]))[0] == -np.inf


def test_dim_validation():
    with pytest.raises(ValueError):
        bench_target("gaussmix", dim=1)
    with pytest.raises(ValueError):
        bench_target("gaussmix", dim=31)
    with pytest.raises(ValueError):
        bench_target("nope")


def test_run_bench_small_smoke():
    rep = run_bench("mixed3d", n_sim=500, n_is=1000, method="is", tail="gauss",
                    reps=8, rng_seed=0)
    assert rep.errors.shape == (8,)
    assert rep.ci_lo < rep.ci_hi
    assert abs(np.mean(rep.errors)) < 0.2  # loose smoke bound


def test_run_bench_budget_improves_width():
    small = run_bench("gaussmix", dim=4, n_sim=400, n_is=800, reps=12, rng_seed=1)
    big = run_bench("gaussmix", dim=4, n_sim=4000, n_is=8000, reps=12, rng_seed=2)
    assert big.ci_width < small.ci_width
