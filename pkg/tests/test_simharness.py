"""Experiment grid machinery: transition builders, parameter draws, tallies."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmmselect import EstimatorConfig, ExperimentSpec, build_params, build_transition, run_experiment
from hmmselect.simharness import Q_KINDS, grid_archive, load_grid, write_grid_csv


def test_p2_k3_values():
    q = build_transition("P2", 3)
    assert np.allclose(np.diag(q), 0.8, atol=1e-15)
    off = q[~np.eye(3, dtype=bool)]
    assert np.allclose(off, 0.1, atol=1e-15)


def test_p1_rows_uniform():
    for k in (1, 2, 5):
        q = build_transition("P1", k)
        assert np.allclose(q, 1.0 / k, atol=1e-15)


def test_p4_k3_values():
    q = build_transition("P4", 3)
    assert np.allclose(np.diag(q), 0.1, atol=1e-15)
    off = q[~np.eye(3, dtype=bool)]
    assert np.allclose(off, 0.45, atol=1e-15)


def test_p3_k4_values():
    q = build_transition("P3", 4)
    assert np.allclose(np.diag(q), 0.95, atol=1e-15)
    assert np.allclose(q[~np.eye(4, dtype=bool)], 0.05 / 3, atol=1e-15)


@given(st.sampled_from(Q_KINDS), st.integers(min_value=2, max_value=8))
def test_rows_exactly_stochastic(kind, k):
    q = build_transition(kind, k)
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(q > 0)


def test_small_k_errors():
    with pytest.raises(ValueError):
        build_transition("P2", 1)
    with pytest.raises(ValueError):
        build_transition("P9", 3)


def test_build_params_homogeneous():
    spec = ExperimentSpec(k_star=4, sigma=0.3, n=100, q_kind="P1")
    p = build_params(spec, np.random.default_rng(0))
    assert np.allclose(p.means, [1.0, 2.0, 3.0, 4.0])
    assert np.allclose(p.variances, 0.09)


def test_build_params_heterogeneous_range_and_determinism():
    spec = ExperimentSpec(k_star=3, sigma=0.4, n=100, q_kind="P2", heter=True)
    p1 = build_params(spec, np.random.default_rng(5))
    p2 = build_params(spec, np.random.default_rng(5))
    assert np.array_equal(p1.variances, p2.variances)
    sig = np.sqrt(p1.variances)
    assert np.all(sig >= 0.5 * 0.4) and np.all(sig <= 2.5 * 0.4)
    assert np.std(sig) > 0


def test_run_experiment_smoke_and_determinism():
    spec = ExperimentSpec(k_star=2, sigma=0.15, n=120, q_kind="P2", reps=2,
                          k_max=3, master_seed=9, restarts=5)
    cfg = EstimatorConfig(n_draws=800, n_burn=300, n_is=2000, mc_budget=2000)
    a = run_experiment(spec, config=cfg)
    b = run_experiment(spec, config=cfg, threads=2)
    assert a.ml_pct == b.ml_pct and a.bic_pct == b.bic_pct
    assert a.reps == 2 and a.ml_failures == 0
    assert a.ml_pct == 100.0  # very strong signal


def test_run_experiment_rejects_zero_reps():
    spec = ExperimentSpec(k_star=2, sigma=0.2, n=50, q_kind="P1", reps=0)
    with pytest.raises(ValueError):
        run_experiment(spec)


def test_grid_io_roundtrip(tmp_path):
    cells = [
        {"k_star": 3, "sigma": 0.2, "n": 200, "q_kind": "P2", "reps": 4},
        {"k_star": 2, "sigma": 0.3, "n": 100, "q_kind": "P1", "reps": 4, "heter": True},
    ]
    f = tmp_path / "grid.json"
    import json

    f.write_text(json.dumps(cells))
    specs = load_grid(f)
    assert specs[0].k_star == 3 and specs[1].heter
    from hmmselect.simharness import FrequencyRow

    rows = [
        FrequencyRow(k_star=3, sigma=0.2, n=200, q_kind="P2", heter=False, reps=4,
                     ml_pct=75.0, bic_pct=50.0, ml_ok=3, bic_ok=2, ml_failures=0, bic_failures=0)
    ]
    out = tmp_path / "rows.csv"
    write_grid_csv(rows, out)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("K,sigma,n,Q")
    assert lines[1].startswith("3,0.2,200,P2,0,4,75.0,50.0")
    arch = grid_archive(rows, specs, EstimatorConfig())
    assert '"ml_pct": 75.0' in arch
