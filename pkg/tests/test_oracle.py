import numpy as np
import pytest

from rsqlearn.envs import RIGHT, TabularMDP
from rsqlearn.oracle import (
    bellman_operator,
    dhat_bruteforce,
    kappa_mc,
    kappa_statistic,
    mc_stationary_mean,
    mc_stationary_means,
    value_iteration,
)
from rsqlearn.qlearn import ChainConfig, run_chain


def test_self_loop_geometric_series():
    env = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)))
    q = value_iteration(env, 0.9)
    assert q[0, 0] == pytest.approx(10.0, abs=1e-8)


def test_grid_q_star_next_to_goal(grid):
    q = value_iteration(grid, 0.9)
    assert q[grid.cell_to_state((1, 3)), RIGHT] == pytest.approx(10.0, abs=1e-10)
    assert np.all(q[~grid.active_mask] == 0)


def test_value_iteration_residual_and_fixed_point(grid, matching):
    for env in (grid, matching):
        q = value_iteration(env, 0.9, tol=1e-10)
        assert np.abs(bellman_operator(env, q, 0.9) - q).max() <= 1e-10


def test_value_iteration_contraction(grid):
    q_star = value_iteration(grid, 0.9, tol=1e-12)
    q = np.zeros(grid.shape)
    err = np.abs(q - q_star).max()
    for _ in range(100):
        q = bellman_operator(grid, q, 0.9)
        new = np.abs(q - q_star).max()
        assert new <= 0.9 * err + 1e-11
        err = new


def test_value_iteration_initialization_invariance(mdp2):
    tol = 1e-9
    a = value_iteration(mdp2, 0.8, tol=tol)
    b = value_iteration(mdp2, 0.8, tol=tol, q0=np.full((2, 2), 50.0))
    assert np.abs(a - b).max() <= 2 * tol / (1 - 0.8)


def test_value_iteration_errors(grid):
    with pytest.raises(ValueError):
        value_iteration(grid, 1.0)


def test_dhat_bruteforce_examples():
    assert dhat_bruteforce([np.array([1.0])])[0] == 0.0
    assert dhat_bruteforce([np.array([x]) for x in (1.0, 2.0, 3.0)])[0] == pytest.approx(2 / 9)


def test_dhat_bruteforce_is_order_sensitive():
    seq = [np.array([x]) for x in (0.0, 0.0, 1.0, 5.0, 2.0)]
    assert dhat_bruteforce(seq)[0] != pytest.approx(dhat_bruteforce(seq[::-1])[0] + 1.0)
    assert dhat_bruteforce(seq)[0] != dhat_bruteforce(seq[::-1])[0]


def test_stationary_mean_deterministic_case(grid):
    cfg = ChainConfig(eta=0.1, gamma=0.9, batch=2, horizon=300)
    est = mc_stationary_mean(grid, cfg, 16, np.random.default_rng(0))
    ref = run_chain(grid, cfg, rng=np.random.default_rng(1)).q_final
    np.testing.assert_array_equal(est.mean, ref)
    np.testing.assert_array_equal(est.stderr, 0.0)


def test_stationary_stderr_shrinks(noisy_grid):
    cfg = ChainConfig(eta=0.1, gamma=0.9, batch=1, horizon=200)
    a = mc_stationary_mean(noisy_grid, cfg, 2000, np.random.default_rng(0))
    b = mc_stationary_mean(noisy_grid, cfg, 4000, np.random.default_rng(1))
    active = noisy_grid.active_mask
    ratio = b.stderr[active].mean() / a.stderr[active].mean()
    assert ratio == pytest.approx(1 / np.sqrt(2), rel=0.15)


def test_stationary_multiple_horizons(noisy_grid):
    cfg = ChainConfig(eta=0.1, gamma=0.9, batch=1, horizon=30)
    out = mc_stationary_means(noisy_grid, cfg, 10, np.random.default_rng(0), [10, 30])
    single = mc_stationary_mean(noisy_grid, cfg, 10, np.random.default_rng(0))
    np.testing.assert_array_equal(out[30].mean, single.mean)
    assert out[10].horizon == 10


def test_stationary_needs_two_sims(grid):
    with pytest.raises(ValueError):
        mc_stationary_mean(grid, ChainConfig(eta=0.1, gamma=0.9), 1, np.random.default_rng(0))


def test_kappa_statistic_scale_invariant():
    rng = np.random.default_rng(0)
    paths = rng.normal(size=(5, 200)).cumsum(axis=1)
    np.testing.assert_allclose(kappa_statistic(3.0 * paths), kappa_statistic(paths))


def test_kappa_mc_small():
    tab = kappa_mc(20_000, 200, np.random.default_rng(0), n_boot=50)
    q = tab.quantiles
    assert q[0.005] > q[0.01] > q[0.025] > q[0.05]
    assert all(s > 0 for s in tab.stderr.values())
    assert abs(tab.median) <= 3 * tab.median_stderr


def test_kappa_mc_reseed_stability():
    a = kappa_mc(20_000, 200, np.random.default_rng(1), alpha_halves=(0.05,), n_boot=50)
    b = kappa_mc(20_000, 200, np.random.default_rng(2), alpha_halves=(0.05,), n_boot=50)
    se = np.hypot(a.stderr[0.05], b.stderr[0.05])
    assert abs(a.quantiles[0.05] - b.quantiles[0.05]) <= 3 * se


def test_kappa_mc_preconditions():
    with pytest.raises(ValueError):
        kappa_mc(100, 1000, np.random.default_rng(0))
