import numpy as np
import pytest
from scipy import stats

from rsqlearn.envs import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    EnvError,
    GridWorldConfig,
    MatchingConfig,
    TabularMDP,
    clip_matching,
    grid_build,
    grid_sample,
    matching_build,
)


def chi2_pvalue(counts, pmf):
    keep = pmf > 0
    assert counts[~keep].sum() == 0, "sampled a zero-probability state"
    expected = pmf[keep] * counts.sum()
    if keep.sum() == 1:
        return 1.0
    return stats.chisquare(counts[keep], expected).pvalue


# -- grid world ----------------------------------------------------------------


def test_default_grid_counts(grid):
    assert grid.shape == (12, 4)
    assert grid.active_mask.sum() == 9
    assert grid.active_mask.sum() * grid.num_actions == 36
    assert grid.num_states * grid.num_actions == 48


def test_grid_stay_still_at_edges_and_block(grid):
    # top-left corner: up and left hit the edge
    s = grid.cell_to_state((1, 1))
    assert grid.next_table[s, UP] == s
    assert grid.next_table[s, LEFT] == s
    # (1,2) moving down would enter the block at (2,2)
    s = grid.cell_to_state((1, 2))
    assert grid.next_table[s, DOWN] == s
    # (2,1) moving right would enter the block
    s = grid.cell_to_state((2, 1))
    assert grid.next_table[s, RIGHT] == s


def test_grid_state_invariant_under_blocked_moves(grid):
    for s in np.flatnonzero(grid.active_mask):
        r, c = grid.state_to_cell(s)
        for a, (dr, dc) in enumerate([(-1, 0), (1, 0), (0, -1), (0, 1)]):
            nr, nc = r + dr, c + dc
            inside = 1 <= nr <= 3 and 1 <= nc <= 4
            if not inside or (nr, nc) in grid.config.blocked:
                assert grid.next_table[s, a] == s


def test_grid_rewards(grid, rng):
    s = grid.cell_to_state((1, 1))
    d = grid_sample(grid, s, RIGHT, rng)  # grey to grey
    assert d.reward == -1.0 and not d.terminal
    d = grid_sample(grid, s, UP, rng)  # into the wall
    assert d.reward == -1.0 and d.next_state == s
    s = grid.cell_to_state((1, 3))
    d = grid_sample(grid, s, RIGHT, rng)
    assert d.reward == 10.0 and d.terminal and d.next_state == grid.cell_to_state((1, 4))
    s = grid.cell_to_state((3, 4))
    d = grid_sample(grid, s, UP, rng)
    assert d.reward == -10.0 and d.terminal


def test_grid_noise_mean(noisy_grid, rng):
    s = noisy_grid.cell_to_state((3, 1))
    rewards, _, _ = noisy_grid.sample(s, UP, rng, size=100_000)
    assert abs(rewards.mean() - (-1.0)) < 4 * 2.0 / np.sqrt(100_000)


def test_grid_sample_rejects_terminal_and_blocked(grid, rng):
    with pytest.raises(EnvError):
        grid_sample(grid, grid.cell_to_state((1, 4)), UP, rng)
    with pytest.raises(EnvError):
        grid_sample(grid, grid.cell_to_state((2, 2)), UP, rng)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(blocked={(1, 4)}, terminals={(1, 4): 10.0}),
        dict(terminals={}),
        dict(blocked={(4, 1)}),
        dict(noise_sigma=-1.0),
    ],
)
def test_grid_config_errors(kwargs):
    with pytest.raises(EnvError):
        grid_build(GridWorldConfig(**kwargs))


def test_grid_transition_pmf_rows(grid):
    for s in range(grid.num_states):
        for a in range(grid.num_actions):
            assert abs(grid.transition_pmf(s, a).sum() - 1.0) <= 1e-12


# -- matching ----------------------------------------------------------------------


def test_matching_sizes(matching):
    assert matching.shape == (256, 256)
    assert not matching.terminal_mask.any()


def test_matching_reward_example(matching, rng):
    s = matching.encode_state((1, 0, 1, 0))
    a = matching.encode_action([[1, 0], [0, 0]])
    assert matching.sample(s, a, rng).reward == 8.0
    assert matching.expected_reward(s, a) == 8.0
    a0 = matching.encode_action([[0, 0], [0, 0]])
    assert matching.sample(s, a0, rng).reward == 0.0


def test_matching_config_errors():
    with pytest.raises(EnvError):
        matching_build(MatchingConfig(queue_cap=0))
    with pytest.raises(EnvError):
        matching_build(MatchingConfig(action_cap=0))
    with pytest.raises(EnvError):
        matching_build(MatchingConfig(demand_pmf=np.array([0.5, 0.4, 0.0, 0.0])))


def test_clip_examples():
    x = np.array([[1, 0], [0, 1]])
    np.testing.assert_array_equal(clip_matching(x, (1, 1), (1, 1)), x)
    np.testing.assert_array_equal(clip_matching([[1, 1], [0, 0]], (1, 3), (3, 3)), [[1, 0], [0, 0]])
    np.testing.assert_array_equal(clip_matching([[3, 3], [3, 3]], (0, 0), (3, 3)), np.zeros((2, 2)))
    np.testing.assert_array_equal(clip_matching([[2, 0], [0, 0]], (1, 0), (1, 0)), [[1, 0], [0, 0]])


def test_clip_properties(rng):
    for _ in range(500):
        x = rng.integers(0, 4, (2, 2))
        d = rng.integers(0, 4, 2)
        s = rng.integers(0, 4, 2)
        y = clip_matching(x, d, s)
        assert np.all(y <= x) and np.all(y >= 0)
        assert np.all(y.sum(axis=1) <= d) and np.all(y.sum(axis=0) <= s)


def test_matching_rewards_match_clip(matching, rng):
    R = matching.reward_matrix
    for _ in range(300):
        s = int(rng.integers(matching.num_states))
        a = int(rng.integers(matching.num_actions))
        d1, d2, s1, s2 = matching.decode_state(s)
        y = clip_matching(matching.decode_action(a), (d1, d2), (s1, s2))
        assert matching.expected_reward(s, a) == pytest.approx(float((y * R).sum()), abs=0)
        assert matching.expected_reward(s, a) >= 0


def test_matching_transition_rows_sum_to_one(matching):
    sums = np.array([matching.transition_pmf(s, a).sum() for s in range(0, 256, 7) for a in range(0, 256, 5)])
    assert np.max(np.abs(sums - 1.0)) <= 1e-12


def test_matching_transition_law(matching, rng):
    pairs = [(int(rng.integers(256)), int(rng.integers(256))) for _ in range(8)]
    for s, a in pairs:
        _, nxt, _ = matching.sample(s, a, rng, size=100_000)
        counts = np.bincount(nxt, minlength=matching.num_states)
        assert chi2_pvalue(counts, matching.transition_pmf(s, a)) > 1e-4


def test_matching_next_state_dynamics(matching):
    # (1,0,1,0) matched fully leaves empty queues; arrivals are 0/1 per type
    s = matching.encode_state((1, 0, 1, 0))
    a = matching.encode_action([[1, 0], [0, 0]])
    p = matching.transition_pmf(s, a)
    support = [matching.decode_state(i) for i in np.flatnonzero(p)]
    assert len(support) == 16
    assert all(set(q) <= {0, 1} for q in support)
    np.testing.assert_allclose(p[np.flatnonzero(p)], 1 / 16)
    # full queues stay capped
    s = matching.encode_state((3, 3, 3, 3))
    a = matching.encode_action([[0, 0], [0, 0]])
    assert matching.transition_pmf(s, a)[s] == 1.0


def test_matching_non_uniform_arrivals(rng):
    env = matching_build(MatchingConfig(demand_pmf=np.array([0.2, 0.5, 0.3, 0.0]), queue_cap=2, action_cap=1))
    s, a = 5, 3
    _, nxt, _ = env.sample(s, a, rng, size=100_000)
    counts = np.bincount(nxt, minlength=env.num_states)
    assert chi2_pvalue(counts, env.transition_pmf(s, a)) > 1e-4


# -- generic ----------------------------------------------------------------------------


def test_tabular_law_and_reward_mean(mdp2, rng):
    for s in range(2):
        for a in range(2):
            rewards, nxt, _ = mdp2.sample(s, a, rng, size=100_000)
            assert abs(rewards.mean() - mdp2.expected_reward(s, a)) < 4 * mdp2.sigma / np.sqrt(100_000)
            counts = np.bincount(nxt, minlength=2)
            assert chi2_pvalue(counts, mdp2.transition_pmf(s, a)) > 1e-4


def test_sweep_law_matches_pmf(mdp2, rng):
    draws = np.stack([mdp2.sample_sweep(rng, 4)[1] for _ in range(5000)])
    for s in range(2):
        for a in range(2):
            counts = np.bincount(draws[:, s, a, :].ravel(), minlength=2)
            assert chi2_pvalue(counts, mdp2.transition_pmf(s, a)) > 1e-4


def test_sweep_mean_reward_variance(noisy_grid, rng):
    s = noisy_grid.cell_to_state((3, 1))
    means = np.array([noisy_grid.sample_sweep(rng, 5)[0][s, UP] for _ in range(20_000)])
    assert means.std() == pytest.approx(2.0 / np.sqrt(5), rel=0.03)


def test_tabular_rejects_bad_kernel():
    with pytest.raises(EnvError):
        TabularMDP(np.array([[[0.5, 0.4]]]), np.zeros((1, 1)))
