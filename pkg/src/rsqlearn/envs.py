"""Finite tabular MDPs behind a generative-model interface.

Every environment exposes two views of the same model:

* a sampler (``sample`` for one state-action pair, ``sample_sweep`` for a
  whole synchronous sweep), used by the learning engine;
* an exact description (``expected_rewards``, ``transition_pmf``,
  ``expected_next_value``), used by the oracles.

Reward noise is additive ``N(0, sigma^2)`` and never affects transitions.

Random stream layout of ``sample_sweep`` (per call, per chain): first one
block of ``|S| x |A|`` standard normals for the reward noise, then whatever
the transition sampler needs (nothing for deterministic dynamics, one
``|S| x |A| x B`` block of draws otherwise). Entry ``(s, a)`` always reads slot
``(s, a)`` of each block, which is what makes the sweep order-independent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

UP, DOWN, LEFT, RIGHT = range(4)
GRID_ACTIONS = ("up", "down", "left", "right")
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}


class EnvError(ValueError):
    """Invalid environment configuration or precondition violation."""


class Draw(NamedTuple):
    reward: float
    next_state: int
    terminal: bool


class EnvModel:
    """Base class for tabular generative models.

    Subclasses fill in ``num_states``, ``num_actions``, ``sigma``,
    ``expected_rewards`` (shape ``(S, A)``), ``terminal_mask`` and
    ``active_mask`` (states whose Q rows are updated), and implement the
    transition hooks.
    """

    num_states: int
    num_actions: int
    sigma: float
    expected_rewards: np.ndarray
    terminal_mask: np.ndarray
    active_mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_states, self.num_actions)

    def is_terminal(self, s: int) -> bool:
        return bool(self.terminal_mask[s])

    def expected_reward(self, s: int, a: int) -> float:
        return float(self.expected_rewards[s, a])

    def transition_pmf(self, s: int, a: int) -> np.ndarray:
        raise NotImplementedError

    def expected_next_value(self, values: np.ndarray) -> np.ndarray:
        """Return ``E[values[S'] | s, a]`` for every pair, shape ``(S, A)``."""
        raise NotImplementedError

    def _sample_next(self, s: int, a: int, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def _sweep_next(self, rng: np.random.Generator, batch: int, lead: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError

    def _check_sampleable(self, s: int, a: int) -> None:
        if not (0 <= s < self.num_states and 0 <= a < self.num_actions):
            raise EnvError(f"state/action out of range: ({s}, {a})")
        if not self.active_mask[s]:
            raise EnvError(f"cannot sample from terminal or blocked state {s}")

    def sample(self, s: int, a: int, rng: np.random.Generator, size: int | None = None):
        """Draw from the generative model at ``(s, a)``.

        With ``size=None`` a single :class:`Draw` is returned; otherwise a
        tuple of arrays ``(rewards, next_states, terminal)`` of length ``size``.
        """
        self._check_sampleable(s, a)
        n = 1 if size is None else int(size)
        noise = rng.standard_normal(n)
        rewards = self.expected_rewards[s, a] + self.sigma * noise
        nxt = self._sample_next(s, a, rng, n)
        term = self.terminal_mask[nxt]
        if size is None:
            return Draw(float(rewards[0]), int(nxt[0]), bool(term[0]))
        return rewards, nxt, term

    def sample_sweep(self, rng: np.random.Generator, batch: int, n_chains: int | None = None):
        """Draw one synchronous sweep of ``batch`` samples for every pair.

        Returns ``(mean_reward, next_states)`` with shapes ``(S, A)`` and
        ``(S, A, batch)`` (prefixed by ``n_chains`` when given). The batch
        average of ``batch`` independent ``N(0, sigma^2)`` noises is drawn
        directly as ``sigma / sqrt(batch)`` times one standard normal; the law
        of the averaged reward is unchanged.
        """
        if batch < 1:
            raise EnvError("batch size must be >= 1")
        lead = () if n_chains is None else (int(n_chains),)
        noise = rng.standard_normal(lead + self.shape)
        mean_reward = self.expected_rewards + (self.sigma / np.sqrt(batch)) * noise
        return mean_reward, self._sweep_next(rng, batch, lead)


class TabularMDP(EnvModel):
    """Explicit MDP given by a dense kernel ``P[s, a, s']`` and mean rewards."""

    def __init__(
        self,
        P: np.ndarray,
        rewards: np.ndarray,
        sigma: float = 0.0,
        terminal: np.ndarray | None = None,
    ) -> None:
        P = np.asarray(P, dtype=float)
        rewards = np.asarray(rewards, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or rewards.shape != P.shape[:2]:
            raise EnvError("P must be (S, A, S) and rewards (S, A)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise EnvError("transition rows must be probability vectors")
        if sigma < 0:
            raise EnvError("noise sigma must be >= 0")
        self.num_states, self.num_actions = rewards.shape
        self.P = P
        self.sigma = float(sigma)
        self.terminal_mask = (
            np.zeros(self.num_states, bool) if terminal is None else np.asarray(terminal, bool).copy()
        )
        self.active_mask = ~self.terminal_mask
        self.expected_rewards = np.where(self.active_mask[:, None], rewards, 0.0)
        self._cdf = np.cumsum(P, axis=2)
        self._cdf[..., -1] = 1.0

    def transition_pmf(self, s: int, a: int) -> np.ndarray:
        return self.P[s, a].copy()

    def expected_next_value(self, values: np.ndarray) -> np.ndarray:
        return self.P @ values

    def _sample_next(self, s, a, rng, n):
        u = rng.random(n)
        return np.searchsorted(self._cdf[s, a], u, side="right").clip(max=self.num_states - 1)

    def _sweep_next(self, rng, batch, lead):
        u = rng.random(lead + self.shape + (batch,))
        # count of cdf knots at or below u == inverse-cdf index
        nxt = (u[..., None] >= self._cdf[:, :, None, :]).sum(axis=-1)
        return np.minimum(nxt, self.num_states - 1)


# --------------------------------------------------------------------------
# Grid world
# --------------------------------------------------------------------------


@dataclass
class GridWorldConfig:
    """Grid layout; cells are ``(row, col)`` pairs, 1-based from the top-left."""

    rows: int = 3
    cols: int = 4
    blocked: set[tuple[int, int]] = field(default_factory=lambda: {(2, 2)})
    terminals: dict[tuple[int, int], float] = field(
        default_factory=lambda: {(1, 4): 10.0, (2, 4): -10.0}
    )
    step_reward: float = -1.0
    noise_sigma: float = 0.0


class GridWorld(EnvModel):
    """Deterministic-move grid world; reward depends on the destination cell."""

    def __init__(self, config: GridWorldConfig) -> None:
        self.config = config
        rows, cols = config.rows, config.cols
        self.num_states = rows * cols
        self.num_actions = len(GRID_ACTIONS)
        self.sigma = float(config.noise_sigma)

        self.blocked_mask = np.zeros(self.num_states, bool)
        self.terminal_mask = np.zeros(self.num_states, bool)
        for cell in config.blocked:
            self.blocked_mask[self.cell_to_state(cell)] = True
        cell_reward = np.full(self.num_states, float(config.step_reward))
        for cell, value in config.terminals.items():
            s = self.cell_to_state(cell)
            self.terminal_mask[s] = True
            cell_reward[s] = float(value)
        self.active_mask = ~(self.terminal_mask | self.blocked_mask)

        self.next_table = np.empty(self.shape, dtype=np.intp)
        for s in range(self.num_states):
            r, c = divmod(s, cols)
            for a, (dr, dc) in _MOVES.items():
                nr, nc = r + dr, c + dc
                dest = nr * cols + nc
                if not (0 <= nr < rows and 0 <= nc < cols) or self.blocked_mask[dest]:
                    dest = s
                self.next_table[s, a] = s if not self.active_mask[s] else dest
        self.expected_rewards = np.where(self.active_mask[:, None], cell_reward[self.next_table], 0.0)

    def cell_to_state(self, cell: tuple[int, int]) -> int:
        r, c = cell
        if not (1 <= r <= self.config.rows and 1 <= c <= self.config.cols):
            raise EnvError(f"cell {cell} out of bounds")
        return (r - 1) * self.config.cols + (c - 1)

    def state_to_cell(self, s: int) -> tuple[int, int]:
        r, c = divmod(s, self.config.cols)
        return (r + 1, c + 1)

    def transition_pmf(self, s: int, a: int) -> np.ndarray:
        p = np.zeros(self.num_states)
        p[self.next_table[s, a]] = 1.0
        return p

    def expected_next_value(self, values: np.ndarray) -> np.ndarray:
        return values[self.next_table]

    def _sample_next(self, s, a, rng, n):
        return np.full(n, self.next_table[s, a], dtype=np.intp)

    def _sweep_next(self, rng, batch, lead):
        return np.broadcast_to(self.next_table[..., None], lead + self.shape + (batch,))


def grid_build(config: GridWorldConfig) -> GridWorld:
    if config.rows < 1 or config.cols < 1:
        raise EnvError("grid dimensions must be positive")
    if not config.terminals:
        raise EnvError("grid world needs at least one terminal cell")
    if config.noise_sigma < 0:
        raise EnvError("noise sigma must be >= 0")
    cells = set(config.blocked) | set(config.terminals)
    for r, c in cells:
        if not (1 <= r <= config.rows and 1 <= c <= config.cols):
            raise EnvError(f"cell {(r, c)} out of bounds")
    if set(config.blocked) & set(config.terminals):
        raise EnvError("terminal placed on a blocked cell")
    return GridWorld(config)


def grid_sample(env: GridWorld, s: int, a: int, rng: np.random.Generator) -> Draw:
    return env.sample(s, a, rng)


# --------------------------------------------------------------------------
# Dynamic 2x2 resource matching
# --------------------------------------------------------------------------


@dataclass
class MatchingConfig:
    reward_matrix: np.ndarray = field(default_factory=lambda: np.array([[8.0, 5.0], [7.0, 3.0]]))
    demand_pmf: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.0, 0.0]))
    supply_pmf: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 0.0, 0.0]))
    queue_cap: int = 3
    action_cap: int = 3
    noise_sigma: float = 0.0


def clip_matching(x, demand, supply) -> np.ndarray:
    """Greedy feasibility projection of a 2x2 matching in row-major order."""
    x = np.asarray(x, dtype=np.int64)
    rem_d = np.array(demand, dtype=np.int64)
    rem_s = np.array(supply, dtype=np.int64)
    out = np.zeros_like(x)
    for i, j in itertools.product(range(x.shape[0]), range(x.shape[1])):
        y = min(x[i, j], rem_d[i], rem_s[j])
        out[i, j] = y
        rem_d[i] -= y
        rem_s[j] -= y
    return out


def _radix_decode(index: np.ndarray, base: int, digits: int) -> np.ndarray:
    """Mixed-radix decode, most significant digit first."""
    out = np.empty(np.shape(index) + (digits,), dtype=np.int64)
    rem = np.asarray(index, dtype=np.int64)
    for k in range(digits - 1, -1, -1):
        out[..., k] = rem % base
        rem = rem // base
    return out


def _radix_encode(digits: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(np.shape(digits)[:-1], dtype=np.int64)
    for k in range(np.shape(digits)[-1]):
        out = out * base + digits[..., k]
    return out


class MatchingEnv(EnvModel):
    """Two demand and two supply queues; actions are 2x2 matching matrices.

    State ``(d1, d2, s1, s2)`` and action ``(x11, x12, x21, x22)`` are encoded
    in mixed radix, most significant component first. Matched units leave,
    leftovers carry over, fresh arrivals are added and queues are capped.
    """

    def __init__(self, config: MatchingConfig) -> None:
        self.config = config
        R = np.asarray(config.reward_matrix, dtype=float)
        self.reward_matrix = R
        qc, ac = int(config.queue_cap), int(config.action_cap)
        self.num_states = (qc + 1) ** 4
        self.num_actions = (ac + 1) ** 4
        self.sigma = float(config.noise_sigma)
        self.terminal_mask = np.zeros(self.num_states, bool)
        self.active_mask = np.ones(self.num_states, bool)

        states = _radix_decode(np.arange(self.num_states), qc + 1, 4)
        actions = _radix_decode(np.arange(self.num_actions), ac + 1, 4)
        full = (self.num_states, self.num_actions, 2)
        dem = np.broadcast_to(states[:, None, 0:2], full).copy()
        sup = np.broadcast_to(states[:, None, 2:4], full).copy()
        x = np.broadcast_to(actions[None, :, :], (self.num_states, self.num_actions, 4))
        y = np.empty_like(x)
        # vectorized clip_matching, same greedy order (1,1),(1,2),(2,1),(2,2)
        for k, (i, j) in enumerate(itertools.product(range(2), range(2))):
            yk = np.minimum(np.minimum(x[..., k], dem[..., i]), sup[..., j])
            y[..., k] = yk
            dem[..., i] -= yk
            sup[..., j] -= yk
        self.expected_rewards = (y * R.reshape(-1)).sum(axis=-1).astype(float)
        leftover = np.concatenate([dem, sup], axis=-1)
        self.leftover_index = _radix_encode(leftover, qc + 1)

        # joint arrival law over (d1, d2, s1, s2) restricted to its support
        dp = np.asarray(config.demand_pmf, float)
        sp = np.asarray(config.supply_pmf, float)
        joint = np.einsum("a,b,c,e->abce", dp, dp, sp, sp).reshape(-1)
        support = np.flatnonzero(joint > 0)
        self.arrival_probs = joint[support]
        arrivals = _radix_decode(support, len(dp), 4)
        cdf = np.cumsum(self.arrival_probs)
        cdf[-1] = 1.0
        self._arrival_cdf = cdf
        self._uniform_arrivals = bool(np.allclose(self.arrival_probs, self.arrival_probs[0], rtol=0, atol=1e-15))

        lefts = _radix_decode(np.arange(self.num_states), qc + 1, 4)
        nxt = np.minimum(lefts[:, None, :] + arrivals[None, :, :], qc)
        # next state for (leftover index, arrival outcome)
        self.next_table = _radix_encode(nxt, qc + 1)
        self._flat_base = self.leftover_index * len(support)

    def decode_state(self, s: int) -> tuple[int, ...]:
        return tuple(int(v) for v in _radix_decode(np.array(s), self.config.queue_cap + 1, 4))

    def encode_state(self, queues) -> int:
        return int(_radix_encode(np.asarray(queues), self.config.queue_cap + 1))

    def decode_action(self, a: int) -> np.ndarray:
        return _radix_decode(np.array(a), self.config.action_cap + 1, 4).reshape(2, 2)

    def encode_action(self, x) -> int:
        return int(_radix_encode(np.asarray(x).reshape(4), self.config.action_cap + 1))

    def transition_pmf(self, s: int, a: int) -> np.ndarray:
        p = np.zeros(self.num_states)
        np.add.at(p, self.next_table[self.leftover_index[s, a]], self.arrival_probs)
        return p

    def expected_next_value(self, values: np.ndarray) -> np.ndarray:
        per_leftover = values[self.next_table] @ self.arrival_probs
        return per_leftover[self.leftover_index]

    def _draw_outcomes(self, rng, size):
        n_out = len(self.arrival_probs)
        if self._uniform_arrivals:
            return rng.integers(0, n_out, size=size)
        return np.searchsorted(self._arrival_cdf, rng.random(size), side="right").clip(max=n_out - 1)

    def _sample_next(self, s, a, rng, n):
        o = self._draw_outcomes(rng, n)
        return self.next_table[self.leftover_index[s, a], o]

    def _sweep_next(self, rng, batch, lead):
        o = self._draw_outcomes(rng, lead + self.shape + (batch,))
        return self.next_table.reshape(-1)[self._flat_base[..., None] + o]


def matching_build(config: MatchingConfig) -> MatchingEnv:
    if int(config.queue_cap) < 1 or int(config.action_cap) < 1:
        raise EnvError("queue_cap and action_cap must be positive")
    R = np.asarray(config.reward_matrix, dtype=float)
    if R.shape != (2, 2):
        raise EnvError("reward matrix must be 2x2")
    for name in ("demand_pmf", "supply_pmf"):
        p = np.asarray(getattr(config, name), dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise EnvError(f"{name} must be a probability vector")
    if config.noise_sigma < 0:
        raise EnvError("noise sigma must be >= 0")
    return MatchingEnv(config)
