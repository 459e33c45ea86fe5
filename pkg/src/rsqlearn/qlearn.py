"""Synchronous sample-averaged Q-learning with a generative model.

One iteration updates every active ``(s, a)`` from the same input table::

    Q'(s, a) = Q(s, a) - eta * (Q(s, a) - That(Q)(s, a))

where ``That`` averages ``B`` fresh (reward, next-state) draws. ``B = 1`` is
vanilla synchronous Q-learning.

The engine is written over a leading "chain" axis so that many independent
chains can share the numpy work while each draws only from its own
generator; a chain's trajectory does not depend on which other chains were
stacked with it.
"""

from __future__ import annotations

import numbers
import warnings
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, Union

import numpy as np

from .envs import EnvModel

BatchSchedule = Union[int, Sequence[int], Callable[[int], int]]


class ChainConfigError(ValueError):
    pass


def batch_at(schedule: BatchSchedule, t: int) -> int:
    """Batch size ``B_t`` for iteration ``t`` (1-based)."""
    if isinstance(schedule, numbers.Integral):
        b = int(schedule)
    elif callable(schedule):
        b = int(schedule(t))
    else:
        b = int(schedule[t - 1])
    if b < 1:
        raise ChainConfigError(f"batch size must be >= 1, got {b} at t={t}")
    return b


@dataclass
class ChainConfig:
    eta: float
    gamma: float
    batch: BatchSchedule = 1
    horizon: int = 1
    q_init: np.ndarray | float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.eta, numbers.Real) or isinstance(self.eta, bool):
            raise ChainConfigError("only a constant step size is supported")
        if not 0.0 <= self.eta <= 1.0:
            raise ChainConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.gamma < 1.0:
            raise ChainConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if int(self.horizon) < 1:
            raise ChainConfigError("horizon must be >= 1")
        if isinstance(self.batch, numbers.Integral) and self.batch < 1:
            raise ChainConfigError("batch size must be >= 1")
        if self.eta * (1.0 + self.gamma) >= 1.0:
            warnings.warn(
                f"eta*(1+gamma) = {self.eta * (1 + self.gamma):.3g} >= 1; outside the stable regime",
                RuntimeWarning,
                stacklevel=3,
            )

    def initial_table(self, env: EnvModel) -> np.ndarray:
        if self.q_init is None:
            q = np.zeros(env.shape)
        else:
            q = np.broadcast_to(np.asarray(self.q_init, dtype=float), env.shape).copy()
        q[~env.active_mask] = 0.0
        return q


class IterateSink(Protocol):
    def observe(self, t: int, q: np.ndarray, batch: int) -> None: ...


@dataclass
class ChainResult:
    q_final: np.ndarray
    q_bar: np.ndarray
    T: int


def greedy_values(q: np.ndarray, env: EnvModel) -> np.ndarray:
    """``max_a Q(s, a)`` with terminal states pinned to 0; works on stacked tables."""
    v = q.max(axis=-1)
    if env.terminal_mask.any():
        v = np.where(env.terminal_mask, 0.0, v)
    return v


def empirical_bellman(
    q: np.ndarray,
    env: EnvModel,
    s: int,
    a: int,
    batch: int,
    rng: np.random.Generator,
    gamma: float,
    size: int | None = None,
):
    """Sample-averaged Bellman target at one ``(s, a)`` from ``batch`` draws.

    With ``size`` given, returns that many independent estimates as an array.
    """
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    n = 1 if size is None else int(size)
    rewards, nxt, _ = env.sample(s, a, rng, size=n * batch)
    v = greedy_values(np.asarray(q, float), env)
    est = rewards.reshape(n, batch).mean(axis=1) + gamma * v[nxt].reshape(n, batch).mean(axis=1)
    return float(est[0]) if size is None else est


def _batch_sum(x: np.ndarray) -> np.ndarray:
    # fixed left-to-right order so stacking chains never changes the bits
    acc = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        acc += x[..., i]
    return acc


def _apply_update(q, mean_reward, next_states, env, eta, gamma, batch):
    v = greedy_values(q, env)
    if q.ndim == 2:
        nv = v[next_states]
    else:
        g = q.shape[0]
        nv = np.take_along_axis(v, next_states.reshape(g, -1), axis=1).reshape(next_states.shape)
    target = mean_reward + gamma * (_batch_sum(nv) / batch)
    new = q - eta * (q - target)
    return np.where(env.active_mask[:, None], new, q)


def sync_update(
    q: np.ndarray, env: EnvModel, eta: float, batch: int, rng: np.random.Generator, gamma: float
) -> np.ndarray:
    """One synchronous sweep; every active entry reads the same input table."""
    mean_reward, nxt = env.sample_sweep(rng, batch)
    return _apply_update(q, mean_reward, nxt, env, eta, gamma, batch)


def sync_update_chains(
    q: np.ndarray,
    env: EnvModel,
    eta: float,
    batch: int,
    rngs: Sequence[np.random.Generator],
    gamma: float,
) -> np.ndarray:
    """``sync_update`` for a stack of chains ``q[g]``, chain ``g`` drawing from ``rngs[g]``."""
    draws = [env.sample_sweep(r, batch) for r in rngs]
    mean_reward = np.stack([d[0] for d in draws])
    nxt = np.stack([d[1] for d in draws])
    return _apply_update(q, mean_reward, nxt, env, eta, gamma, batch)


def sync_update_shared(
    q: np.ndarray, env: EnvModel, eta: float, batch: int, rng: np.random.Generator, gamma: float
) -> np.ndarray:
    """Sweep a stack of chains whose draws all come from one generator, in one block."""
    mean_reward, nxt = env.sample_sweep(rng, batch, n_chains=q.shape[0])
    return _apply_update(q, mean_reward, nxt, env, eta, gamma, batch)


def run_chains(
    env: EnvModel,
    config: ChainConfig,
    rngs: Sequence[np.random.Generator],
    sink: IterateSink | None = None,
) -> ChainResult:
    """Run ``len(rngs)`` independent chains in lockstep for ``config.horizon`` steps."""
    g = len(rngs)
    q = np.broadcast_to(config.initial_table(env), (g,) + env.shape).copy()
    total = np.zeros_like(q)
    T = int(config.horizon)
    for t in range(1, T + 1):
        b = batch_at(config.batch, t)
        q = sync_update_chains(q, env, config.eta, b, rngs, config.gamma)
        total += q
        if sink is not None:
            sink.observe(t, q, b)
    return ChainResult(q_final=q, q_bar=total / T, T=T)


def run_chain(
    env: EnvModel,
    config: ChainConfig,
    sink: IterateSink | None = None,
    rng: np.random.Generator | None = None,
) -> ChainResult:
    """Run a single chain; ``sink.observe(t, Q_t, B_t)`` is called after every update."""
    if rng is None:
        rng = np.random.default_rng()
    q = config.initial_table(env)
    total = np.zeros_like(q)
    T = int(config.horizon)
    for t in range(1, T + 1):
        b = batch_at(config.batch, t)
        q = sync_update(q, env, config.eta, b, rng, config.gamma)
        total += q
        if sink is not None:
            sink.observe(t, q, b)
    return ChainResult(q_final=q, q_bar=total / T, T=T)
