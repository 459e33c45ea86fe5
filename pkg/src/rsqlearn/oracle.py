"""Independent ground truth for the learning and inference code.

Nothing here reuses the online paths it is meant to check: ``value_iteration``
uses the exact model, ``dhat_bruteforce`` evaluates the random-scaling
variance by its literal two-pass definition, and ``kappa_mc`` simulates the
limiting pivot from Brownian paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envs import EnvModel
from .qlearn import BatchSchedule, ChainConfig, batch_at, greedy_values, sync_update_shared


def bellman_operator(env: EnvModel, q: np.ndarray, gamma: float) -> np.ndarray:
    """Exact ``T(Q)(s, a) = r(s, a) + gamma E[max_a' Q(S', a')]``; inactive rows 0."""
    v = greedy_values(q, env)
    tq = env.expected_rewards + gamma * env.expected_next_value(v)
    return np.where(env.active_mask[:, None], tq, 0.0)


def value_iteration(
    env: EnvModel,
    gamma: float,
    tol: float = 1e-10,
    q0: np.ndarray | None = None,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Iterate the exact Bellman operator until ``||T(Q) - Q||_inf <= tol``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros(env.shape) if q0 is None else np.array(q0, dtype=float)
    q[~env.active_mask] = 0.0
    for _ in range(max_iter):
        tq = bellman_operator(env, q, gamma)
        if np.max(np.abs(tq - q)) <= tol:
            return q
        q = tq
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


@dataclass
class StationaryEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_sims: int
    horizon: int


def mc_stationary_means(
    env: EnvModel,
    config: ChainConfig,
    n_sims: int,
    rng: np.random.Generator,
    horizons: Sequence[int],
    chunk: int | None = None,
) -> dict[int, StationaryEstimate]:
    """Monte-Carlo mean of ``Q_h`` over independent chains, for each horizon ``h``.

    All chains come from the single generator ``rng``; sims are processed in
    fixed-size chunks (each chunk drawn as one stacked sweep), so results only
    depend on ``rng``'s seed and ``chunk``. The default chunk keeps one stacked
    table near 16 MB.
    """
    if chunk is None:
        chunk = max(1, min(2048, (1 << 21) // (env.num_states * env.num_actions)))
    if n_sims < 2:
        raise ValueError("n_sims must be >= 2")
    horizons = sorted(set(int(h) for h in horizons))
    if horizons[0] < 1:
        raise ValueError("horizons must be >= 1")
    snaps: dict[int, list[np.ndarray]] = {h: [] for h in horizons}
    q0 = config.initial_table(env)
    done = 0
    while done < n_sims:
        g = min(chunk, n_sims - done)
        q = np.broadcast_to(q0, (g,) + env.shape).copy()
        for t in range(1, horizons[-1] + 1):
            b = batch_at(config.batch, t)
            q = sync_update_shared(q, env, config.eta, b, rng, config.gamma)
            if t in snaps:
                snaps[t].append(q)
        done += g

    out = {}
    for h, parts in snaps.items():
        finals = np.concatenate(parts)
        # centre on the first sim so identical chains give exactly zero spread
        ref = finals[0]
        dev = finals - ref
        mean = ref + dev.mean(axis=0)
        stderr = dev.std(axis=0, ddof=1) / np.sqrt(len(finals))
        out[h] = StationaryEstimate(mean=mean, stderr=stderr, n_sims=len(finals), horizon=h)
    return out


def mc_stationary_mean(
    env: EnvModel, config: ChainConfig, n_sims: int, rng: np.random.Generator
) -> StationaryEstimate:
    """Stationary-mean estimate at ``config.horizon``."""
    return mc_stationary_means(env, config, n_sims, rng, [config.horizon])[config.horizon]


def dhat_bruteforce(iterates: Sequence[np.ndarray], batches: BatchSchedule = 1) -> np.ndarray:
    """Literal two-pass evaluation of ``diag(D_T)``.

    First pass: ``Qbar``. Second pass: running sums of ``Q_t - Qbar`` squared
    and accumulated over ``s``, then divided by ``T m_T^2``.
    """
    qs = [np.asarray(q, dtype=float) for q in iterates]
    if not qs:
        raise ValueError("need at least one iterate")
    T = len(qs)
    q_bar = np.zeros_like(qs[0])
    for q in qs:
        q_bar = q_bar + q
    q_bar = q_bar / T
    m2 = sum(1.0 / batch_at(batches, t) for t in range(1, T + 1))
    partial = np.zeros_like(q_bar)
    acc = np.zeros_like(q_bar)
    for s in range(T):
        partial = partial + (qs[s] - q_bar)
        acc = acc + (partial / np.sqrt(m2)) ** 2
    return acc / T


def kappa_statistic(paths: np.ndarray) -> np.ndarray:
    """Pivot ``W(1) / sqrt(int (W(r) - r W(1))^2 dr)`` for discretized paths.

    ``paths[:, k]`` holds ``W(k / n)`` for ``k = 1..n``; the integral is the
    left Riemann sum over ``k = 0..n-1`` with ``W(0) = 0``.
    """
    n = paths.shape[1]
    w1 = paths[:, -1]
    r = np.arange(n) / n
    left = np.concatenate([np.zeros((paths.shape[0], 1)), paths[:, :-1]], axis=1)
    bridge = left - r * w1[:, None]
    integral = (bridge * bridge).mean(axis=1)
    return w1 / np.sqrt(integral)


@dataclass
class KappaTable:
    quantiles: dict[float, float]
    stderr: dict[float, float]
    n_paths: int
    n_grid: int
    median: float = 0.0
    median_stderr: float = 0.0
    samples: np.ndarray | None = field(default=None, repr=False)

    def rows(self) -> list[dict]:
        return [
            {
                "alpha_half": a,
                "quantile": self.quantiles[a],
                "mc_stderr": self.stderr[a],
                "n_paths": self.n_paths,
                "n_grid": self.n_grid,
            }
            for a in sorted(self.quantiles)
        ]


def kappa_mc(
    n_paths: int,
    n_grid: int,
    rng: np.random.Generator,
    alpha_halves: Sequence[float] = (0.005, 0.01, 0.025, 0.05),
    n_boot: int = 200,
    chunk: int = 10_000,
    keep_samples: bool = False,
) -> KappaTable:
    """Monte-Carlo upper quantiles of the random-scaling pivot, with bootstrap stderr."""
    if n_paths < 10_000 or n_grid < 100:
        raise ValueError("need n_paths >= 1e4 and n_grid >= 100")
    samples = np.empty(n_paths)
    done = 0
    scale = 1.0 / np.sqrt(n_grid)
    while done < n_paths:
        g = min(chunk, n_paths - done)
        paths = np.cumsum(rng.standard_normal((g, n_grid)) * scale, axis=1)
        samples[done : done + g] = kappa_statistic(paths)
        done += g

    probs = [1.0 - a for a in alpha_halves] + [0.5]
    point = np.quantile(samples, probs)
    boot = np.empty((n_boot, len(probs)))
    for b in range(n_boot):
        idx = rng.integers(0, n_paths, n_paths)
        boot[b] = np.quantile(samples[idx], probs)
    se = boot.std(axis=0, ddof=1)
    return KappaTable(
        quantiles={a: float(point[i]) for i, a in enumerate(alpha_halves)},
        stderr={a: float(se[i]) for i, a in enumerate(alpha_halves)},
        n_paths=n_paths,
        n_grid=n_grid,
        median=float(point[-1]),
        median_stderr=float(se[-1]),
        samples=samples if keep_samples else None,
    )
