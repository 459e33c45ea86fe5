"""Plain-text experiment configuration.

Grammar, one setting per line::

    # comment
    dotted.key = value

Blank lines are ignored and ``#`` starts a comment anywhere on a line. A
value is parsed as JSON when possible (numbers, ``true``/``false``, ``null``,
``"strings"``, ``[lists]``); otherwise it is kept as a bare string. Keys are case sensitive and must be
unique. Recognised keys:

========================  =========================================================
``env.kind``              ``grid`` or ``matching``
``noise.sigma``           reward noise standard deviation (>= 0)
``grid.rows``             number of rows (default 3)
``grid.cols``             number of columns (default 4)
``grid.blocked``          list of ``[row, col]`` cells, 1-based (default ``[[2, 2]]``)
``grid.terminals``        list of ``[row, col, reward]`` (default ``[[1,4,10],[2,4,-10]]``)
``grid.step_reward``      reward of every non-terminal move (default -1)
``match.reward_matrix``   2x2 list (default ``[[8, 5], [7, 3]]``)
``match.demand_pmf``      pmf over arrival quantities 0..3 (default ``[0.5,0.5,0,0]``)
``match.supply_pmf``      defaults to ``match.demand_pmf``
``match.queue_cap``       per-queue capacity (default 3)
``match.action_cap``      per-entry matching cap (default 3)
``chain.eta``             constant step size (a number; schedules are rejected)
``chain.gamma``           discount factor
``chain.batch_size``      batch size ``B`` of the sample-averaged method
``chain.horizon``         number of iterations ``T``
``chain.q_init``          constant initial Q value or path to a ``.npy`` table (default 0)
``experiment.checkpoints``     ascending list of iteration counts <= horizon
``experiment.replications``    independent chains per method
``experiment.alpha``           1 - nominal level (0.01, 0.02, 0.05 or 0.1)
``experiment.seed``            base seed
``experiment.stationary_sims`` chains for the stationary-mean estimate (0 skips it)
``experiment.methods``         ``both`` (vanilla and batch, default) or ``single``
========================  =========================================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .envs import EnvModel, GridWorldConfig, MatchingConfig, grid_build, matching_build


class ConfigError(ValueError):
    pass


KNOWN_KEYS = {
    "env.kind",
    "noise.sigma",
    "grid.rows",
    "grid.cols",
    "grid.blocked",
    "grid.terminals",
    "grid.step_reward",
    "match.reward_matrix",
    "match.demand_pmf",
    "match.supply_pmf",
    "match.queue_cap",
    "match.action_cap",
    "chain.eta",
    "chain.gamma",
    "chain.batch_size",
    "chain.horizon",
    "chain.q_init",
    "experiment.checkpoints",
    "experiment.replications",
    "experiment.alpha",
    "experiment.seed",
    "experiment.stationary_sims",
    "experiment.methods",
}


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, Any]:
    return parse_config_text(Path(path).read_text())


def _number(cfg, key, default=None, kind=float):
    value = cfg.get(key, default)
    if value is None:
        raise ConfigError(f"missing required key {key!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    return float(value)


def env_from_config(cfg: dict[str, Any]) -> EnvModel:
    kind = cfg.get("env.kind", "grid")
    sigma = _number(cfg, "noise.sigma", 0.0)
    try:
        if kind == "grid":
            blocked = {tuple(int(v) for v in cell) for cell in cfg.get("grid.blocked", [[2, 2]])}
            terminals = {
                (int(r), int(c)): float(v) for r, c, v in cfg.get("grid.terminals", [[1, 4, 10], [2, 4, -10]])
            }
            return grid_build(
                GridWorldConfig(
                    rows=_number(cfg, "grid.rows", 3, int),
                    cols=_number(cfg, "grid.cols", 4, int),
                    blocked=blocked,
                    terminals=terminals,
                    step_reward=_number(cfg, "grid.step_reward", -1.0),
                    noise_sigma=sigma,
                )
            )
        if kind == "matching":
            demand = np.asarray(cfg.get("match.demand_pmf", [0.5, 0.5, 0.0, 0.0]), dtype=float)
            return matching_build(
                MatchingConfig(
                    reward_matrix=np.asarray(cfg.get("match.reward_matrix", [[8, 5], [7, 3]]), dtype=float),
                    demand_pmf=demand,
                    supply_pmf=np.asarray(cfg.get("match.supply_pmf", demand), dtype=float),
                    queue_cap=_number(cfg, "match.queue_cap", 3, int),
                    action_cap=_number(cfg, "match.action_cap", 3, int),
                    noise_sigma=sigma,
                )
            )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"env.kind must be 'grid' or 'matching', got {kind!r}")


def q_init_from_config(cfg: dict[str, Any], base: Path | None = None):
    value = cfg.get("chain.q_init", 0.0)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        path = Path(value)
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            return np.load(path)
        except OSError as exc:
            raise ConfigError(f"cannot load q_init table {path}: {exc}") from exc
    raise ConfigError("chain.q_init must be a number or a path to a .npy file")


@dataclass
class Defaults:
    replications: int
    stationary_sims: int
    checkpoints: list[int]
    horizon: int


DEFAULTS = {
    "grid": Defaults(replications=200, stationary_sims=10_000, checkpoints=[2000, 6000, 10000], horizon=10000),
    "matching": Defaults(replications=20, stationary_sims=50, checkpoints=[500, 1000, 2000], horizon=2000),
}
