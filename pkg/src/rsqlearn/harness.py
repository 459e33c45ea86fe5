"""Replicated coverage experiments for vanilla and sample-averaged Q-learning.

For each method, ``R`` independent chains run for ``T`` iterations while a
random-scaling accumulator tracks them. At every checkpoint ``n`` the
per-entry intervals are compared with the exact ``Q*`` (value iteration) and
with a Monte-Carlo estimate of the stationary mean ``E Q_eta``. Coverage and
mean length are averaged over replications x active entries.

Seeding: chain ``r`` of a method with batch size ``B`` draws from
``SeedSequence(seed, spawn_key=(0, B, r))``; the stationary-mean simulation
uses ``spawn_key=(1, B)``. Replications can be split across worker processes;
per-replication results are reduced in replication order with exact
summation, so the report bytes do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import DEFAULTS, ConfigError, env_from_config, q_init_from_config
from .envs import EnvModel
from .oracle import mc_stationary_means, value_iteration
from .qlearn import ChainConfig, ChainConfigError, run_chains
from .rsinfer import KAPPA_TABLE, RsAccumulator, interval_arrays

log = logging.getLogger(__name__)

SUPPORTED_ALPHAS = tuple(sorted(2 * a for a in KAPPA_TABLE))
CSV_COLUMNS = ("method", "n", "coverage_qstar_pct", "coverage_stationary_pct", "mean_length", "mc_stderr")


@dataclass(frozen=True)
class ExperimentSpec:
    env: dict[str, Any]
    eta: float
    gamma: float
    batch_size: int
    horizon: int
    checkpoints: tuple[int, ...]
    replications: int
    alpha: float = 0.05
    base_seed: int = 0
    stationary_sims: int = 0
    q_init: float = 0.0

    def __post_init__(self) -> None:
        if not self.checkpoints:
            raise ConfigError("checkpoints must be non-empty")
        if list(self.checkpoints) != sorted(set(self.checkpoints)):
            raise ConfigError("checkpoints must be strictly ascending")
        if self.checkpoints[0] < 2:
            raise ConfigError("checkpoints must be >= 2")
        if self.checkpoints[-1] > self.horizon:
            raise ConfigError(f"checkpoint {self.checkpoints[-1]} exceeds horizon {self.horizon}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not any(math.isclose(self.alpha, a) for a in SUPPORTED_ALPHAS):
            raise ConfigError(f"alpha must be one of {SUPPORTED_ALPHAS}, got {self.alpha}")
        if self.stationary_sims == 1 or self.stationary_sims < 0:
            raise ConfigError("stationary_sims must be 0 (skip) or >= 2")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                self.chain_config()
        except ChainConfigError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def sigma(self) -> float:
        return float(self.env.get("noise.sigma", 0.0))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["checkpoints"] = list(self.checkpoints)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def chain_config(self, batch: int | None = None) -> ChainConfig:
        return ChainConfig(
            eta=self.eta,
            gamma=self.gamma,
            batch=self.batch_size if batch is None else batch,
            horizon=self.horizon,
            q_init=self.q_init,
        )


def spec_from_config(cfg: dict[str, Any], seed: int | None = None) -> ExperimentSpec:
    kind = cfg.get("env.kind", "grid")
    if kind not in DEFAULTS:
        raise ConfigError(f"env.kind must be 'grid' or 'matching', got {kind!r}")
    dflt = DEFAULTS[kind]
    env_keys = {k: v for k, v in cfg.items() if k.split(".")[0] in ("env", "noise", "grid", "match")}
    env_keys.setdefault("env.kind", kind)
    eta = cfg.get("chain.eta", 0.1)
    if isinstance(eta, bool) or not isinstance(eta, (int, float)):
        raise ConfigError("chain.eta must be a single number; step-size schedules are not supported")
    q_init = q_init_from_config(cfg)
    if not isinstance(q_init, float):
        raise ConfigError("coverage experiments take a constant chain.q_init")
    horizon = int(cfg.get("chain.horizon", dflt.horizon))
    try:
        return ExperimentSpec(
            env=env_keys,
            eta=float(eta),
            gamma=float(cfg.get("chain.gamma", 0.9)),
            batch_size=int(cfg.get("chain.batch_size", 5)),
            horizon=horizon,
            checkpoints=tuple(int(c) for c in cfg.get("experiment.checkpoints", dflt.checkpoints)),
            replications=int(cfg.get("experiment.replications", dflt.replications)),
            alpha=float(cfg.get("experiment.alpha", 0.05)),
            base_seed=int(cfg.get("experiment.seed", 0) if seed is None else seed),
            stationary_sims=int(cfg.get("experiment.stationary_sims", dflt.stationary_sims)),
            q_init=q_init,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


@dataclass
class CoverageRow:
    method: str
    n: int
    coverage_qstar_pct: float
    coverage_stationary_pct: float | None
    mean_length: float
    mc_stderr: float | None


@dataclass
class CoverageReport:
    rows: list[CoverageRow]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"rows": [asdict(r) for r in self.rows], "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CoverageReport":
        return cls(rows=[CoverageRow(**r) for r in d["rows"]], metadata=dict(d["metadata"]))

    def row(self, method: str, n: int) -> CoverageRow:
        for r in self.rows:
            if r.method == method and r.n == n:
                return r
        raise KeyError((method, n))

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))


def method_name(batch: int) -> str:
    return "vanilla" if batch == 1 else f"batch_B{batch}"


def chain_seed(base_seed: int, batch: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(base_seed, spawn_key=(0, batch, rep))


def stationary_seed(base_seed: int, batch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(base_seed, spawn_key=(1, batch))


class _CheckpointSink:
    """Feeds a stacked accumulator and scores intervals at each checkpoint."""

    def __init__(self, checkpoints, alpha, active, targets):
        self.acc = RsAccumulator()
        self.checkpoints = set(checkpoints)
        self.alpha = alpha
        self.active = active
        self.targets = targets  # {name: {n: table}}
        self.results: dict[int, dict[str, Any]] = {}

    def observe(self, t, q, batch):
        self.acc.observe(t, q, batch)
        if t not in self.checkpoints:
            return
        center, half, _ = interval_arrays(self.acc, self.alpha)
        center = center[:, self.active, :].reshape(center.shape[0], -1)
        half = half[:, self.active, :].reshape(half.shape[0], -1)
        out = {"length_sum": [math.fsum(row) for row in 2.0 * half], "entries": center.shape[1]}
        for name, by_n in self.targets.items():
            target = by_n.get(t)
            if target is None:
                out[name] = None
                continue
            tgt = target[self.active, :].reshape(-1)
            out[name] = [int(c) for c in (np.abs(center - tgt) <= half).sum(axis=1)]
        self.results[t] = out


def _run_group(spec: ExperimentSpec, batch: int, reps: Sequence[int], targets) -> dict[int, dict[str, Any]]:
    env = env_from_config(spec.env)
    rngs = [np.random.default_rng(chain_seed(spec.base_seed, batch, r)) for r in reps]
    sink = _CheckpointSink(spec.checkpoints, spec.alpha, env.active_mask, targets)
    cfg = replace(spec.chain_config(batch), horizon=spec.checkpoints[-1])
    run_chains(env, cfg, rngs, sink)
    return sink.results


def _split(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(parts)]


def _stationary_targets(env, spec, batch):
    if spec.stationary_sims == 0:
        return {}
    rng = np.random.default_rng(stationary_seed(spec.base_seed, batch))
    est = mc_stationary_means(env, spec.chain_config(batch), spec.stationary_sims, rng, spec.checkpoints)
    return {n: e.mean for n, e in est.items()}


def run_coverage(
    spec: ExperimentSpec,
    jobs: int = 1,
    env: EnvModel | None = None,
    q_star: np.ndarray | None = None,
) -> CoverageReport:
    """Coverage rates and mean interval lengths for one method (``spec.batch_size``)."""
    env = env_from_config(spec.env) if env is None else env
    if q_star is None:
        q_star = value_iteration(env, spec.gamma, tol=1e-10)
    if q_star.shape != env.shape:
        raise ConfigError(f"Q* shape {q_star.shape} does not match environment {env.shape}")
    batch = spec.batch_size
    try:
        spec.chain_config(batch)
    except ChainConfigError as exc:
        raise ConfigError(str(exc)) from exc

    targets = {"qstar": {n: q_star for n in spec.checkpoints}, "stationary": _stationary_targets(env, spec, batch)}
    groups = _split(spec.replications, jobs)
    if len(groups) == 1:
        parts = [_run_group(spec, batch, groups[0], targets)]
    else:
        with ProcessPoolExecutor(max_workers=len(groups)) as pool:
            futures = [pool.submit(_run_group, spec, batch, g, targets) for g in groups]
            parts = [f.result() for f in futures]

    R = spec.replications
    rows = []
    for n in spec.checkpoints:
        entries = parts[0][n]["entries"]
        length_sums = [x for p in parts for x in p[n]["length_sum"]]
        cov_q = [x for p in parts for x in p[n]["qstar"]]
        per_rep = np.array(cov_q, dtype=float) / entries
        stderr = float(per_rep.std(ddof=1) / math.sqrt(R) * 100.0) if R > 1 else None
        cov_s = None
        if parts[0][n]["stationary"] is not None:
            cov_s = 100.0 * sum(x for p in parts for x in p[n]["stationary"]) / (R * entries)
        rows.append(
            CoverageRow(
                method=method_name(batch),
                n=n,
                coverage_qstar_pct=100.0 * sum(cov_q) / (R * entries),
                coverage_stationary_pct=cov_s,
                mean_length=math.fsum(length_sums) / (R * entries),
                mc_stderr=stderr,
            )
        )
    lengths = [r.mean_length for r in rows]
    if any(b > a for a, b in zip(lengths, lengths[1:])):
        warnings.warn(f"{method_name(batch)}: mean interval length increased with n: {lengths}", RuntimeWarning)
    return CoverageReport(rows=rows, metadata=_metadata(spec))


def _metadata(spec: ExperimentSpec) -> dict[str, Any]:
    return {
        "spec_hash": spec.digest(),
        "seed": spec.base_seed,
        "version": __version__,
        "alpha": spec.alpha,
        "replications": spec.replications,
        "stationary_sims": spec.stationary_sims,
        "env_kind": spec.env.get("env.kind", "grid"),
    }


def compare_methods(spec: ExperimentSpec, jobs: int = 1) -> CoverageReport:
    """Vanilla (``B = 1``) and sample-averaged (``B = spec.batch_size``) side by side."""
    if spec.batch_size <= 1:
        raise ConfigError("compare_methods needs batch_size > 1")
    env = env_from_config(spec.env)
    q_star = value_iteration(env, spec.gamma, tol=1e-10)
    vanilla = run_coverage(replace(spec, batch_size=1), jobs=jobs, env=env, q_star=q_star)
    batch = run_coverage(spec, jobs=jobs, env=env, q_star=q_star)
    return CoverageReport(rows=vanilla.rows + batch.rows, metadata=_metadata(spec))


# -- output -------------------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def report_csv(report: CoverageReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def report_json(report: CoverageReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(report: CoverageReport, fmt: str = "csv", path: str | Path | None = None) -> str:
    """Render the report as CSV or JSON; write it to ``path`` when given."""
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = report_json(report)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def format_table(report: CoverageReport) -> str:
    """Side-by-side text table, one block per quantity, checkpoints as columns."""
    ns = sorted({r.n for r in report.rows})
    methods = report.methods()
    head = f"{'':<28}" + "".join(f"{'n = ' + str(n):>14}" for n in ns)
    lines = [head]
    for label, attr in (
        ("Cov. for Q* (%)", "coverage_qstar_pct"),
        ("Cov. for E Q_eta (%)", "coverage_stationary_pct"),
        ("Length", "mean_length"),
    ):
        lines.append(label)
        for m in methods:
            cells = []
            for n in ns:
                v = getattr(report.row(m, n), attr)
                cells.append(f"{'n/a' if v is None else format(v, '.3f'):>14}")
            lines.append(f"  {m:<26}" + "".join(cells))
    return "\n".join(lines)


# -- synthetic end-to-end check ---------------------------------------------


def synthetic_iid_coverage(
    n_streams: int, T: int, alpha: float = 0.05, seed: int = 0, dim: int = 1, mean: float = 0.0
) -> float:
    """Coverage (in %) of the true mean by random-scaling intervals on i.i.d. N(mean, 1) streams."""
    rng = np.random.default_rng(seed)
    acc = RsAccumulator()
    for _ in range(T):
        acc.update(mean + rng.standard_normal((n_streams, dim)), 1)
    center, half, _ = interval_arrays(acc, alpha)
    return 100.0 * float(np.mean(np.abs(center - mean) <= half))
