"""Command line entry point: ``rsqlearn <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import DEFAULTS, ConfigError, env_from_config, load_config, q_init_from_config
from .harness import compare_methods, emit_report, format_table, run_coverage, spec_from_config
from .oracle import kappa_mc, mc_stationary_mean, value_iteration
from .qlearn import ChainConfig, ChainConfigError

EXIT_CONFIG = 2
EXIT_IO = 3


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _table_text(env, table: np.ndarray, fmt: str, arrays: dict | None = None, meta: dict | None = None) -> str:
    """Q-shaped table(s) as JSON, or as CSV rows over active states."""
    arrays = arrays or {}
    if fmt == "json":
        payload = {"shape": list(table.shape), "values": table.tolist(), **(meta or {})}
        payload.update({k: v.tolist() for k, v in arrays.items()})
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = sorted(arrays)
    w.writerow(["state", "action", "value", *names])
    for s in np.flatnonzero(env.active_mask):
        for a in range(table.shape[1]):
            w.writerow([int(s), a, repr(float(table[s, a]))] + [repr(float(arrays[k][s, a])) for k in names])
    return buf.getvalue()


def cmd_coverage(args) -> int:
    cfg = load_config(args.config)
    spec = spec_from_config(cfg, seed=args.seed)
    methods = cfg.get("experiment.methods", "both")
    if methods == "both" and spec.batch_size > 1:
        report = compare_methods(spec, jobs=args.jobs)
    elif methods in ("both", "single"):
        report = run_coverage(spec, jobs=args.jobs)
    else:
        raise ConfigError("experiment.methods must be 'both' or 'single'")
    text = emit_report(report, args.format)
    _write(text, args.out)
    if args.out is not None:
        logging.getLogger(__name__).info("\n%s", format_table(report))
    return 0


def cmd_q_star(args) -> int:
    cfg = load_config(args.config)
    env = env_from_config(cfg)
    gamma = float(cfg.get("chain.gamma", 0.9))
    q = value_iteration(env, gamma, tol=args.tol)
    _write(_table_text(env, q, args.format, meta={"gamma": gamma, "tol": args.tol}), args.out)
    return 0


def cmd_kappa_table(args) -> int:
    table = kappa_mc(args.paths, args.grid, np.random.default_rng(args.seed))
    rows = table.rows()
    if args.format == "json":
        text = json.dumps(
            {"rows": rows, "median": table.median, "median_stderr": table.median_stderr, "seed": args.seed},
            indent=2,
            sort_keys=True,
        ) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    _write(text, args.out)
    return 0


def cmd_stationary_mean(args) -> int:
    cfg = load_config(args.config)
    env = env_from_config(cfg)
    kind = cfg.get("env.kind", "grid")
    try:
        chain = ChainConfig(
            eta=float(cfg.get("chain.eta", 0.1)),
            gamma=float(cfg.get("chain.gamma", 0.9)),
            batch=int(cfg.get("chain.batch_size", 1)),
            horizon=int(cfg.get("chain.horizon", DEFAULTS[kind].horizon)),
            q_init=q_init_from_config(cfg, Path(args.config).parent),
        )
    except ChainConfigError as exc:
        raise ConfigError(str(exc)) from exc
    est = mc_stationary_mean(env, chain, args.sims, np.random.default_rng(args.seed))
    meta = {"n_sims": est.n_sims, "horizon": est.horizon, "seed": args.seed}
    _write(_table_text(env, est.mean, args.format, arrays={"stderr": est.stderr}, meta=meta), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rsqlearn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("coverage", help="run the replicated coverage experiment")
    c.add_argument("--config", required=True)
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.add_argument("--out")
    c.add_argument("--seed", type=int)
    c.add_argument("--jobs", type=int, default=1, help="worker processes over replications")
    c.set_defaults(func=cmd_coverage)

    q = sub.add_parser("q-star", help="exact Q* by value iteration")
    q.add_argument("--config", required=True)
    q.add_argument("--tol", type=float, default=1e-10)
    q.add_argument("--format", choices=("csv", "json"), default="csv")
    q.add_argument("--out")
    q.set_defaults(func=cmd_q_star)

    k = sub.add_parser("kappa-table", help="Monte-Carlo quantiles of the pivot")
    k.add_argument("--paths", type=int, default=200_000)
    k.add_argument("--grid", type=int, default=1000)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--format", choices=("csv", "json"), default="csv")
    k.add_argument("--out")
    k.set_defaults(func=cmd_kappa_table)

    s = sub.add_parser("stationary-mean", help="Monte-Carlo estimate of E Q_eta")
    s.add_argument("--config", required=True)
    s.add_argument("--sims", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stationary_mean)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ChainConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
