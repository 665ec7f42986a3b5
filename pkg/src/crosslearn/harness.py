"""Experiment harness and command-line entry point.

Configs are JSON: an environment spec, a list of algorithms, an ascending
horizon grid, seeds, optional parameter overrides for the cross-learner,
and an output path. Each (algo, T, seed) run gets a fresh environment from
stream (seed, 0) and a fresh learner from stream (seed, algo-id), so results
are reproducible and independent of execution order; parallel execution
(capped by CROSSLEARN_THREADS) returns exactly the serial results.

The results CSV has one row per checkpoint (powers of two and T) with the
fixed header below. Wall-clock timing breaks byte-level reproducibility, so
the wall_ms column is written as 0 unless timing is requested explicitly;
measured times always live in the in-memory RunResult.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .accumulator import make_accumulator
from .baselines import KnownNuLearner, PerContextExp3, known_nu_rate
from .envs import AuctionEnv, EnvError, RegretTracker, SleepingEnv, TabularEnv
from .learner import (CrossLearner, ParamError, calibrated_params,
                      tune_parameters, with_overrides)
from .simplex import RngStream

CSV_HEADER = ["run_id", "seed", "algo", "env", "T", "checkpoint",
              "cum_regret", "fallback_count", "wall_ms"]

ENV_STREAM = 0
ALGO_STREAMS = {"crosslearn": 1, "known_nu": 2, "exp3_per_context": 3}

THREADS_VAR = "CROSSLEARN_THREADS"


class ConfigError(ValueError):
    pass


@dataclass
class RunResult:
    run_id: str
    seed: int
    algo: str
    env_name: str
    horizon: int
    checkpoints: list  # [(t, cum_regret), ...], regret already rescaled
    fallback_count: int
    wall_ms: float


def checkpoint_schedule(horizon):
    """Powers of two up to the horizon, plus the horizon itself."""
    cps = [1 << j for j in range(horizon.bit_length()) if (1 << j) <= horizon]
    if cps[-1] != horizon:
        cps.append(horizon)
    return cps


def build_env(env_spec, horizon, rng):
    spec = dict(env_spec)
    kind = spec.pop("kind", None)
    if kind == "tabular_synthetic":
        return TabularEnv.synthetic(
            n_contexts=int(spec.pop("C")), n_arms=int(spec.pop("K")),
            horizon=horizon, rng=rng, **spec)
    if kind == "auction":
        n_arms = spec.pop("K", None)
        return AuctionEnv.generate(
            horizon, rng, values=spec.pop("values", None),
            payments=spec.pop("payments", None),
            n_arms=int(n_arms) if n_arms is not None else None)
    if kind == "sleeping":
        return SleepingEnv.generate(
            horizon, int(spec.pop("K")), rng,
            availability=spec.pop("availability", None),
            losses=spec.pop("losses", None))
    raise ConfigError(f"unknown environment kind {kind!r}")


def crosslearn_params(n_arms, horizon, overrides):
    if overrides in (None, "tuned"):
        return tune_parameters(n_arms, horizon)
    if overrides == "calibrated":
        return calibrated_params(n_arms, horizon)
    if isinstance(overrides, dict):
        ov = dict(overrides)
        unsafe = bool(ov.pop("unsafe", False))
        unknown = set(ov) - {"eta", "gamma", "L"}
        if unknown:
            raise ConfigError(f"unknown override fields {sorted(unknown)}")
        base = tune_parameters(n_arms, horizon)
        try:
            return with_overrides(base, unsafe=unsafe, **ov)
        except ParamError as err:
            raise ConfigError(f"invalid override: {err}") from err
    raise ConfigError(f"overrides must be a dict, 'tuned', or 'calibrated': {overrides!r}")


def build_algo(name, env, horizon, seed, overrides):
    rng = RngStream(seed, ALGO_STREAMS[name])
    n_contexts = getattr(env, "n_contexts", None)
    if name == "crosslearn":
        params = crosslearn_params(env.n_arms, horizon, overrides)
        acc = make_accumulator(env.acc_kind, env.n_arms, n_contexts)
        active = env.active if env.kind == "tabular" else (
            None if env.kind == "auction" else env.active_mask)
        return CrossLearner(params, acc, rng, active=active)
    if name == "known_nu":
        acc = make_accumulator(env.acc_kind, env.n_arms, n_contexts)
        active = env.active if env.kind == "tabular" else (
            None if env.kind == "auction" else env.active_mask)
        return KnownNuLearner(env.n_arms, acc, env.known_nu_oracle(),
                              known_nu_rate(env.n_arms, horizon), rng, active=active)
    if name == "exp3_per_context":
        active = env.active if env.kind == "tabular" else (
            None if env.kind == "auction" else env.active_mask)
        return PerContextExp3(env.n_arms, rng, active=active)
    raise ConfigError(f"unknown algorithm {name!r}")


def run_single(env_spec, algo_name, horizon, seed, overrides=None):
    """Execute one run and return its RunResult (regret per checkpoint)."""
    env = build_env(env_spec, horizon, RngStream(seed, ENV_STREAM))
    algo = build_algo(algo_name, env, horizon, seed, overrides)
    tracker = RegretTracker(env)
    cps = checkpoint_schedule(horizon)
    out = []
    cp_iter = iter(cps)
    next_cp = next(cp_iter)
    start = time.perf_counter()
    for t in range(horizon):
        context = env.context(t)
        arm = algo.step(context, lambda a: env.reveal(t, a))
        tracker.update(t, context, arm)
        if t + 1 == next_cp:
            out.append((t + 1, tracker.regret() * env.regret_scale))
            next_cp = next(cp_iter, None)
    wall_ms = (time.perf_counter() - start) * 1000.0
    return RunResult(
        run_id=f"{algo_name}-T{horizon}-s{seed}",
        seed=seed, algo=algo_name, env_name=env.kind, horizon=horizon,
        checkpoints=out, fallback_count=int(getattr(algo, "fallback_count", 0)),
        wall_ms=wall_ms)


def validate_config(config):
    if "env" not in config or "kind" not in config["env"]:
        raise ConfigError("config needs an env spec with a kind")
    algos = config.get("algos")
    if not algos:
        raise ConfigError("config needs a nonempty algos list")
    for a in algos:
        if a not in ALGO_STREAMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    grid = config.get("T_grid")
    if not grid or any(int(t) <= 0 for t in grid):
        raise ConfigError("T_grid must be a nonempty list of positive horizons")
    if list(grid) != sorted(set(int(t) for t in grid)):
        raise ConfigError("T_grid must be strictly ascending")
    seeds = config.get("seeds")
    if not seeds:
        raise ConfigError("config needs a nonempty seeds list")
    if "overrides" in config and config["overrides"] is not None:
        # validated against a representative horizon so a bad override
        # fails before any run starts
        env = build_env(config["env"], int(grid[0]), RngStream(0, ENV_STREAM))
        crosslearn_params(env.n_arms, int(grid[0]), config["overrides"])


def _run_task(task):
    env_spec, algo, horizon, seed, overrides = task
    return run_single(env_spec, algo, horizon, seed, overrides)


def worker_cap():
    cap = os.environ.get(THREADS_VAR)
    if cap is None:
        return os.cpu_count() or 1
    try:
        n = int(cap)
    except ValueError as err:
        raise ConfigError(f"{THREADS_VAR} must be an integer, got {cap!r}") from err
    return max(1, n)


def run_experiment(config):
    """Run every (algo, T, seed) combination in the config; deterministic."""
    validate_config(config)
    overrides = config.get("overrides")
    tasks = [
        (config["env"], algo, int(horizon), int(seed),
         overrides if algo == "crosslearn" else None)
        for algo in config["algos"]
        for horizon in config["T_grid"]
        for seed in config["seeds"]
    ]
    workers = min(int(config.get("workers", 1)), worker_cap(), len(tasks))
    if workers <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks, chunksize=1))


def results_rows(results, timing=False):
    rows = []
    for r in results:
        for cp, regret in r.checkpoints:
            rows.append([
                r.run_id, r.seed, r.algo, r.env_name, r.horizon, cp,
                f"{regret:.17g}", r.fallback_count,
                int(round(r.wall_ms)) if timing else 0,
            ])
    return rows


def write_csv(results, path, timing=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(results_rows(results, timing=timing))
    data = buf.getvalue()
    with open(path, "w", newline="") as fh:
        fh.write(data)
    return data


def load_results_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header {header!r}")
        return [dict(zip(header, row)) for row in reader]


@dataclass
class ScalingFit:
    slope: float
    stderr: float
    horizons: list
    means: list


def fit_scaling(points):
    """OLS slope of log(mean final regret) against log(T).

    points: iterable of (T, final_regret) pairs, one per (T, seed). Needs at
    least 4 distinct horizons and at least 10 seeds per horizon.
    """
    by_T = {}
    for horizon, regret in points:
        by_T.setdefault(int(horizon), []).append(float(regret))
    if len(by_T) < 4:
        raise ConfigError(f"need >= 4 horizons for a scaling fit, got {len(by_T)}")
    counts = {T: len(v) for T, v in by_T.items()}
    if min(counts.values()) < 10:
        raise ConfigError(f"need >= 10 seeds per horizon, got {counts}")
    horizons = sorted(by_T)
    means = [float(np.mean(by_T[T])) for T in horizons]
    if min(means) <= 0:
        raise ConfigError("mean regret must be positive to fit a log-log slope")
    x = np.log(np.asarray(horizons, dtype=float))
    y = np.log(np.asarray(means))
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    resid = y - (y.mean() + slope * xc)
    dof = len(horizons) - 2
    stderr = float(math.sqrt((resid @ resid) / dof / (xc @ xc))) if dof > 0 else 0.0
    return ScalingFit(slope, stderr, horizons, means)


def bootstrap_ci(values, n_resamples=10000, level=0.95, seed=0):
    """Percentile bootstrap CI for the mean (deterministic seed)."""
    gen = np.random.default_rng(seed)
    values = np.asarray(values, dtype=float)
    idx = gen.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def scaling_report(rows, algo=None):
    """Per-algorithm scaling fits from results CSV rows, with bootstrap CIs
    on the per-horizon mean regret."""
    final = {}
    for row in rows:
        if algo is not None and row["algo"] != algo:
            continue
        if int(row["checkpoint"]) != int(row["T"]):
            continue
        key = (row["algo"], int(row["T"]))
        final.setdefault(key, []).append(float(row["cum_regret"]))
    report = {}
    for name in sorted({k[0] for k in final}):
        points = []
        cis = {}
        for (a, horizon), vals in sorted(final.items()):
            if a != name:
                continue
            points.extend((horizon, v) for v in vals)
            cis[horizon] = bootstrap_ci(vals)
        fit = fit_scaling(points)
        report[name] = {"fit": fit, "ci": cis}
    return report


def _cmd_run(args):
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"error: cannot read config: {err}", file=sys.stderr)
        return 1
    if args.workers is not None:
        config["workers"] = args.workers
    try:
        results = run_experiment(config)
    except (ConfigError, ParamError, EnvError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    out = config.get("output", "results.csv")
    write_csv(results, out, timing=args.timing or bool(config.get("timing")))
    print(f"wrote {sum(len(r.checkpoints) for r in results)} rows "
          f"({len(results)} runs) to {out}")
    return 0


def _cmd_scaling(args):
    try:
        rows = load_results_csv(args.results)
        report = scaling_report(rows, algo=args.algo)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for name, entry in report.items():
        fit = entry["fit"]
        print(f"{name}: slope {fit.slope:.4f} +/- {fit.stderr:.4f} "
              f"over T={fit.horizons}")
        for horizon, mean in zip(fit.horizons, fit.means):
            lo, hi = entry["ci"][horizon]
            print(f"  T={horizon}: mean regret {mean:.3f} (95% CI {lo:.3f}..{hi:.3f})")
    return 0


def _cmd_verify(args):
    from .verify import run_verify

    return run_verify(quick=args.quick, seeds=args.seeds, trials=args.trials)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="crosslearn",
        description="cross-learning contextual bandit simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--timing", action="store_true",
                       help="write measured wall_ms (breaks byte determinism)")
    p_run.set_defaults(func=_cmd_run)

    p_ver = sub.add_parser("verify", help="run the verification suite")
    p_ver.add_argument("--quick", action="store_true")
    p_ver.add_argument("--seeds", type=int, default=100)
    p_ver.add_argument("--trials", type=int, default=100000)
    p_ver.set_defaults(func=_cmd_verify)

    p_sc = sub.add_parser("scaling", help="fit regret scaling from a results CSV")
    p_sc.add_argument("results")
    p_sc.add_argument("--algo", default=None)
    p_sc.set_defaults(func=_cmd_scaling)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
