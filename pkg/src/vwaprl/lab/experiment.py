"""Experiment orchestration: training runs, out-of-sample tests and file outputs.

Layout of one run, under ``<out>/<env>/<algorithm>/``::

    seed_<s>/training_curve.csv   one row per epoch
    seed_<s>/policy_mse.csv       one row per epoch
    seed_<s>/checkpoints/*.npz    periodic and final networks
    seed_<s>/results.json         out-of-sample comparison against TWAP
    seed_<s>/heatmap.csv          policy density over (t, action); stochastic policies only
    summary.json                  aggregate over the seeds that completed
    errors.json                   per-seed failures, only when some seed failed
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..closed_form import ClosedForm
from ..model_core import Environment, RngStreams, draw_market_noise
from ..trainers.loop import ALGORITHMS, STOCHASTIC, policy_mse, train
from .config import BASELINE_POLICIES, ExperimentConfig
from .policies import PolicyHandle, actor_policy, closed_form_policy, save_actor, twap_policy

__all__ = [
    "DeltaPnlUndefined",
    "delta_pnl",
    "EvalStats",
    "evaluate_policy",
    "test_streams",
    "ComparisonReport",
    "policy_heatmap",
    "run_seed",
    "run_experiment",
    "summarize",
    "ExperimentOutcome",
    "UNITS",
]

UNITS = {
    "mean_return": "currency units per liquidation (running rewards + terminal reward, no entropy)",
    "std_return": "currency units per liquidation",
    "mean_terminal_cash": "currency units (x_T + q_T (s_T - alpha q_T))",
    "delta_pnl": "dimensionless fraction of the TWAP average return",
    "wall_clock": "seconds",
}

HEATMAP_POINTS = 201
HEATMAP_WIDTH = 6.0


class DeltaPnlUndefined(ZeroDivisionError):
    pass


def delta_pnl(agent, twap):
    """Relative improvement over TWAP: ``(agent - twap) / twap``."""
    twap = np.asarray(twap, dtype=float)
    if np.any(twap == 0):
        raise DeltaPnlUndefined("TWAP reference value is zero")
    out = (np.asarray(agent, dtype=float) - twap) / twap
    return float(out) if out.ndim == 0 else out


@dataclass
class EvalStats:
    mean_return: float
    std_return: float
    returns: list
    mean_terminal_cash: float
    std_terminal_cash: float
    terminal_cash: list

    @property
    def n(self) -> int:
        return len(self.returns)

    @property
    def standard_error(self) -> float:
        return self.std_return / math.sqrt(self.n) if self.n > 1 else 0.0


def test_streams(seed: int) -> RngStreams:
    """Randomness for out-of-sample tests, disjoint from every stream used in training."""
    # training spawns four children of SeedSequence(seed); the fifth is unused there
    return RngStreams(np.random.SeedSequence(seed).spawn(5)[4])


def _draw(env: Environment, n: int, seed):
    streams = seed if isinstance(seed, RngStreams) else test_streams(seed)
    noise = draw_market_noise(streams, env.market, env.grid, n)
    eps = streams.policy.standard_normal((n, env.grid.n_steps))
    return noise, eps


def evaluate_policy(policy: PolicyHandle, n_episodes: int, seed=0, draws=None):
    """Statistics of total return and effective terminal cash over ``n_episodes``.

    The same ``seed`` gives the same market paths for every policy, so two
    evaluations with one seed form a paired comparison.  Returns
    ``(stats, paths)``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = policy.env
    noise, eps = draws if draws is not None else _draw(env, n_episodes, seed)
    paths = policy.paths(noise, eps)
    S, X, Q = paths[0], paths[1], paths[2]
    cash = X[:, -1] + Q[:, -1] * (S[:, -1] - env.market.alpha * Q[:, -1])
    rets = env.path_returns(paths)
    ddof = 1 if n_episodes > 1 else 0
    stats = EvalStats(float(rets.mean()), float(rets.std(ddof=ddof)), rets.tolist(),
                      float(cash.mean()), float(cash.std(ddof=ddof)), cash.tolist())
    return stats, paths


@dataclass
class ComparisonReport:
    """Out-of-sample comparison of one policy against TWAP on paired episodes."""

    env: str
    algorithm: str
    seed: int
    n_episodes: int
    mean_return: float
    std_return: float
    twap_mean_return: float
    twap_std_return: float
    delta_pnl: float
    delta_pnl_std: float
    mean_terminal_cash: float
    twap_mean_terminal_cash: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, env_name, algorithm, seed, agent: EvalStats, twap: EvalStats, extra=None):
        per_episode = delta_pnl(np.array(agent.returns), np.array(twap.returns))
        return cls(env_name, algorithm, int(seed), agent.n, agent.mean_return, agent.std_return,
                   twap.mean_return, twap.std_return, delta_pnl(agent.mean_return, twap.mean_return),
                   float(np.std(per_episode, ddof=1)) if agent.n > 1 else 0.0,
                   agent.mean_terminal_cash, twap.mean_terminal_cash, dict(extra or {}))

    def to_dict(self) -> dict:
        return {"units": UNITS, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ComparisonReport":
        data = {k: v for k, v in data.items() if k != "units"}
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ComparisonReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def policy_heatmap(policy: PolicyHandle, paths, points: int = HEATMAP_POINTS, width: float = HEATMAP_WIDTH):
    """Density of the action distribution at the average visited state of each node.

    Each time slice uses its own action axis, mean +/- ``width`` std.  Returns
    rows ``(t, action, density)``; empty for deterministic policies.
    """
    if not policy.stochastic:
        return []
    env = policy.env
    S, X, Q, MU = (a[:, :-1].mean(axis=0) for a in paths[:4])
    t = env.grid.times()[:-1]
    mean, std = policy.mean_std(np.column_stack([t, S, X, Q, MU]))
    rows = []
    u = np.linspace(-width, width, points)
    for ti, m, s in zip(t, mean, std):
        v = m + s * u
        dens = np.exp(-0.5 * u * u) / (s * math.sqrt(2.0 * math.pi))
        rows.extend(zip(np.full(points, ti), v, dens))
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _baseline_handle(env, algorithm):
    return twap_policy(env) if algorithm == "twap" else closed_form_policy(env)


def run_seed(cfg: ExperimentConfig, algorithm: str, seed: int, out_dir) -> ComparisonReport:
    """Train (when the algorithm learns) and test one seed, writing its files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = cfg.env
    extra = {}
    tick = time.perf_counter()
    if algorithm in BASELINE_POLICIES:
        handle = _baseline_handle(env, algorithm)
    else:
        tcfg = cfg.with_algorithm(algorithm).train
        tcfg = dataclasses.replace(tcfg, seed=seed)
        ck_dir = out_dir / "checkpoints"
        ck_dir.mkdir(exist_ok=True)
        stochastic = STOCHASTIC[algorithm]
        meta = {"critic_value_scale": tcfg.value_scale, "critic_baseline": tcfg.critic_baseline, "seed": seed}

        def checkpoint(rep, res):
            if cfg.checkpoint_every and (rep.epoch + 1) % cfg.checkpoint_every == 0:
                save_actor(ck_dir / f"epoch_{rep.epoch + 1:05d}.npz", res.actor, res.critic.net,
                           algorithm, stochastic, {**meta, "epochs": rep.epoch + 1})

        res = train(env, tcfg, epoch_hook=checkpoint)
        reps = res.reports
        _write_csv(out_dir / "training_curve.csv",
                   ["epoch", "mean_return", "min_return", "max_return", "critic_loss", "policy_mse", "aborted"],
                   [(r.epoch, r.mean_return, r.min_return, r.max_return, r.critic_loss, r.policy_mse, int(r.aborted))
                    for r in reps])
        _write_csv(out_dir / "policy_mse.csv", ["epoch", "policy_mse"], [(r.epoch, r.policy_mse) for r in reps])
        save_actor(ck_dir / "final.npz", res.actor, res.critic.net, algorithm, stochastic,
                   {**meta, "epochs": tcfg.epochs})
        handle = actor_policy(env, res.actor, stochastic, algorithm)
        extra = {
            "train_config": tcfg.to_dict(),
            "initial_policy_mse": res.initial_policy_mse,
            "aborted_epochs": sum(r.aborted for r in reps),
            "b_hat": res.b_hat,
            "k_hat": res.k_hat,
        }
    draws = _draw(env, cfg.eval_final, seed)
    agent, paths = evaluate_policy(handle, cfg.eval_final, draws=draws)
    twap, _ = evaluate_policy(twap_policy(env), cfg.eval_final, draws=draws)
    optimum, _ = evaluate_policy(closed_form_policy(env), cfg.eval_final, draws=draws)
    extra["closed_form_mean_return"] = optimum.mean_return
    if handle.actor is not None:
        extra["final_policy_mse"] = policy_mse(env, handle.actor, paths, ClosedForm(env.market, env.penalty, env.grid))
    extra["wall_clock"] = time.perf_counter() - tick
    report = ComparisonReport.build(cfg.name, algorithm, seed, agent, twap, extra)
    report.save(out_dir / "results.json")
    rows = policy_heatmap(handle, paths)
    if rows:
        _write_csv(out_dir / "heatmap.csv", ["t", "action", "density"], rows)
    return report


def _seed_job(args):
    cfg, algorithm, seed, out_dir = args
    try:
        return seed, run_seed(cfg, algorithm, seed, out_dir).to_dict(), None
    except Exception as exc:  # recorded per seed; the other seeds carry on
        return seed, None, {"seed": seed, "error": type(exc).__name__, "message": str(exc),
                            "traceback": traceback.format_exc()}


def summarize(reports: list) -> dict:
    """Aggregate per-seed reports: means and spreads across seeds."""
    if not reports:
        return {"n_seeds": 0}
    col = lambda key: np.array([getattr(r, key) for r in reports], dtype=float)
    out = {"n_seeds": len(reports), "seeds": [r.seed for r in reports], "units": UNITS}
    for key in ("mean_return", "delta_pnl", "twap_mean_return", "mean_terminal_cash"):
        vals = col(key)
        out[key] = float(vals.mean())
        out[key + "_seed_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    out["std_return"] = float(col("std_return").mean())
    ratios = [r.extra["final_policy_mse"] / r.extra["initial_policy_mse"] for r in reports
              if r.extra.get("initial_policy_mse")]
    if ratios:
        out["policy_mse_ratio"] = ratios
    return out


@dataclass
class ExperimentOutcome:
    algorithm: str
    out_dir: Path
    reports: list
    errors: list

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def summary(self) -> dict:
        return summarize(self.reports)


def run_experiment(cfg: ExperimentConfig, algorithm: str, jobs: int = 1, progress=None) -> ExperimentOutcome:
    """All seeds of one algorithm; seeds run in parallel when ``jobs > 1``."""
    if algorithm not in ALGORITHMS and algorithm not in BASELINE_POLICIES:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    root = Path(cfg.out) / cfg.name / algorithm
    root.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, algorithm, s, root / f"seed_{s}") for s in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_seed_job, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_seed_job(t))
            if progress:
                progress(results[-1])
    reports = [ComparisonReport.from_dict(r) for _, r, _ in results if r is not None]
    errors = [e for _, _, e in results if e is not None]
    outcome = ExperimentOutcome(algorithm, root, reports, errors)
    (root / "summary.json").write_text(json.dumps(outcome.summary, indent=2), encoding="utf-8")
    err_path = root / "errors.json"
    if errors:
        err_path.write_text(json.dumps(errors, indent=2), encoding="utf-8")
    elif err_path.exists():
        err_path.unlink()
    return outcome
