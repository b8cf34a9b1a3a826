"""Command line entry point: ``vwaprl <subcommand> [options]``.

Subcommands:
  simulate      roll out a policy and write one CSV per episode
  train         train an algorithm over the configured seeds
  evaluate      out-of-sample test of a policy against TWAP
  estimate      estimate the impact constants b and k from simulated episodes
  compare       train/test several algorithms and tabulate them against TWAP
  policy-table  closed-form coefficients and optimal speed parameters per node
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..closed_form import ClosedForm
from ..estimators import EstimationUndefined, estimate_b, estimate_k
from ..trainers.loop import ALGORITHMS
from .config import BASELINE_POLICIES, ConfigError, load_config
from .experiment import ComparisonReport, _draw, evaluate_policy, run_experiment
from .policies import closed_form_policy, load_actor, twap_policy

log = logging.getLogger("vwaprl")

ALGO_CHOICES = (*ALGORITHMS, *BASELINE_POLICIES)
DEFAULT_COMPARE = ("adp", "ml-ac", "mo-ac", "closed-form")


def _common(p: argparse.ArgumentParser, algo_required=False, algo_default=None):
    p.add_argument("--config", help="YAML experiment file (overrides --env)")
    p.add_argument("--env", default="env1", help="preset name (env1, env2) or YAML path")
    p.add_argument("--algo", choices=ALGO_CHOICES, required=algo_required, default=algo_default)
    p.add_argument("--seed", type=int, action="append", help="seed; repeat for several (default: config list)")
    p.add_argument("--epochs", type=int, help="override the number of training epochs")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vwaprl", description="Optimal execution lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll out a policy and write episode CSVs")
    _common(p, algo_default="twap")
    p.add_argument("--checkpoint", help="actor checkpoint to simulate instead of --algo")
    p.add_argument("--episodes", type=int, default=1)

    p = sub.add_parser("train", help="train one algorithm over the configured seeds")
    _common(p, algo_required=True)
    p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")

    p = sub.add_parser("evaluate", help="out-of-sample test against TWAP")
    _common(p, algo_default="closed-form")
    p.add_argument("--checkpoint", help="actor checkpoint to evaluate instead of --algo")
    p.add_argument("--episodes", type=int, help="test episodes (default: config eval_final)")

    p = sub.add_parser("estimate", help="estimate b and k from simulated episodes")
    _common(p, algo_default="twap")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--csv", nargs="*", default=(), help="episode CSVs to use instead of simulating")

    p = sub.add_parser("compare", help="tabulate several algorithms against TWAP")
    _common(p)
    p.add_argument("--algos", nargs="+", choices=ALGO_CHOICES, default=list(DEFAULT_COMPARE))
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("policy-table", help="closed-form coefficients per time node")
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config or args.env)
    return cfg.with_overrides(seeds=args.seed, epochs=args.epochs, out=args.out)


def _handle(args, env):
    if getattr(args, "checkpoint", None):
        return load_actor(args.checkpoint, env)
    if args.algo == "twap":
        return twap_policy(env)
    if args.algo == "closed-form":
        return closed_form_policy(env)
    raise ConfigError(f"--algo {args.algo}: needs --checkpoint (trained policies are not built in)")


def _print(obj):
    print(json.dumps(obj, indent=2))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    env, seed = cfg.env, cfg.seeds[0]
    handle = _handle(args, env)
    paths = handle.paths(*_draw(env, args.episodes, seed))
    out = Path(args.out or "episodes")
    out.mkdir(parents=True, exist_ok=True)
    trajs = env.trajectories_from_paths(paths, handle.stochastic)
    for e, tr in enumerate(trajs):
        tr.to_csv(out / f"episode_{e:04d}.csv")
    rets = env.path_returns(paths)
    _print({"policy": handle.name, "episodes": len(trajs), "out": str(out),
            "mean_return": float(rets.mean()), "returns": rets.tolist()})
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)

    def progress(res):
        seed, rep, err = res
        log.info("seed %s: %s", seed, "failed: " + err["message"] if err else f"dPnL {rep['delta_pnl']:.4f}")

    outcome = run_experiment(cfg, args.algo, jobs=args.jobs, progress=progress)
    _print({"algorithm": args.algo, "out": str(outcome.out_dir), "summary": outcome.summary,
            "errors": [{k: e[k] for k in ("seed", "error", "message")} for e in outcome.errors]})
    return 0 if outcome.ok else 1


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    env = cfg.env
    handle = _handle(args, env)
    n = args.episodes or cfg.eval_final
    reports = []
    for seed in cfg.seeds:
        draws = _draw(env, n, seed)
        agent, _ = evaluate_policy(handle, n, draws=draws)
        twap, _ = evaluate_policy(twap_policy(env), n, draws=draws)
        reports.append(ComparisonReport.build(cfg.name, handle.name, seed, agent, twap).to_dict())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "evaluation.json").write_text(json.dumps(reports, indent=2), encoding="utf-8")
    _print(reports)
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    env = cfg.env
    if args.csv:
        from ..model_core import Trajectory
        trajs = [Trajectory.from_csv(p, env.market, env.grid) for p in args.csv]
        source = "csv"
    else:
        handle = _handle(args, env)
        trajs = env.trajectories_from_paths(handle.paths(*_draw(env, args.episodes, cfg.seeds[0])), handle.stochastic)
        source = handle.name
    v = np.concatenate([t.v for t in trajs])
    out = {"source": source, "episodes": len(trajs), "steps": int(v.size),
           "sum_v2_h": float(np.sum(v * v) * env.h), "mean_v": float(v.mean()),
           "true_b": env.market.b, "true_k": env.market.k}
    status = 0
    for name, fn in (("b_hat", estimate_b), ("k_hat", estimate_k)):
        try:
            out[name] = fn(trajs)
        except EstimationUndefined as exc:
            out[name], status = None, 1
            out[name + "_error"] = str(exc)
    _print(out)
    return status


def cmd_compare(args) -> int:
    cfg = _config(args)
    rows, ok = [], True
    for algo in ["twap", *[a for a in args.algos if a != "twap"]]:
        outcome = run_experiment(cfg, algo, jobs=args.jobs)
        ok &= outcome.ok
        s = outcome.summary
        rows.append({"algorithm": algo, **{k: s.get(k) for k in (
            "n_seeds", "mean_return", "mean_return_seed_std", "std_return", "delta_pnl", "delta_pnl_seed_std")},
            "failed_seeds": [e["seed"] for e in outcome.errors]})
    path = Path(cfg.out) / cfg.name / "comparison.json"
    path.write_text(json.dumps(rows, indent=2), encoding="utf-8")
    print(f"{'algorithm':<12} {'seeds':>5} {'avg return':>12} {'std':>9} {'dPnL':>9}")
    for r in rows:
        if not r["n_seeds"]:
            print(f"{r['algorithm']:<12} {0:>5}  (all seeds failed)")
            continue
        print(f"{r['algorithm']:<12} {r['n_seeds']:>5} {r['mean_return']:>12.4f} {r['std_return']:>9.4f} "
              f"{r['delta_pnl']:>9.4f}")
    print(f"written {path}")
    return 0 if ok else 1


def cmd_policy_table(args) -> int:
    cfg = _config(args)
    env = cfg.env
    cf = ClosedForm(env.market, env.penalty, env.grid)
    t = env.grid.times()[:-1]
    coef = cf.affine_coefficients(True)
    lines = ["t_index,t,w2,l1,l0,speed_const,speed_per_q,speed_per_mu,exploration_std"]
    for i, ti in enumerate(t):
        lines.append(",".join([str(i)] + [repr(float(x)) for x in (ti, cf.w2(ti), cf.l1(ti), cf.l0(ti), *coef[i])]))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "policy-table": cmd_policy_table,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
