"""Command-line entry point: ``latentplan {train,eval,plan-bench,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config, rng_stream
from .envs import make_env
from .loop import Agent, evaluate, read_metrics, run_experiment
from .planner import MODES, PlannerTrace


def _train(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed, mode=args.mode)
    cfg.validate()
    out = Path(args.out or f"runs/{cfg.env}-{cfg.mode}-seed{cfg.seed}")
    result = run_experiment(cfg, out)
    print(json.dumps({"env_steps": result["env_steps"], "episodes": result["episodes"],
                      "eval_mean_return": float(np.mean(result["eval_returns"])),
                      "metrics": str(result["metrics_path"]),
                      "checkpoint": str(result["checkpoint_path"])}))
    return 0


def _eval(args) -> int:
    agent = Agent.load(args.checkpoint)
    cfg = agent.cfg
    env = make_env(cfg.env, episode_length=cfg.episode_length, action_repeat=cfg.action_repeat)
    returns = evaluate(agent, env, args.episodes, rng_stream(args.seed, "eval"))
    print(json.dumps({"episodes": args.episodes, "mean_return": float(np.mean(returns)),
                      "returns": returns}))
    return 0


def _plan_bench(args) -> int:
    from .bench import plan_bench, train_oracle_behavior

    trace = PlannerTrace() if args.trace else None
    env = make_env(args.env)
    oracle = train_oracle_behavior(env, args.seed, iterations=args.train_iterations)
    result = plan_bench(args.mode, args.env, episodes=args.episodes, seed=args.seed,
                        oracle=oracle, trace=trace)
    if trace is not None:
        trace.write(args.trace)
    print(json.dumps(result))
    return 0


def _plot(args) -> int:
    """Write one ``<metric>.dat`` file of ``env_step value`` pairs per metric column."""
    rows = read_metrics(args.metrics)
    out = Path(args.out or Path(args.metrics).with_suffix(""))
    out.mkdir(parents=True, exist_ok=True)
    if not rows:
        return 0
    for key in rows[0]:
        if key == "env_step":
            continue
        lines = [f"{r['env_step']} {r[key]}" for r in rows if r[key] != ""]
        (out / f"{key}.dat").write_text("\n".join(lines) + ("\n" if lines else ""))
    print(str(out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentplan")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", help="output directory for metrics and checkpoints")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_eval)

    p = sub.add_parser("plan-bench", help="benchmark a planner on ground-truth dynamics")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--env", choices=("pointmass", "pendulum"), required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-iterations", type=int, default=150,
                   help="actor-critic updates on the true dynamics before planning")
    p.add_argument("--trace", help="write a per-simulation search trace here")
    p.set_defaults(func=_plan_bench)

    p = sub.add_parser("plot", help="split a metrics CSV into per-metric data files")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
