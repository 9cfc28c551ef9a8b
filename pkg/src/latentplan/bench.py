"""Planner benchmarks on ground-truth dynamics.

A policy and critic are first trained by imagination through the environment's
own differentiable physics; the planners then act on the true dynamics through
:class:`OracleLatentAdapter`, which isolates search quality from model error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .behavior import Actor, Behavior, Critic
from .config import rng_stream
from .envs import OracleLatentAdapter, ToyEnv, make_env
from .planner import Planner, PlannerConfig, PlanningModel
from .loop import random_baseline


def broad_start_states(env: ToyEnv, n: int, rng: np.random.Generator) -> np.ndarray:
    """Physical states covering the region a policy may visit, not just reset states."""
    if env.spec.name == "pendulum":
        return np.stack([rng.uniform(-math.pi, math.pi, n), rng.uniform(-8.0, 8.0, n)], axis=1)
    pos = rng.uniform(-2.0, 2.0, (n, 2))
    vel = rng.uniform(-1.5, 1.5, (n, 2))
    return np.concatenate([pos, vel], axis=1)


@dataclass
class OracleBehavior:
    env: ToyEnv
    actor: Actor
    critic: Critic
    history: list[dict]

    def planning_model(self) -> PlanningModel:
        return PlanningModel(OracleLatentAdapter(self.env), self.actor, self.critic)


def train_oracle_behavior(env: ToyEnv, seed: int = 0, *, iterations: int = 150, batch: int = 256,
                          horizon: int = 15, lr: float = 1e-3, hidden: int = 64,
                          gamma: float = 0.99, lam: float = 0.95) -> OracleBehavior:
    """Actor-critic learning by backpropagating through the true physics."""
    init = rng_stream(seed, "oracle-init")
    rng = rng_stream(seed, "oracle-train")
    dyn = OracleLatentAdapter(env)
    obs_dim, act_dim = env.spec.obs_dim, env.spec.action_dim
    actor = Actor(obs_dim, act_dim, init, hidden=hidden, lr=lr)
    critic = Critic(obs_dim, init, hidden=hidden, lr=lr)
    behavior = Behavior(dyn, actor, critic, horizon=horizon, gamma=gamma, lam=lam)
    history = []
    for _ in range(iterations):
        history.append(behavior.train_step(broad_start_states(env, batch, rng), rng))
    return OracleBehavior(env, actor, critic, history)


def run_planner_episodes(model: PlanningModel, env: ToyEnv, cfg: PlannerConfig, episodes: int,
                         seed: int = 0, trace=None) -> tuple[list[float], list[float]]:
    """Noise-free episodes on the true state; returns (episode returns, per-decision ms)."""
    planner = Planner(model, cfg, trace)
    env_rng, plan_rng = rng_stream(seed, "bench-env"), rng_stream(seed, "bench-plan")
    returns, times = [], []
    for _ in range(episodes):
        env.reset(env_rng)
        total = 0.0
        while not env.done:
            t0 = time.perf_counter()
            action = planner.act(env.state, plan_rng, explore=False)
            times.append(1e3 * (time.perf_counter() - t0))
            total += env.step(action).reward
        returns.append(total)
    return returns, times


def plan_bench(mode: str, env_name: str, episodes: int = 20, seed: int = 0,
               oracle: OracleBehavior | None = None, trace=None, **planner_overrides) -> dict:
    env = make_env(env_name)
    if oracle is None:
        oracle = train_oracle_behavior(env, seed)
    cfg = PlannerConfig(mode=mode, **planner_overrides)
    returns, times = run_planner_episodes(oracle.planning_model(), env, cfg, episodes, seed, trace)
    baseline = random_baseline(make_env(env_name), episodes, rng_stream(seed, "random-baseline"))
    return {"mode": mode, "env": env_name, "episodes": episodes,
            "mean_return": float(np.mean(returns)), "returns": returns,
            "random_return": baseline, "plan_time_ms": float(np.mean(times))}
