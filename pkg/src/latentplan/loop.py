"""The training loop: collect with a planner, sample replay, fit the model, learn behaviours."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .behavior import Actor, Behavior, Critic
from .checkpoint import read_checkpoint, restore_segment, save_checkpoint
from .config import TrainConfig, parse_config, rng_stream
from .envs import ToyEnv, make_env
from .planner import Planner, PlanningModel
from .replay import Episode, ReplayBuffer
from .worldmodel import LearnedDynamics, WorldModel

log = logging.getLogger(__name__)


@dataclass
class MetricsRow:
    env_step: int
    episode_return: float
    J_O: float | None = None
    J_R: float | None = None
    KL: float | None = None
    actor_objective: float | None = None
    critic_loss: float | None = None
    plan_time_ms: float = 0.0
    wall_clock_s: float = 0.0

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_list(self) -> list:
        return ["" if v is None else repr(v) for v in (getattr(self, n) for n in self.header())]


class MetricsWriter:
    """Append-only CSV, flushed after every row."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(MetricsRow.header())
        self._last_step = -1

    def write(self, row: MetricsRow) -> None:
        if row.env_step < self._last_step:
            raise ValueError("metrics rows must have non-decreasing env_step")
        self._last_step = row.env_step
        self._csv.writerow(row.as_list())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class Agent:
    """World model, actor, critic and the configured decision-time planner."""

    def __init__(self, cfg: TrainConfig, obs_dim: int, action_dim: int):
        self.cfg = cfg
        init = rng_stream(cfg.seed, "model-init")
        self.world = WorldModel(obs_dim, action_dim, init, deter=cfg.deter, stoch=cfg.stoch,
                                hidden=cfg.hidden, embed=cfg.embed, beta=cfg.beta,
                                lr=cfg.model_lr, grad_clip=cfg.grad_clip)
        feat = self.world.feature_dim
        self.actor = Actor(feat, action_dim, init, hidden=cfg.hidden, lr=cfg.actor_lr,
                           grad_clip=cfg.grad_clip)
        self.critic = Critic(feat, init, hidden=cfg.hidden, lr=cfg.critic_lr, grad_clip=cfg.grad_clip)
        self.dynamics = LearnedDynamics(self.world)
        self.behavior = Behavior(self.dynamics, self.actor, self.critic, horizon=cfg.horizon,
                                 gamma=cfg.gamma, lam=cfg.lam, frozen_params=self.world.params)
        self.planner = Planner(PlanningModel(self.dynamics, self.actor, self.critic),
                               cfg.planner_config())
        self.call_log: list[str] = []

    def parameter_sets(self) -> dict[str, dm.ParameterSet]:
        return {"world": self.world.params, "actor": self.actor.params, "critic": self.critic.params}

    def save(self, path) -> None:
        save_checkpoint(path, self.cfg.to_text(), self.parameter_sets())

    @classmethod
    def load(cls, path) -> "Agent":
        text, segments = read_checkpoint(path)
        cfg = parse_config(text)
        env = make_env(cfg.env, episode_length=cfg.episode_length, action_repeat=cfg.action_repeat)
        agent = cls(cfg, env.spec.obs_dim, env.spec.action_dim)
        for name, params in agent.parameter_sets().items():
            restore_segment(params, *segments[name])
        return agent


@dataclass
class EpisodeResult:
    episode: Episode
    total_reward: float
    plan_time_ms: float
    actions: np.ndarray


def collect_episode(agent: Agent, env: ToyEnv, env_rng: np.random.Generator,
                    plan_rng: np.random.Generator, explore: bool = True,
                    random_actions: bool = False) -> EpisodeResult:
    """Filter observations with the posterior, plan an action per step, store transitions."""
    obs = env.reset(env_rng)
    A = env.spec.action_dim
    state = agent.world.initial_state(1)
    prev_action = np.zeros(A)
    transitions, plan_ms = [], []
    while not env.done:
        with dm.no_grad():
            state = agent.world.posterior_step(state, prev_action[None], obs[None])
        if random_actions:
            action = plan_rng.uniform(-1.0, 1.0, size=A)
        else:
            t0 = time.perf_counter()
            action = agent.planner.act(state.features().value[0], plan_rng, explore)
            plan_ms.append(1e3 * (time.perf_counter() - t0))
        tr = env.step(action)
        transitions.append(tr)
        obs, prev_action = tr.next_obs, tr.action
    episode = Episode.from_transitions(transitions, A)
    return EpisodeResult(episode, episode.total_reward, float(np.mean(plan_ms)) if plan_ms else 0.0,
                         np.array([t.action for t in transitions]))


def train_iteration(agent: Agent, buffer: ReplayBuffer, rng: np.random.Generator,
                    noise_rng: np.random.Generator | None = None) -> dict:
    """All model updates first, then behaviour updates on the frozen model.

    ``rng`` drives replay sampling; ``noise_rng`` (default ``rng``) drives latent
    and policy noise.
    """
    cfg = agent.cfg
    noise_rng = rng if noise_rng is None else noise_rng
    model_rows, behavior_rows = [], []
    for _ in range(cfg.model_updates):
        batch = buffer.sample(cfg.batch_size, cfg.seq_len, rng)
        metrics, _ = agent.world.train_batch(batch, noise_rng)
        agent.call_log.append("model")
        model_rows.append(metrics)
    for _ in range(cfg.behavior_updates):
        batch = buffer.sample(cfg.batch_size, cfg.seq_len, rng)
        with dm.no_grad():
            posts, _ = agent.world.observe(batch, noise_rng)
        start = np.concatenate([s.features().value for s in posts], axis=0)
        behavior_rows.append(agent.behavior.train_step(start, noise_rng))
        agent.call_log.append("behavior")
    return _summarise(model_rows, behavior_rows)


def evaluate(agent: Agent, env: ToyEnv, episodes: int, rng: np.random.Generator) -> list[float]:
    """Noise-free returns using the agent's configured planner."""
    return [collect_episode(agent, env, rng, rng, explore=False).total_reward for _ in range(episodes)]


def random_baseline(env: ToyEnv, episodes: int, rng: np.random.Generator) -> float:
    returns = []
    for _ in range(episodes):
        env.reset(rng)
        total = 0.0
        while not env.done:
            total += env.step(rng.uniform(-1.0, 1.0, size=env.spec.action_dim)).reward
        returns.append(total)
    return float(np.mean(returns))


def run_experiment(cfg: TrainConfig, out_dir) -> dict:
    """Seed episodes, then alternate collection and training until ``total_steps``.

    Writes ``metrics.csv`` and ``checkpoint.lpln`` (plus periodic checkpoints)
    into ``out_dir`` and returns a summary including final evaluation returns.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env, episode_length=cfg.episode_length, action_repeat=cfg.action_repeat)
    env_rng, plan_rng = rng_stream(cfg.seed, "env"), rng_stream(cfg.seed, "planner")
    replay_rng, train_rng = rng_stream(cfg.seed, "replay"), rng_stream(cfg.seed, "train")
    agent = Agent(cfg, env.spec.obs_dim, env.spec.action_dim)
    buffer = ReplayBuffer(cfg.replay_capacity)
    writer = MetricsWriter(out / "metrics.csv")
    start = time.perf_counter()
    env_steps, episodes = 0, 0
    train_metrics: dict = {}
    try:
        while env_steps < cfg.total_steps:
            seeding = episodes < cfg.seed_episodes
            result = collect_episode(agent, env, env_rng, plan_rng, explore=True, random_actions=seeding)
            buffer.add(result.episode)
            env_steps += cfg.episode_length
            episodes += 1
            if (not seeding and episodes % cfg.train_every == 0) or episodes == cfg.seed_episodes:
                train_metrics = train_iteration(agent, buffer, replay_rng, train_rng)
            row = MetricsRow(env_steps, result.total_reward, **train_metrics)
            if cfg.log_timing:
                row.plan_time_ms = result.plan_time_ms
                row.wall_clock_s = time.perf_counter() - start
            writer.write(row)
            if cfg.checkpoint_every and episodes % cfg.checkpoint_every == 0:
                agent.save(out / f"checkpoint_{env_steps:08d}.lpln")
    finally:
        writer.close()
    agent.save(out / "checkpoint.lpln")
    eval_rng = rng_stream(cfg.seed, "eval")
    returns = evaluate(agent, env, cfg.eval_episodes, eval_rng)
    return {"agent": agent, "eval_returns": returns, "env_steps": env_steps, "episodes": episodes,
            "metrics_path": out / "metrics.csv", "checkpoint_path": out / "checkpoint.lpln"}


def _summarise(model_rows, behavior_rows) -> dict:
    def avg(rows, key):
        vals = [r[key] for r in rows if key in r]
        return float(np.mean(vals)) if vals else None

    return {"J_O": avg(model_rows, "J_O"), "J_R": avg(model_rows, "J_R"), "KL": avg(model_rows, "KL"),
            "actor_objective": avg(behavior_rows, "actor_objective"),
            "critic_loss": avg(behavior_rows, "critic_loss")}
