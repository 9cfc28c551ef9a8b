"""Low-dimensional continuous-control environments with rewards in [0, 1].

Physics is written once, on batched Tensors, so that the environments and the
oracle adapter share the exact same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffmath as dm


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    state_dim: int
    episode_length: int = 200
    action_repeat: int = 2
    dt: float = 0.05

    def __post_init__(self):
        if self.episode_length <= 0 or self.action_repeat <= 0:
            raise ValueError("episode_length and action_repeat must be positive")

    @property
    def decisions(self) -> int:
        return self.episode_length // self.action_repeat


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    step_index: int


class ToyEnv:
    """Base class. Subclasses define ``physics``, ``reward_of``, ``observe`` and ``sample_state``."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state: np.ndarray | None = None
        self.steps = 0

    # batched pure dynamics; ``state`` and ``action`` are Tensors of shape (n, .)
    def physics(self, state, action):
        raise NotImplementedError

    def reward_of(self, state):
        raise NotImplementedError

    def observe(self, state):
        raise NotImplementedError

    def sample_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition(self, state, action):
        """Action-repeated step: rewards of the inner steps are averaged into [0, 1]."""
        action = dm.clip(action, -1.0, 1.0)
        total = None
        for _ in range(self.spec.action_repeat):
            state = self.physics(state, action)
            r = self.reward_of(state)
            total = r if total is None else total + r
        return state, total * (1.0 / self.spec.action_repeat)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = np.asarray(self.sample_state(rng), dtype=np.float64)
        self.steps = 0
        return self.current_obs()

    def current_obs(self) -> np.ndarray:
        with dm.no_grad():
            return self.observe(dm.Tensor(self.state[None])).value[0].copy()

    def set_state(self, state) -> None:
        self.state = np.array(state, dtype=np.float64)

    @property
    def done(self) -> bool:
        return self.steps >= self.spec.decisions

    def step(self, action) -> Transition:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        if self.done:
            raise RuntimeError("step() after episode termination")
        action = np.clip(np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim), -1, 1)
        obs = self.current_obs()
        with dm.no_grad():
            nxt, reward = self.transition(dm.Tensor(self.state[None]), dm.Tensor(action[None]))
        self.state = nxt.value[0].copy()
        self.steps += 1
        return Transition(obs, action, float(reward.value[0]), self.current_obs(), self.steps)


class PointMass2D(ToyEnv):
    """Frictionless point mass pushed by a bounded force toward the origin.

    State (x, y, vx, vy); reward exp(-|position - goal|^2).
    """

    max_accel = 2.0
    start_range = 1.5

    def __init__(self, episode_length: int = 200, action_repeat: int = 2, dt: float = 0.05):
        super().__init__(EnvSpec("pointmass", 4, 2, 4, episode_length, action_repeat, dt))
        self.goal = np.zeros(2)

    def physics(self, state, action):
        dt = self.spec.dt
        vel = state[:, 2:] + (dt * self.max_accel) * action
        pos = state[:, :2] + dt * vel
        return dm.concat([pos, vel], axis=-1)

    def reward_of(self, state):
        return dm.exp(-dm.sum(dm.square(state[:, :2] - self.goal), axis=-1))

    def observe(self, state):
        return dm.as_tensor(state)

    def sample_state(self, rng):
        pos = rng.uniform(-self.start_range, self.start_range, size=2)
        return np.concatenate([pos, np.zeros(2)])


class PendulumSwingUp(ToyEnv):
    """Damped torque-limited pendulum; angle 0 is upright.

    State (theta, omega); observation (cos theta, sin theta, omega);
    reward (1 + cos theta) / 2.
    """

    gravity = 9.81
    damping = 1.0
    max_torque = 6.0
    max_speed = 12.0

    def __init__(self, episode_length: int = 200, action_repeat: int = 2, dt: float = 0.05):
        super().__init__(EnvSpec("pendulum", 3, 1, 2, episode_length, action_repeat, dt))

    def physics(self, state, action):
        dt = self.spec.dt
        theta, omega = state[:, 0:1], state[:, 1:2]
        accel = self.gravity * dm.sin(theta) - self.damping * omega + self.max_torque * action
        omega = dm.clip(omega + dt * accel, -self.max_speed, self.max_speed)
        return dm.concat([theta + dt * omega, omega], axis=-1)

    def reward_of(self, state):
        return 0.5 * (1.0 + dm.cos(state[:, 0]))

    def observe(self, state):
        state = dm.as_tensor(state)
        theta = state[:, 0:1]
        return dm.concat([dm.cos(theta), dm.sin(theta), state[:, 1:2]], axis=-1)

    def sample_state(self, rng):
        return np.array([rng.uniform(-math.pi, math.pi), 0.0])


ENVIRONMENTS = {"pointmass": PointMass2D, "pendulum": PendulumSwingUp}


def make_env(name: str, **kwargs) -> ToyEnv:
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


class OracleLatentAdapter:
    """Ground-truth dynamics of ``env`` behind the latent-model interface.

    The adapter's state is the environment's physical state; ``features``
    maps it to the observation vector that policies and critics consume.
    """

    def __init__(self, env: ToyEnv, critic=None):
        self.env = env
        self.critic = critic
        self.params = None

    @property
    def state_dim(self) -> int:
        return self.env.spec.state_dim

    @property
    def action_dim(self) -> int:
        return self.env.spec.action_dim

    def features(self, state):
        return self.env.observe(dm.as_tensor(state))

    def step(self, state, action, rng=None):
        return self.env.transition(dm.as_tensor(state), dm.as_tensor(action))

    def prior_step(self, state, action):
        return self.step(state, action)[0]

    def decode_reward(self, state):
        return self.env.reward_of(dm.as_tensor(state))

    def value(self, state):
        if self.critic is None:
            return dm.Tensor(np.zeros(dm.as_tensor(state).shape[0]))
        return self.critic(self.features(state))
