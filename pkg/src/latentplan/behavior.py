"""Actor-critic trained on imagined latent trajectories."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .nets import MLP

log = logging.getLogger(__name__)


class Actor:
    """Tanh-squashed diagonal Gaussian policy."""

    def __init__(self, feature_dim: int, action_dim: int, rng: np.random.Generator, *,
                 hidden: int = 64, layers: int = 2, lr: float = 8e-5, grad_clip: float = 100.0):
        self.action_dim = action_dim
        self.lr, self.grad_clip = lr, grad_clip
        self.params = dm.ParameterSet()
        self.net = MLP(self.params, "actor", feature_dim, hidden, 2 * action_dim, layers, rng)

    def distribution(self, feat) -> tuple[dm.Tensor, dm.Tensor]:
        out = self.net(feat)
        return out[:, : self.action_dim], dm.positive_std(out[:, self.action_dim:])

    def sample(self, feat, noise=None) -> dm.Tensor:
        """``tanh(mean + std * noise)``; ``noise=None`` gives the mode ``tanh(mean)``."""
        mean, std = self.distribution(feat)
        if noise is None:
            return dm.tanh(mean)
        return dm.tanh(dm.reparam_sample(mean, std, noise))

    def mode(self, feat) -> dm.Tensor:
        return self.sample(feat, None)


class Critic:
    def __init__(self, feature_dim: int, rng: np.random.Generator, *,
                 hidden: int = 64, layers: int = 2, lr: float = 8e-5, grad_clip: float = 100.0):
        self.lr, self.grad_clip = lr, grad_clip
        self.params = dm.ParameterSet()
        self.net = MLP(self.params, "critic", feature_dim, hidden, 1, layers, rng)

    def __call__(self, feat) -> dm.Tensor:
        return self.net(feat)[:, 0]


@dataclass
class ImaginedTrajectory:
    """``states`` s_0..s_H, ``actions`` a_0..a_{H-1}, ``rewards`` r_0..r_{H-1}
    (r_n earned by the step s_n -> s_{n+1}) and critic ``values`` v(s_0)..v(s_H)."""

    states: list
    actions: list
    rewards: list
    values: list
    gamma: float
    lam: float
    features: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.rewards)

    def reward_array(self) -> np.ndarray:
        return np.array([dm.as_tensor(r).value for r in self.rewards])

    def value_array(self) -> np.ndarray:
        return np.array([dm.as_tensor(v).value for v in self.values])


def k_step_value(rewards, values, tau: int, k: int, gamma: float):
    """Bootstrapped k-step return from s_tau, truncated at the horizon."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    H = len(rewards)
    if len(values) != H + 1:
        raise ValueError(f"expected {H + 1} values for horizon {H}, got {len(values)}")
    if not 0 <= tau <= H or k < 1:
        raise ValueError(f"out of range: tau={tau}, k={k}, horizon={H}")
    h = min(tau + k, H)
    discounts = gamma ** np.arange(h - tau)
    total = np.tensordot(discounts, rewards[tau:h], axes=(0, 0)) if h > tau else 0.0
    return total + gamma ** (h - tau) * values[h]


def lambda_returns(rewards: list, values: list, gamma: float, lam: float) -> list:
    """V_lambda(s_tau) for tau = 0..H-1 by the backward recursion
    ``R_tau = r_tau + gamma * ((1 - lam) * v_{tau+1} + lam * R_{tau+1})`` with ``R_H = v_H``.

    Works elementwise on numpy arrays or on Tensors (then differentiable).
    """
    H = len(rewards)
    if len(values) != H + 1:
        raise ValueError(f"expected {H + 1} values for horizon {H}, got {len(values)}")
    out = [None] * H
    ret = values[H]
    for tau in range(H - 1, -1, -1):
        ret = rewards[tau] + gamma * ((1.0 - lam) * values[tau + 1] + lam * ret)
        out[tau] = ret
    return out


def lambda_return(traj: ImaginedTrajectory, tau: int):
    if traj.horizon < 1 or not 0 <= tau < traj.horizon:
        raise ValueError(f"tau={tau} outside horizon {traj.horizon}")
    r = list(traj.reward_array())
    v = list(traj.value_array())
    return lambda_returns(r, v, traj.gamma, traj.lam)[tau]


class Behavior:
    """Owns the actor and critic and trains them on imagined rollouts of ``dynamics``.

    ``dynamics`` exposes ``features(state)`` and ``step(state, action, rng)``
    returning ``(next_state, reward)`` as Tensors, and a ``params`` attribute
    (or None) that is frozen while behaviours are learned.
    """

    def __init__(self, dynamics, actor: Actor, critic: Critic, *, horizon: int = 15,
                 gamma: float = 0.99, lam: float = 0.95, frozen_params=None):
        if not (0 < gamma <= 1 and 0 <= lam <= 1):
            raise ValueError("gamma must lie in (0, 1] and lambda in [0, 1]")
        self.dynamics, self.actor, self.critic = dynamics, actor, critic
        self.horizon, self.gamma, self.lam = horizon, gamma, lam
        self.frozen_params = frozen_params

    def imagine_rollout(self, start, horizon: int | None = None,
                        rng: np.random.Generator | None = None) -> ImaginedTrajectory:
        """Roll the policy through the dynamics; gradients reach the actor only."""
        H = self.horizon if horizon is None else horizon
        state = dm.stop_gradient(start)
        states, actions, rewards, feats = [state], [], [], [self.dynamics.features(state)]
        for _ in range(H):
            noise = None if rng is None else rng.standard_normal((state.shape[0], self.actor.action_dim))
            action = self.actor.sample(feats[-1], noise)
            state, reward = self.dynamics.step(state, action, rng)
            states.append(state)
            actions.append(action)
            rewards.append(reward)
            feats.append(self.dynamics.features(state))
        with self.critic.params.frozen():
            values = [self.critic(f) for f in feats]
        return ImaginedTrajectory(states, actions, rewards, values, self.gamma, self.lam, feats)

    def actor_update(self, traj: ImaginedTrajectory) -> dict:
        """Ascend the mean lambda-return over every imagined step."""
        returns = lambda_returns(traj.rewards, traj.values, traj.gamma, traj.lam)
        objective = dm.mean(dm.stack(returns, axis=0))
        value = objective.item()
        if not math.isfinite(value):
            log.warning("non-finite actor objective; step skipped")
            return {"actor_objective": value, "skipped": True}
        self.actor.params.zero_grad()
        dm.backward(-objective)
        grads, norm = dm.clip_by_global_norm(self.actor.params.grads(), self.actor.grad_clip)
        ok = dm.adam_step(self.actor.params, grads, self.actor.lr)
        return {"actor_objective": value, "actor_grad_norm": norm, "skipped": not ok}

    def critic_targets(self, traj: ImaginedTrajectory) -> np.ndarray:
        return np.stack(lambda_returns(list(traj.reward_array()), list(traj.value_array()),
                                       traj.gamma, traj.lam))

    def critic_update(self, traj: ImaginedTrajectory) -> dict:
        """Regress v(s_tau) onto stop-gradient lambda-return targets."""
        targets = self.critic_targets(traj)
        H = traj.horizon
        feats = dm.concat([dm.stop_gradient(f) for f in traj.features[:H]], axis=0)
        pred = self.critic(feats)
        loss = dm.mean(0.5 * dm.square(pred - targets.reshape(-1)))
        value = loss.item()
        if not math.isfinite(value):
            log.warning("non-finite critic loss; step skipped")
            return {"critic_loss": value, "skipped": True}
        self.critic.params.zero_grad()
        dm.backward(loss)
        grads, norm = dm.clip_by_global_norm(self.critic.params.grads(), self.critic.grad_clip)
        ok = dm.adam_step(self.critic.params, grads, self.critic.lr)
        return {"critic_loss": value, "critic_grad_norm": norm, "skipped": not ok}

    def train_step(self, start, rng: np.random.Generator | None = None) -> dict:
        if self.frozen_params is not None:
            with self.frozen_params.frozen():
                traj = self.imagine_rollout(start, rng=rng)
        else:
            traj = self.imagine_rollout(start, rng=rng)
        metrics = self.actor_update(traj)
        metrics.update(self.critic_update(traj))
        return metrics
