"""Recurrent state-space world model and its reconstruction objective."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .nets import MLP, Dense, GRUCell

log = logging.getLogger(__name__)


@dataclass
class LatentState:
    """Batched latent state: recurrent ``deter`` plus sampled ``stoch`` and its statistics."""

    deter: dm.Tensor
    stoch: dm.Tensor
    mean: dm.Tensor
    std: dm.Tensor

    @property
    def batch(self) -> int:
        return self.deter.shape[0]

    def features(self) -> dm.Tensor:
        return dm.concat([self.deter, self.stoch], axis=-1)

    def detach(self) -> "LatentState":
        return LatentState(*(dm.stop_gradient(t) for t in (self.deter, self.stoch, self.mean, self.std)))


@dataclass
class SequenceBatch:
    """Replay windows. ``actions[:, t]`` is the action that led to ``obs[:, t]``;
    ``rewards[:, t]`` was received on arriving at ``obs[:, t]``."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.obs.ndim != 3 or self.actions.ndim != 3 or self.rewards.ndim != 2:
            raise ValueError("SequenceBatch expects obs (B,L,O), actions (B,L,A), rewards (B,L)")
        if not (self.obs.shape[:2] == self.actions.shape[:2] == self.rewards.shape):
            raise ValueError(
                f"misaligned batch: obs {self.obs.shape}, actions {self.actions.shape}, "
                f"rewards {self.rewards.shape}")

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]

    @property
    def length(self) -> int:
        return self.obs.shape[1]


class WorldModel:
    """Representation, transition, observation and reward models sharing one ParameterSet."""

    def __init__(self, obs_dim: int, action_dim: int, rng: np.random.Generator, *,
                 deter: int = 64, stoch: int = 16, hidden: int = 64, embed: int = 64,
                 beta: float = 1.0, lr: float = 6e-4, grad_clip: float = 100.0):
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.deter_dim, self.stoch_dim = deter, stoch
        self.beta, self.lr, self.grad_clip = beta, lr, grad_clip
        self.params = p = dm.ParameterSet()
        self.embed = Dense(p, "embed", obs_dim, embed, rng, act="elu")
        self.cell_in = Dense(p, "cell_in", stoch + action_dim, hidden, rng, act="elu")
        self.cell = GRUCell(p, "cell", hidden, deter, rng)
        self.prior_hidden = Dense(p, "prior/h", deter, hidden, rng, act="elu")
        self.prior_out = Dense(p, "prior/out", hidden, 2 * stoch, rng)
        self.post_hidden = Dense(p, "post/h", deter + embed, hidden, rng, act="elu")
        self.post_out = Dense(p, "post/out", hidden, 2 * stoch, rng)
        self.obs_decoder = MLP(p, "obs_dec", deter + stoch, hidden, obs_dim, 2, rng)
        self.reward_decoder = MLP(p, "rew_dec", deter + stoch, hidden, 1, 2, rng)

    @property
    def feature_dim(self) -> int:
        return self.deter_dim + self.stoch_dim

    def initial_state(self, batch: int) -> LatentState:
        z = np.zeros((batch, self.stoch_dim))
        return LatentState(dm.Tensor(np.zeros((batch, self.deter_dim))), dm.Tensor(z),
                           dm.Tensor(z), dm.Tensor(np.ones_like(z)))

    def state_from_features(self, feat) -> LatentState:
        feat = dm.as_tensor(feat)
        if feat.ndim != 2 or feat.shape[1] != self.feature_dim:
            raise ValueError(f"feature shape {feat.shape} does not match model ({self.feature_dim})")
        stoch = feat[:, self.deter_dim:]
        # statistics are not recoverable from features; only deter/stoch drive the next step
        return LatentState(feat[:, : self.deter_dim], stoch, stoch, dm.Tensor(np.ones(stoch.shape)))

    # -- one-step transitions -------------------------------------------------

    def _check(self, prev: LatentState, action, obs=None) -> None:
        if action.ndim != 2 or action.shape != (prev.batch, self.action_dim):
            raise ValueError(f"action shape {action.shape} != {(prev.batch, self.action_dim)}")
        if obs is not None and (obs.ndim != 2 or obs.shape != (prev.batch, self.obs_dim)):
            raise ValueError(f"observation shape {obs.shape} != {(prev.batch, self.obs_dim)}")

    def _advance(self, prev: LatentState, action) -> dm.Tensor:
        x = self.cell_in(dm.concat([prev.stoch, action], axis=-1))
        return self.cell(x, prev.deter)

    def _stats(self, raw: dm.Tensor) -> tuple[dm.Tensor, dm.Tensor]:
        return raw[:, : self.stoch_dim], dm.positive_std(raw[:, self.stoch_dim:])

    def _prior_stats(self, deter):
        return self._stats(self.prior_out(self.prior_hidden(deter)))

    def _post_stats(self, deter, embedded):
        return self._stats(self.post_out(self.post_hidden(dm.concat([deter, embedded], axis=-1))))

    @staticmethod
    def _sample(mean, std, noise) -> dm.Tensor:
        if noise is None:
            return mean
        return dm.reparam_sample(mean, std, noise)

    def prior_step(self, prev: LatentState, action, noise=None) -> LatentState:
        """Transition model. ``noise=None`` returns the mean as the sample."""
        action = dm.as_tensor(action)
        self._check(prev, action)
        deter = self._advance(prev, action)
        mean, std = self._prior_stats(deter)
        return LatentState(deter, self._sample(mean, std, noise), mean, std)

    def posterior_step(self, prev: LatentState, action, obs, noise=None) -> LatentState:
        """Representation model: advance the recurrent state, then condition on ``obs``."""
        action, obs = dm.as_tensor(action), dm.as_tensor(obs)
        self._check(prev, action, obs)
        deter = self._advance(prev, action)
        mean, std = self._post_stats(deter, self.embed(obs))
        return LatentState(deter, self._sample(mean, std, noise), mean, std)

    def decode_observation(self, state: LatentState) -> dm.Tensor:
        """Mean of the unit-variance Gaussian over observations."""
        return self.obs_decoder(state.features())

    def decode_reward(self, state: LatentState) -> dm.Tensor:
        """Mean of the unit-variance Gaussian over the scalar reward, shape (n,)."""
        return self.reward_decoder(state.features())[:, 0]

    # -- training ---------------------------------------------------------------

    def observe(self, batch: SequenceBatch, rng: np.random.Generator | None):
        """Filter a batch; returns per-step posterior states and prior statistics."""
        B, L = batch.batch_size, batch.length
        embedded = self.embed(dm.Tensor(batch.obs.reshape(B * L, self.obs_dim)))
        embedded = dm.reshape(embedded, (B, L, -1))
        state = self.initial_state(B)
        posts, priors = [], []
        for t in range(L):
            action = dm.Tensor(batch.actions[:, t])
            self._check(state, action)
            deter = self._advance(state, action)
            prior = self._prior_stats(deter)
            mean, std = self._post_stats(deter, embedded[:, t])
            noise = None if rng is None else rng.standard_normal(mean.shape)
            state = LatentState(deter, self._sample(mean, std, noise), mean, std)
            posts.append(state)
            priors.append(prior)
        return posts, priors

    def reconstruction_loss(self, batch: SequenceBatch, rng: np.random.Generator | None = None):
        """Negative joint reconstruction objective, mean-reduced over batch and time.

        Returns ``(loss, diagnostics, posterior_states)``; the diagnostics hold the
        mean observation and reward log-likelihoods and the mean KL.
        """
        if batch.length == 0 or batch.batch_size == 0:
            raise ValueError("empty sequence batch")
        B, L = batch.batch_size, batch.length
        posts, priors = self.observe(batch, rng)
        # time-major flattening: row index t * B + b
        feats = dm.concat([s.features() for s in posts], axis=0)
        obs_t = batch.obs.transpose(1, 0, 2).reshape(L * B, self.obs_dim)
        rew_t = batch.rewards.T.reshape(L * B, 1)
        obs_mean = self.obs_decoder(feats)
        rew_mean = self.reward_decoder(feats)
        ones_o = np.ones_like(obs_t)
        ll_obs = dm.mean(dm.gaussian_log_prob(obs_t, obs_mean, ones_o))
        ll_rew = dm.mean(dm.gaussian_log_prob(rew_t, rew_mean, np.ones_like(rew_t)))
        kl = dm.mean(dm.concat([
            dm.diag_gaussian_kl(s.mean, s.std, pm, ps) for s, (pm, ps) in zip(posts, priors)
        ], axis=0))
        loss = -ll_obs - ll_rew
        if self.beta:
            loss = loss + self.beta * kl
        diagnostics = {"J_O": ll_obs.item(), "J_R": ll_rew.item(), "KL": kl.item(),
                       "loss": loss.item()}
        return loss, diagnostics, posts

    def train_batch(self, batch: SequenceBatch, rng: np.random.Generator | None = None):
        """One clipped Adam step on the reconstruction loss.

        Returns ``(metrics, start_features)`` where ``start_features`` are the
        detached posterior features of every (b, t) cell, shape (B * L, F).
        """
        if batch.length == 0 or batch.batch_size == 0:
            raise ValueError("empty sequence batch")
        self.params.zero_grad()
        loss, metrics, posts = self.reconstruction_loss(batch, rng)
        starts = np.concatenate([s.features().value for s in posts], axis=0)
        if not math.isfinite(metrics["loss"]):
            log.warning("non-finite model loss; step aborted")
            metrics.update(grad_norm=float("nan"), skipped=True)
            return metrics, starts
        dm.backward(loss)
        grads, norm = dm.clip_by_global_norm(self.params.grads(), self.grad_clip)
        ok = dm.adam_step(self.params, grads, self.lr)
        metrics.update(grad_norm=norm, skipped=not ok)
        return metrics, starts


class LearnedDynamics:
    """Exposes the transition and reward models over flat feature vectors.

    Behaviour learning and the planners treat a latent state as the
    concatenation ``[deter, stoch]``.
    """

    def __init__(self, model: WorldModel):
        self.model = model

    @property
    def state_dim(self) -> int:
        return self.model.feature_dim

    @property
    def action_dim(self) -> int:
        return self.model.action_dim

    def features(self, state):
        return dm.as_tensor(state)

    def step(self, state, action, rng: np.random.Generator | None = None):
        latent = self.model.state_from_features(state)
        noise = None if rng is None else rng.standard_normal((latent.batch, self.model.stoch_dim))
        nxt = self.model.prior_step(latent, action, noise)
        return nxt.features(), self.model.decode_reward(nxt)
