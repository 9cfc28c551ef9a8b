"""Decision-time planning over a latent model: batched rollouts and MCTS.

MCTS grows children either by progressive widening or with a fixed number of
policy-sampled children per node, selects with a pUCT rule on min-max
normalised values, and backs up bootstrapped n-step returns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import diffmath as dm
from .behavior import lambda_returns

MODES = ("dreamer", "rollout", "mcts-pw", "mcts-fixed")


@dataclass
class PlannerConfig:
    mode: str = "mcts-pw"
    simulations: int = 50
    proposal_candidates: int = 100
    uniform_candidates: int = 50
    rollout_depth: int = 10
    fixed_children: int = 20
    c1: float = 1.25
    c2: float = 19652.0
    c_pw: float = 1.0
    alpha: float = 0.5
    noise_std: float = 0.3
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown planner mode {self.mode!r}; expected one of {MODES}")
        for name in ("simulations", "proposal_candidates", "fixed_children"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.uniform_candidates < 0 or self.rollout_depth < 0:
            raise ValueError("uniform_candidates and rollout_depth must be >= 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.c2 <= 0 or self.c_pw <= 0:
            raise ValueError("c2 and c_pw must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class PlanningModel:
    """Batched numpy view of (dynamics, actor, critic) used by every planner.

    Transitions use the mean of the stochastic latent, so search is deterministic
    given the sampled actions.
    """

    def __init__(self, dynamics, actor, critic):
        self.dynamics, self.actor, self.critic = dynamics, actor, critic

    @property
    def action_dim(self) -> int:
        return self.actor.action_dim

    def transition(self, states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with dm.no_grad():
            nxt, reward = self.dynamics.step(dm.Tensor(states), dm.Tensor(actions), None)
        return nxt.value, reward.value

    def value(self, states: np.ndarray) -> np.ndarray:
        with dm.no_grad():
            return self.critic(self.dynamics.features(dm.Tensor(states))).value

    def sample_actions(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((states.shape[0], self.action_dim))
        with dm.no_grad():
            return self.actor.sample(self.dynamics.features(dm.Tensor(states)), noise).value

    def mode_actions(self, states: np.ndarray) -> np.ndarray:
        with dm.no_grad():
            return self.actor.mode(self.dynamics.features(dm.Tensor(states))).value


def add_exploration_noise(action: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if noise_std == 0:
        return action.copy()
    return np.clip(action + rng.normal(0.0, noise_std, size=action.shape), -1.0, 1.0)


# -- rollout search ----------------------------------------------------------


def rollout_scores(model: PlanningModel, root: np.ndarray, candidates: np.ndarray,
                   cfg: PlannerConfig) -> np.ndarray:
    """r(first step) + gamma * V_lambda of a policy-mode continuation, per candidate."""
    states = np.repeat(root[None], len(candidates), axis=0)
    states, first_reward = model.transition(states, candidates)
    rewards, values = [], [model.value(states)]
    for _ in range(cfg.rollout_depth):
        states, r = model.transition(states, model.mode_actions(states))
        rewards.append(r)
        values.append(model.value(states))
    tail = lambda_returns(rewards, values, cfg.gamma, cfg.lam)[0] if rewards else values[0]
    return first_reward + cfg.gamma * tail


def rollout_plan(model: PlanningModel, root: np.ndarray, cfg: PlannerConfig,
                 rng: np.random.Generator, explore: bool = False, info: dict | None = None) -> np.ndarray:
    """Score policy-sampled and uniform candidate actions in one batch; return the best."""
    root = np.asarray(root, dtype=np.float64)
    roots = np.repeat(root[None], cfg.proposal_candidates, axis=0)
    candidates = np.concatenate([
        model.sample_actions(roots, rng),
        rng.uniform(-1.0, 1.0, size=(cfg.uniform_candidates, model.action_dim)),
    ])
    if explore:
        candidates = add_exploration_noise(candidates, cfg.noise_std, rng)
    scores = rollout_scores(model, root, candidates, cfg)
    best = int(np.argmax(scores))
    if info is not None:
        info.update(candidates=candidates, scores=scores, best=best)
    action = candidates[best]
    return add_exploration_noise(action, cfg.noise_std, rng) if explore else action.copy()


# -- tree search ---------------------------------------------------------------


@dataclass
class EdgeStats:
    """Statistics of edge (s, a): visits N, mean value Q, prior P, reward R, child state S."""

    action: np.ndarray
    P: float
    N: int = 0
    Q: float = 0.0
    R: float | None = None
    S: np.ndarray | None = None
    child: "SearchNode | None" = None

    @property
    def expanded(self) -> bool:
        return self.child is not None


@dataclass
class SearchNode:
    state: np.ndarray
    edges: list[EdgeStats] = field(default_factory=list)

    @property
    def n(self) -> int:
        total = 0
        for e in self.edges:
            total += e.N
        return total

    def set_uniform_priors(self) -> None:
        p = 1.0 / len(self.edges)
        for e in self.edges:
            e.P = p


class MinMaxBounds:
    def __init__(self):
        self.min_q = math.inf
        self.max_q = -math.inf

    def update(self, q: float) -> None:
        self.min_q = min(self.min_q, q)
        self.max_q = max(self.max_q, q)


def normalize_q(q: float, bounds: MinMaxBounds) -> float:
    """Map q into [0, 1] using the tree's extremes; degenerate bounds pass q through."""
    if bounds.max_q > bounds.min_q:
        return (q - bounds.min_q) / (bounds.max_q - bounds.min_q)
    return q


def puct_scores(node: SearchNode, bounds: MinMaxBounds, cfg: PlannerConfig) -> np.ndarray:
    total = node.n
    explore = math.sqrt(total) * (cfg.c1 + math.log((total + cfg.c2 + 1.0) / cfg.c2))
    scores = np.empty(len(node.edges))
    for i, e in enumerate(node.edges):
        q = normalize_q(e.Q, bounds) if e.N > 0 else 0.0
        scores[i] = q + e.P * explore / (1.0 + e.N)
    return scores


def puct_select(node: SearchNode, bounds: MinMaxBounds, cfg: PlannerConfig) -> int:
    """Index of the edge maximising the pUCT score; ties go to the lowest index."""
    if not node.edges:
        raise ValueError("puct_select on a node without edges; widen first")
    return int(np.argmax(puct_scores(node, bounds, cfg)))


def widen_check(node: SearchNode, cfg: PlannerConfig) -> bool:
    """True when progressive widening adds a child: |children| < c_pw * n(s)^alpha.

    A node without children always gets its first one.
    """
    if not node.edges:
        return True
    return len(node.edges) < cfg.c_pw * node.n ** cfg.alpha


def nstep_returns(rewards: list[float], leaf_value: float, gamma: float) -> list[float]:
    """G^k for k = 0..l, where ``rewards[k-1]`` is r_k of the edge entering depth k."""
    l = len(rewards)
    out = [0.0] * (l + 1)
    g = leaf_value
    out[l] = g
    for k in range(l - 1, -1, -1):
        g = rewards[k] + gamma * g
        out[k] = g
    return out


def backup_path(path: list[EdgeStats], leaf_value: float, gamma: float,
                bounds: MinMaxBounds) -> list[float]:
    """Update every edge on the path, deepest first, and return G^0..G^l.

    Edge (s^{k-1}, a^k) averages in G^{k-1} = r_k + gamma * G^k, so its own
    reward counts towards its value.
    """
    returns = nstep_returns([e.R for e in path], leaf_value, gamma)
    for k in range(len(path), 0, -1):
        e = path[k - 1]
        e.Q = (e.N * e.Q + returns[k - 1]) / (e.N + 1)
        e.N += 1
        bounds.update(e.Q)
    return returns


@dataclass
class SimulationRecord:
    index: int
    path: list[int]
    rewards: list[float]
    leaf_value: float
    returns: list[float]


class PlannerTrace:
    """Per-simulation log for replaying search invariants."""

    def __init__(self):
        self.records: list[SimulationRecord] = []
        self.chosen: list[np.ndarray] = []

    def lines(self) -> list[str]:
        out = []
        for r in self.records:
            out.append(
                f"sim={r.index} path={','.join(map(str, r.path))} "
                f"G={','.join(repr(g) for g in r.returns)}")
        for a in self.chosen:
            out.append(f"action={','.join(repr(float(x)) for x in a)}")
        return out

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.lines()) + "\n")


class MCTS:
    """One search tree per decision over a :class:`PlanningModel`."""

    def __init__(self, model: PlanningModel, cfg: PlannerConfig, trace: PlannerTrace | None = None):
        if cfg.mode not in ("mcts-pw", "mcts-fixed"):
            raise ValueError(f"MCTS needs an mcts mode, got {cfg.mode!r}")
        self.model, self.cfg, self.trace = model, cfg, trace
        self.widening = cfg.mode == "mcts-pw"
        self.root: SearchNode | None = None
        self.bounds = MinMaxBounds()

    def _new_edges(self, node: SearchNode, count: int, rng, noisy: bool) -> None:
        states = np.repeat(node.state[None], count, axis=0)
        actions = self.model.sample_actions(states, rng)
        if noisy:
            actions = add_exploration_noise(actions, self.cfg.noise_std, rng)
        for a in actions:
            node.edges.append(EdgeStats(action=a, P=0.0))
        node.set_uniform_priors()

    def expand_leaf(self, parent: SearchNode, edge: EdgeStats, rng=None) -> SearchNode:
        if edge.expanded:
            raise ValueError("edge already expanded")
        nxt, reward = self.model.transition(parent.state[None], edge.action[None])
        edge.S = nxt[0]
        edge.R = float(reward[0])
        edge.child = SearchNode(edge.S)
        if not self.widening:
            self._new_edges(edge.child, self.cfg.fixed_children, rng, noisy=False)
        return edge.child

    def simulate(self, index: int, rng, explore: bool) -> list[float]:
        node, path, idxs = self.root, [], []
        while True:
            if self.widening and widen_check(node, self.cfg):
                self._new_edges(node, 1, rng, noisy=explore and node is self.root)
                idx = len(node.edges) - 1
            else:
                idx = puct_select(node, self.bounds, self.cfg)
            edge = node.edges[idx]
            path.append(edge)
            idxs.append(idx)
            if not edge.expanded:
                leaf = self.expand_leaf(node, edge, rng)
                break
            node = edge.child
        leaf_value = float(self.model.value(leaf.state[None])[0])
        returns = backup_path(path, leaf_value, self.cfg.gamma, self.bounds)
        if self.trace is not None:
            self.trace.records.append(
                SimulationRecord(index, idxs, [e.R for e in path], leaf_value, returns))
        return returns

    def best_root_edge(self) -> int:
        """Most-visited root edge; ties by higher Q, then lower index."""
        edges = self.root.edges
        return max(range(len(edges)), key=lambda i: (edges[i].N, edges[i].Q, -i))

    def plan(self, root_state: np.ndarray, rng: np.random.Generator, explore: bool = False) -> np.ndarray:
        self.root = SearchNode(np.asarray(root_state, dtype=np.float64))
        self.bounds = MinMaxBounds()
        if not self.widening:
            self._new_edges(self.root, self.cfg.fixed_children, rng, noisy=explore)
        for i in range(self.cfg.simulations):
            self.simulate(i, rng, explore)
        action = self.root.edges[self.best_root_edge()].action
        if explore:
            action = add_exploration_noise(action, self.cfg.noise_std, rng)
        if self.trace is not None:
            self.trace.chosen.append(action.copy())
        return action.copy()


def mcts_plan(model: PlanningModel, root: np.ndarray, cfg: PlannerConfig, rng: np.random.Generator,
              explore: bool = False, trace: PlannerTrace | None = None) -> np.ndarray:
    return MCTS(model, cfg, trace).plan(root, rng, explore)


class Planner:
    """Chooses an action for a latent state according to ``cfg.mode``."""

    def __init__(self, model: PlanningModel, cfg: PlannerConfig, trace: PlannerTrace | None = None):
        self.model, self.cfg, self.trace = model, cfg, trace

    def act(self, state: np.ndarray, rng: np.random.Generator, explore: bool = False) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        mode = self.cfg.mode
        if mode == "dreamer":
            action = self.model.mode_actions(state[None])[0]
            return add_exploration_noise(action, self.cfg.noise_std, rng) if explore else action
        if mode == "rollout":
            return rollout_plan(self.model, state, self.cfg, rng, explore)
        return mcts_plan(self.model, state, self.cfg, rng, explore, self.trace)
