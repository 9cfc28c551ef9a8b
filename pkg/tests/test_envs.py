import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentplan import diffmath as dm
from latentplan.behavior import Actor, Critic
from latentplan.envs import OracleLatentAdapter, PendulumSwingUp, PointMass2D, make_env
from latentplan.planner import PlannerConfig, PlanningModel, mcts_plan, rollout_plan


@pytest.mark.parametrize("name", ["pointmass", "pendulum"])
def test_reset_deterministic_and_obs_dim(name):
    env = make_env(name)
    a = env.reset(np.random.default_rng(4))
    b = make_env(name).reset(np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (env.spec.obs_dim,)


def test_unknown_env_rejected():
    with pytest.raises(ValueError):
        make_env("cartpole")


def test_pendulum_initial_angle_uniform():
    env = PendulumSwingUp()
    rng = np.random.default_rng(0)
    theta = np.sort([env.sample_state(rng)[0] for _ in range(10_000)])
    assert theta.min() >= -math.pi and theta.max() <= math.pi
    cdf = (theta + math.pi) / (2 * math.pi)
    n = len(theta)
    ks = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    assert ks < 1.63 / math.sqrt(n)  # 1% critical value


def test_pointmass_at_goal_rewards_one():
    env = PointMass2D()
    env.reset(np.random.default_rng(0))
    env.set_state(np.zeros(4))
    assert env.step(np.zeros(2)).reward == 1.0


def test_hanging_pendulum_rewards_near_zero():
    env = PendulumSwingUp()
    env.reset(np.random.default_rng(0))
    env.set_state([math.pi, 0.0])
    for _ in range(5):
        assert env.step([0.0]).reward < 1e-6


def test_pointmass_zero_action_drifts_at_constant_velocity():
    env = PointMass2D()
    env.reset(np.random.default_rng(0))
    start = np.array([0.3, -0.2, 0.5, -1.0])
    env.set_state(start)
    for k in range(1, 11):
        env.step(np.zeros(2))
        np.testing.assert_allclose(env.state[2:], start[2:], rtol=0, atol=0)
        np.testing.assert_allclose(env.state[:2], start[:2] + k * 2 * 0.05 * start[2:], atol=1e-12)


def test_episode_terminates_after_decisions():
    env = PointMass2D()
    env.reset(np.random.default_rng(0))
    assert env.spec.decisions == 100
    for i in range(100):
        assert not env.done
        tr = env.step(np.zeros(2))
        assert tr.step_index == i + 1
    assert env.done
    with pytest.raises(RuntimeError):
        env.step(np.zeros(2))


def test_step_before_reset_rejected():
    with pytest.raises(RuntimeError):
        PointMass2D().step(np.zeros(2))


def test_out_of_bounds_action_clipped():
    env = PointMass2D()
    env.reset(np.random.default_rng(0))
    tr = env.step(np.array([3.0, -7.0]))
    np.testing.assert_array_equal(tr.action, [1.0, -1.0])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-50, 50)), arrays(np.float64, 2, elements=st.floats(-5, 5)))
def test_pointmass_rewards_in_unit_interval(state, action):
    env = PointMass2D()
    env.reset(np.random.default_rng(0))
    env.set_state(state)
    tr = env.step(action)
    assert 0.0 <= tr.reward <= 1.0
    assert np.all(np.isfinite(tr.next_obs)) and np.all(np.abs(tr.action) <= 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-12, 12), st.floats(-5, 5))
def test_pendulum_rewards_in_unit_interval(theta, omega, torque):
    env = PendulumSwingUp()
    env.reset(np.random.default_rng(0))
    env.set_state([theta, omega])
    tr = env.step([torque])
    assert 0.0 <= tr.reward <= 1.0
    assert np.all(np.isfinite(tr.next_obs)) and abs(tr.next_obs[2]) <= 12.0


@pytest.mark.parametrize("name", ["pointmass", "pendulum"])
def test_same_seed_and_actions_give_identical_streams(name):
    streams = []
    for _ in range(2):
        env = make_env(name)
        env.reset(np.random.default_rng(11))
        acts = np.random.default_rng(12).uniform(-1, 1, (100, env.spec.action_dim))
        streams.append([(tr.obs, tr.reward, tr.next_obs) for tr in map(env.step, acts)])
    for (o1, r1, n1), (o2, r2, n2) in zip(*streams):
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(n1, n2)
        assert r1 == r2


@pytest.mark.parametrize("name", ["pointmass", "pendulum"])
def test_adapter_reward_equals_env_reward(name):
    env = make_env(name)
    adapter = OracleLatentAdapter(env)
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = env.sample_state(rng) + rng.normal(0, 0.5, env.spec.state_dim)
        action = rng.uniform(-1, 1, env.spec.action_dim)
        nxt, r = adapter.step(dm.Tensor(state[None]), dm.Tensor(action[None]))
        env.reset(rng)
        env.set_state(state)
        tr = env.step(action)
        assert r.value[0] == tr.reward
        np.testing.assert_array_equal(nxt.value[0], env.state)
        np.testing.assert_array_equal(adapter.features(nxt).value[0], tr.next_obs)
        np.testing.assert_array_equal(adapter.decode_reward(nxt).value,
                                      env.reward_of(dm.Tensor(nxt.value)).value)


class DirectEnvDynamics:
    """Steps a cloned environment once per batch row through its public API."""

    params = None

    def __init__(self, env):
        self.env = env

    def features(self, state):
        return self.env.observe(dm.as_tensor(state))

    def step(self, state, action, rng=None):
        states, rewards = [], []
        for s, a in zip(dm.as_tensor(state).value, dm.as_tensor(action).value):
            clone = copy.deepcopy(self.env)
            clone.steps = 0
            clone.set_state(s)
            tr = clone.step(a)
            states.append(clone.state)
            rewards.append(tr.reward)
        return dm.Tensor(np.array(states)), dm.Tensor(np.array(rewards))


@pytest.mark.parametrize("mode", ["rollout", "mcts-pw", "mcts-fixed"])
def test_adapter_planner_decisions_match_direct_env(mode):
    env = PendulumSwingUp()
    rng = np.random.default_rng(0)
    actor = Actor(3, 1, rng, hidden=16)
    critic = Critic(3, rng, hidden=16)
    cfg = PlannerConfig(mode=mode, simulations=12, proposal_candidates=8, uniform_candidates=4,
                        rollout_depth=3, fixed_children=4)
    via_adapter = PlanningModel(OracleLatentAdapter(env), actor, critic)
    direct = PlanningModel(DirectEnvDynamics(env), actor, critic)
    plan = rollout_plan if mode == "rollout" else mcts_plan
    env.reset(np.random.default_rng(1))
    state = env.state.copy()
    for step in range(5):
        a = plan(via_adapter, state, cfg, np.random.default_rng(step), explore=True)
        b = plan(direct, state, cfg, np.random.default_rng(step), explore=True)
        np.testing.assert_array_equal(a, b)
        env.step(a)
        state = env.state.copy()
