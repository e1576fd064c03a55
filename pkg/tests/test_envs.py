"""Environment contracts: seeding, dynamics, horizons, noise wrapper."""

import math

import numpy as np
import pytest

from offboost import envs
from offboost.errors import DimensionError, StateError, UnknownEnvError


def _rollout(env, actions, seed=0):
    out = [env.reset(seed=seed)]
    rewards, dones = [], []
    for a in actions:
        r = env.step(a)
        out.append(r.next_state)
        rewards.append(r.reward)
        dones.append((r.terminated, r.truncated))
    return np.array(out), np.array(rewards), dones


# -------------------------------------------------------------------- registry

def test_make_env_pendulum_spec():
    env = envs.make_env("pendulum", seed=0)
    assert env.spec.state_dim == 3
    assert env.spec.action_dim == 1
    assert env.spec.action_low[0] == -2.0 and env.spec.action_high[0] == 2.0
    assert env.spec.max_episode_steps == 200


def test_make_env_sparse_registry_contract():
    assert envs.make_env("pointmass-sparse", seed=0).spec.reward_kind == "sparse"
    assert envs.make_env("pointmass-dense", seed=0).spec.reward_kind == "dense"


def test_make_env_unknown_name_lists_valid_ones():
    with pytest.raises(UnknownEnvError, match="pendulum"):
        envs.make_env("no-such-env", seed=0)


# --------------------------------------------------------------------- seeding

@pytest.mark.parametrize("name", envs.ENV_REGISTRY)
def test_reset_is_deterministic_per_seed(name):
    env = envs.make_env(name, seed=3)
    a = env.reset(seed=42)
    b = env.reset(seed=42)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("name", envs.ENV_REGISTRY)
def test_trajectories_bitwise_reproducible(name):
    e1 = envs.make_env(name, seed=5)
    e2 = envs.make_env(name, seed=5)
    rng = np.random.default_rng(0)
    acts = rng.uniform(e1.spec.action_low, e1.spec.action_high, size=(30, e1.spec.action_dim))
    s1, r1, d1 = _rollout(e1, acts, seed=7)
    s2, r2, d2 = _rollout(e2, acts, seed=7)
    assert np.array_equal(s1, s2)
    assert np.array_equal(r1, r2)
    assert d1 == d2


def test_chain_reset_always_state_zero():
    env = envs.make_env("chain-mdp", seed=1)
    for seed in range(5):
        obs = env.reset(seed=seed)
        assert obs[0] == 1.0 and obs[1:].sum() == 0.0


def test_pointmass_reset_inside_arena():
    env = envs.make_env("pointmass-dense", seed=2)
    for seed in range(10):
        obs = env.reset(seed=seed)
        assert np.all(np.abs(obs[:2]) <= 1.0)
        assert np.all(obs[2:] == 0.0)


# -------------------------------------------------------------------- dynamics

def test_pendulum_upright_rest_zero_reward():
    env = envs.make_env("pendulum", seed=0)
    env.reset(seed=0)
    env._theta, env._theta_dot = 0.0, 0.0
    r = env.step([0.0])
    assert r.reward == 0.0


def test_pendulum_reward_bounds():
    env = envs.make_env("pendulum", seed=0)
    env.reset(seed=0)
    lo = -(math.pi**2 + 0.1 * 8.0**2 + 0.001 * 2.0**2)
    rng = np.random.default_rng(1)
    for _ in range(500):
        r = env.step(rng.uniform(-2, 2, size=1))
        assert lo <= r.reward <= 0.0
        if r.truncated:
            env.reset()


def test_pointmass_euler_update():
    env = envs.make_env("pointmass-dense", seed=0)
    env.reset(seed=0)
    env._pos = np.zeros(2)
    env._vel = np.array([1.0, 0.0])
    r = env.step([0.0, 0.0])
    np.testing.assert_allclose(r.next_state[:2], [0.05, 0.0])


def test_pointmass_sparse_success_terminates_with_reward_one():
    env = envs.make_env("pointmass-sparse", seed=0)
    env.reset(seed=0)
    env._pos = env.GOAL - np.array([0.0, 0.01])  # one step keeps it inside
    env._vel = np.zeros(2)
    r = env.step([0.0, 0.0])
    assert r.reward == 1.0
    assert r.terminated and not r.truncated


def test_sparse_rewards_binary():
    env = envs.make_env("pointmass-sparse", seed=0)
    env.reset(seed=3)
    rng = np.random.default_rng(2)
    for _ in range(300):
        r = env.step(rng.uniform(-1, 1, size=2))
        assert r.reward in (0.0, 1.0)
        if r.terminated or r.truncated:
            env.reset()


# -------------------------------------------------------------------- horizon

@pytest.mark.parametrize("name", ["pendulum", "pointmass-dense", "chain-mdp"])
def test_truncation_exactly_at_horizon(name):
    env = envs.make_env(name, seed=0)
    env.reset(seed=0)
    horizon = env.spec.max_episode_steps
    for i in range(1, horizon + 1):
        r = env.step(np.zeros(env.spec.action_dim))
        assert r.truncated == (i == horizon)
        assert not r.terminated


def test_step_after_episode_end_raises():
    env = envs.make_env("pendulum", seed=0)
    env.reset(seed=0)
    for _ in range(200):
        env.step([0.0])
    with pytest.raises(StateError):
        env.step([0.0])


def test_action_shape_checked():
    env = envs.make_env("pendulum", seed=0)
    env.reset(seed=0)
    with pytest.raises(DimensionError):
        env.step([0.0, 1.0])


# -------------------------------------------------------------- noise wrapper

def test_noise_sigma_zero_is_identity():
    env = envs.make_env("pendulum", seed=0)
    assert envs.wrap_action_noise(env, 0.0, seed=1) is env


def test_noise_std_matches_request():
    # law of large numbers: sample std of (executed - requested) ~ sigma.
    # On the point mass, velocity' = velocity + dt * executed while speeds
    # stay under the clamp, so the executed action is recovered exactly.
    sigma = 0.1
    inner = envs.make_env("pointmass-dense", seed=0)
    env = envs.wrap_action_noise(inner, sigma, seed=12)
    env.reset(seed=0)
    vel = inner._vel.copy()
    diffs = []
    for _ in range(10_000):
        r = env.step([0.0, 0.0])
        new_vel = r.next_state[2:]
        if np.all(np.abs(new_vel) < inner.MAX_SPEED):
            diffs.extend((new_vel - vel) / inner.DT)
        if r.truncated:
            env.reset()
            vel = inner._vel.copy()
        else:
            vel = new_vel
    assert abs(np.std(diffs) - sigma) < 0.01


def test_noise_wrapper_perturbs_and_is_seeded():
    e1 = envs.wrap_action_noise(envs.make_env("pointmass-dense", seed=0), 0.1, seed=5)
    e2 = envs.wrap_action_noise(envs.make_env("pointmass-dense", seed=0), 0.1, seed=5)
    e3 = envs.wrap_action_noise(envs.make_env("pointmass-dense", seed=0), 0.1, seed=6)
    acts = np.zeros((20, 2))
    s1, _, _ = _rollout(e1, acts, seed=1)
    s2, _, _ = _rollout(e2, acts, seed=1)
    s3, _, _ = _rollout(e3, acts, seed=1)
    assert np.array_equal(s1, s2)
    assert not np.array_equal(s1, s3)


# ------------------------------------------------------------------ tabular mdp

def test_tabular_mdp_validates_probabilities():
    P = np.ones((2, 1, 2)) * 0.6  # rows sum to 1.2
    with pytest.raises(DimensionError):
        envs.TabularMdp(2, 1, P, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]))


def test_chain_mdp_structure():
    mdp = envs.make_chain_mdp(4, gamma=0.9)
    assert mdp.transitions[0, 0, 0] == 1.0  # left from the left end stays
    assert mdp.transitions[2, 1, 3] == 1.0
    assert np.all(mdp.rewards[3] == 1.0)
    assert np.all(mdp.rewards[:3] == 0.0)
