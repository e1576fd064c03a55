"""Desk-scale environments: dense pendulum swing-up, a dense/sparse point
mass, and a finite chain MDP, plus a Gaussian action-noise wrapper.

All dynamics are seeded and bitwise reproducible: each instance owns one
numpy Generator, and identical (seed, action sequence) pairs give identical
trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StateError, UnknownEnvError

log = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class EnvSpec:
    """Static description of one environment's interface."""

    name: str
    state_dim: int
    action_dim: int
    action_low: Array
    action_high: Array
    max_episode_steps: int
    reward_kind: str  # "dense" or "sparse"

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise DimensionError("state_dim and action_dim must be positive")
        if self.max_episode_steps < 1:
            raise DimensionError("max_episode_steps must be >= 1")
        if not np.all(np.asarray(self.action_low) < np.asarray(self.action_high)):
            raise DimensionError("action_low must be < action_high element-wise")
        if self.reward_kind not in ("dense", "sparse"):
            raise DimensionError(f"reward_kind must be dense or sparse, got {self.reward_kind}")


@dataclass(frozen=True)
class StepResult:
    next_state: Array
    reward: float
    terminated: bool  # environment-intrinsic done; kills the bootstrap
    truncated: bool   # horizon cutoff; bootstrap continues


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP: P[s, a] is a probability vector over next states."""

    n_states: int
    n_actions: int
    transitions: Array    # (S, A, S)
    rewards: Array        # (S, A)
    gamma: float
    initial_dist: Array   # (S,)

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=np.float64)
        if P.shape != (self.n_states, self.n_actions, self.n_states):
            raise DimensionError(f"transition tensor must be (S,A,S), got {P.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise DimensionError("each P[s,a] must be a probability vector (sum 1 within 1e-12)")
        if np.shape(self.rewards) != (self.n_states, self.n_actions):
            raise DimensionError("reward table must be (S,A)")
        if not (0.0 <= self.gamma < 1.0):
            raise DimensionError(f"discount must lie in [0,1), got {self.gamma}")
        d0 = np.asarray(self.initial_dist, dtype=np.float64)
        if d0.shape != (self.n_states,) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > 1e-12:
            raise DimensionError("initial distribution must be a probability vector over states")


class Env:
    """Base class: owns a Generator, a step counter, and the episode guard."""

    spec: EnvSpec

    def __init__(self, spec: EnvSpec, seed: int):
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._needs_reset = True
        self._warned_clamp = False

    def reset(self, seed: int | None = None) -> Array:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._steps = 0
        self._needs_reset = False
        return self._reset_state()

    def step(self, action) -> StepResult:
        if self._needs_reset:
            raise StateError("step() after episode end; call reset() first")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.spec.action_dim,):
            raise DimensionError(
                f"action has shape {action.shape}, expected ({self.spec.action_dim},)"
            )
        clipped = np.clip(action, self.spec.action_low, self.spec.action_high)
        if not self._warned_clamp and np.any(clipped != action):
            log.warning("%s: out-of-range action clamped (logged once)", self.spec.name)
            self._warned_clamp = True
        self._steps += 1
        next_state, reward, terminated = self._transition(clipped)
        truncated = (not terminated) and self._steps >= self.spec.max_episode_steps
        if terminated or truncated:
            self._needs_reset = True
        return StepResult(next_state, float(reward), bool(terminated), bool(truncated))

    def get_state(self) -> dict:
        """Everything needed to resume mid-episode, RNG included."""
        return {
            "steps": self._steps,
            "needs_reset": self._needs_reset,
            "rng": self._rng.bit_generator.state,
            "phys": self._phys_state(),
        }

    def set_state(self, d: dict) -> None:
        self._steps = int(d["steps"])
        self._needs_reset = bool(d["needs_reset"])
        self._rng.bit_generator.state = d["rng"]
        self._set_phys_state(d["phys"])

    # subclass hooks
    def _reset_state(self) -> Array:
        raise NotImplementedError

    def _transition(self, action: Array) -> tuple[Array, float, bool]:
        raise NotImplementedError

    def _phys_state(self) -> dict:
        raise NotImplementedError

    def _set_phys_state(self, d: dict) -> None:
        raise NotImplementedError


def _angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


class PendulumEnv(Env):
    """Torque-limited swing-up.

    theta'' = (3g / 2l) sin(theta) + (3 / m l^2) u, with g=10, m=l=1,
    dt=0.05, torque clamp +-2, theta_dot clamp +-8. Observation is
    (cos theta, sin theta, theta_dot); reward is
    -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2). Episodes only truncate.
    """

    G, M, L, DT = 10.0, 1.0, 1.0, 0.05
    MAX_SPEED = 8.0

    def __init__(self, seed: int):
        spec = EnvSpec(
            name="pendulum",
            state_dim=3,
            action_dim=1,
            action_low=np.array([-2.0]),
            action_high=np.array([2.0]),
            max_episode_steps=200,
            reward_kind="dense",
        )
        super().__init__(spec, seed)
        self._theta = 0.0
        self._theta_dot = 0.0

    def _obs(self) -> Array:
        return np.array([math.cos(self._theta), math.sin(self._theta), self._theta_dot])

    def _reset_state(self) -> Array:
        self._theta = float(self._rng.uniform(-math.pi, math.pi))
        self._theta_dot = float(self._rng.uniform(-1.0, 1.0))
        return self._obs()

    def _transition(self, action: Array) -> tuple[Array, float, bool]:
        u = float(action[0])
        th = _angle_normalize(self._theta)
        cost = th * th + 0.1 * self._theta_dot**2 + 0.001 * u * u
        acc = 3.0 * self.G / (2.0 * self.L) * math.sin(th) + 3.0 / (self.M * self.L**2) * u
        self._theta_dot = float(np.clip(self._theta_dot + acc * self.DT, -self.MAX_SPEED, self.MAX_SPEED))
        self._theta = self._theta + self._theta_dot * self.DT
        return self._obs(), -cost, False

    def _phys_state(self) -> dict:
        return {"theta": self._theta, "theta_dot": self._theta_dot}

    def _set_phys_state(self, d: dict) -> None:
        self._theta = float(d["theta"])
        self._theta_dot = float(d["theta_dot"])


class PointMassEnv(Env):
    """Acceleration-controlled point in the [-1,1]^2 arena.

    Euler update with dt=0.05: velocity' = clip(velocity + dt * action),
    position' = clip(position + dt * velocity). Dense variant pays the
    negative distance to the goal each step; sparse variant pays 1 and
    terminates inside the goal radius, 0 otherwise.
    """

    DT = 0.05
    MAX_SPEED = 1.0
    GOAL = np.array([0.6, 0.6])
    GOAL_RADIUS = 0.2

    def __init__(self, seed: int, sparse: bool):
        spec = EnvSpec(
            name="pointmass-sparse" if sparse else "pointmass-dense",
            state_dim=4,
            action_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            max_episode_steps=100,
            reward_kind="sparse" if sparse else "dense",
        )
        super().__init__(spec, seed)
        self.sparse = sparse
        self._pos = np.zeros(2)
        self._vel = np.zeros(2)

    def _obs(self) -> Array:
        return np.concatenate([self._pos, self._vel])

    def _reset_state(self) -> Array:
        # starts anywhere in the arena: states near the goal appear often
        # enough for the sparse value signal to take hold
        self._pos = self._rng.uniform(-0.9, 0.9, size=2)
        self._vel = np.zeros(2)
        return self._obs()

    def _transition(self, action: Array) -> tuple[Array, float, bool]:
        # position integrates the pre-update velocity, matching the declared
        # Euler step: from (0,0) with velocity (1,0), position' = (0.05, 0)
        self._pos = np.clip(self._pos + self.DT * self._vel, -1.0, 1.0)
        self._vel = np.clip(self._vel + self.DT * action, -self.MAX_SPEED, self.MAX_SPEED)
        dist = float(np.linalg.norm(self._pos - self.GOAL))
        if self.sparse:
            success = dist < self.GOAL_RADIUS
            return self._obs(), (1.0 if success else 0.0), success
        return self._obs(), -dist, False

    def _phys_state(self) -> dict:
        return {"pos": self._pos.tolist(), "vel": self._vel.tolist()}

    def _set_phys_state(self, d: dict) -> None:
        self._pos = np.asarray(d["pos"], dtype=np.float64)
        self._vel = np.asarray(d["vel"], dtype=np.float64)


def make_chain_mdp(n_states: int = 5, gamma: float = 0.99) -> TabularMdp:
    """Deterministic left/right chain; reward 1 for acting in the last state.

    Action 0 moves left, action 1 moves right (both clamped at the ends);
    the initial distribution is a point mass on state 0.
    """
    S, A = n_states, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, min(s + 1, S - 1)] = 1.0
        if s == S - 1:
            R[s, :] = 1.0
    d0 = np.zeros(S)
    d0[0] = 1.0
    return TabularMdp(S, A, P, R, gamma, d0)


class ChainEnv(Env):
    """TabularMdp exposed through the continuous-control interface.

    Observations are one-hot state encodings; the scalar action in [-1, 1]
    is binned uniformly into the discrete action set.
    """

    def __init__(self, seed: int, mdp: TabularMdp | None = None, horizon: int = 50):
        self.mdp = mdp if mdp is not None else make_chain_mdp()
        spec = EnvSpec(
            name="chain-mdp",
            state_dim=self.mdp.n_states,
            action_dim=1,
            action_low=np.array([-1.0]),
            action_high=np.array([1.0]),
            max_episode_steps=horizon,
            reward_kind="dense",
        )
        super().__init__(spec, seed)
        self._state = 0

    def discretize(self, action: float) -> int:
        a = (float(action) + 1.0) / 2.0 * self.mdp.n_actions
        return int(np.clip(math.floor(a), 0, self.mdp.n_actions - 1))

    def _obs(self) -> Array:
        one_hot = np.zeros(self.mdp.n_states)
        one_hot[self._state] = 1.0
        return one_hot

    def _reset_state(self) -> Array:
        self._state = int(self._rng.choice(self.mdp.n_states, p=self.mdp.initial_dist))
        return self._obs()

    def _transition(self, action: Array) -> tuple[Array, float, bool]:
        a = self.discretize(action[0])
        reward = float(self.mdp.rewards[self._state, a])
        self._state = int(self._rng.choice(self.mdp.n_states, p=self.mdp.transitions[self._state, a]))
        return self._obs(), reward, False

    def _phys_state(self) -> dict:
        return {"state": self._state}

    def _set_phys_state(self, d: dict) -> None:
        self._state = int(d["state"])


class NoisyActionEnv(Env):
    """Adds N(0, sigma^2 I) to every executed action, then re-clamps."""

    def __init__(self, inner: Env, sigma: float, seed: int):
        if sigma < 0:
            raise DimensionError(f"noise sigma must be >= 0, got {sigma}")
        self.inner = inner
        self.sigma = float(sigma)
        self.spec = inner.spec
        self._noise_rng = np.random.default_rng(seed)

    def reset(self, seed: int | None = None) -> Array:
        return self.inner.reset(seed)

    def step(self, action) -> StepResult:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if self.sigma > 0.0:
            action = action + self._noise_rng.normal(0.0, self.sigma, size=action.shape)
            action = np.clip(action, self.spec.action_low, self.spec.action_high)
        return self.inner.step(action)

    def get_state(self) -> dict:
        return {"inner": self.inner.get_state(), "noise_rng": self._noise_rng.bit_generator.state}

    def set_state(self, d: dict) -> None:
        self.inner.set_state(d["inner"])
        self._noise_rng.bit_generator.state = d["noise_rng"]


ENV_REGISTRY = ("pendulum", "pointmass-dense", "pointmass-sparse", "chain-mdp")


def make_env(name: str, seed: int) -> Env:
    if name == "pendulum":
        return PendulumEnv(seed)
    if name == "pointmass-dense":
        return PointMassEnv(seed, sparse=False)
    if name == "pointmass-sparse":
        return PointMassEnv(seed, sparse=True)
    if name == "chain-mdp":
        return ChainEnv(seed)
    raise UnknownEnvError(f"unknown environment {name!r}; valid names: {', '.join(ENV_REGISTRY)}")


def wrap_action_noise(env: Env, sigma: float, seed: int) -> Env:
    """sigma = 0 returns the env unchanged; the canonical grid is {0, 0.05, 0.1}."""
    if sigma == 0.0:
        return env
    return NoisyActionEnv(env, sigma, seed)
