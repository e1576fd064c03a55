"""Training-loop orchestration: interaction, the per-tick gradient schedule,
evaluation, and lossless checkpointing.

One gradient tick touches, in order: the online Q-pair, the frozen gate
inputs (target-based V of the acting policy and the offline value head), the
offline Q-pair, the offline value head, the policy, the entropy temperature,
and finally the target networks. All randomness flows through named
generators derived from the run seed, so a run is a pure function of
(config, seed, build).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import actor, critic, nets
from .envs import ENV_REGISTRY, Env, make_env, wrap_action_noise
from .errors import ConfigError, FormatError, NumericError, UnknownEnvError
from .replay import ReplayBuffer, Transition
from .runlog import RunLog

Array = np.ndarray

CHECKPOINT_VERSION = 1

GATE_MODES = ("adaptive", "fixed_on", "off")
POLICY_VARIANTS = ("stochastic", "deterministic")


@dataclass
class AgentConfig:
    """Run configuration; defaults follow the reference hyperparameter table."""

    env: str = "pendulum"
    seed: int = 0
    steps: int = 30_000
    gamma: float = 0.99
    critic_lr: float = 3e-4
    actor_lr: float = 3e-4
    alpha_lr: float = 1e-3  # tuned so alpha anneals before it inflates Q targets
    batch_size: int = 512
    buffer_capacity: int = 1_000_000
    tau: float = 0.9
    lam: float = 0.001
    hidden: tuple[int, ...] = (512, 512)
    activation: str = "elu"
    warmup_steps: int = 5_000
    updates_per_env_step: int = 1
    eval_interval: int = 1_000
    eval_episodes: int = 10
    polyak: float = 0.005
    gate_mode: str = "adaptive"
    policy_variant: str = "stochastic"
    v_pi_samples: int = 1
    target_entropy: float | None = None
    action_noise: float = 0.0
    clip_double: bool = True
    run_id: str = ""

    def hash(self) -> str:
        doc = asdict(self)
        doc["hidden"] = list(doc["hidden"])
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_validate(raw: dict | AgentConfig) -> AgentConfig:
    """Fill defaults, reject unknown keys, and range-check every field."""
    if isinstance(raw, AgentConfig):
        cfg = raw
    else:
        known = {f.name for f in AgentConfig.__dataclass_fields__.values()}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(raw)
        if "hidden" in merged:
            merged["hidden"] = tuple(int(h) for h in merged["hidden"])
        cfg = AgentConfig(**merged)

    if cfg.env not in ENV_REGISTRY:
        raise UnknownEnvError(
            f"unknown environment {cfg.env!r}; valid names: {', '.join(ENV_REGISTRY)}"
        )
    if not (0.0 <= cfg.gamma < 1.0):
        raise ConfigError(f"gamma must lie in [0, 1), got {cfg.gamma}")
    if not (0.0 < cfg.tau < 1.0):
        raise ConfigError(f"tau must lie in (0, 1), got {cfg.tau}")
    if cfg.lam < 0.0:
        raise ConfigError(f"lam must be >= 0, got {cfg.lam}")
    if cfg.gate_mode not in GATE_MODES:
        raise ConfigError(f"gate_mode must be one of {GATE_MODES}, got {cfg.gate_mode!r}")
    if cfg.policy_variant not in POLICY_VARIANTS:
        raise ConfigError(
            f"policy_variant must be one of {POLICY_VARIANTS}, got {cfg.policy_variant!r}"
        )
    for name in ("steps", "batch_size", "buffer_capacity", "warmup_steps",
                 "updates_per_env_step", "eval_interval", "eval_episodes", "v_pi_samples"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(cfg, name)}")
    for name in ("critic_lr", "actor_lr", "alpha_lr"):
        if getattr(cfg, name) <= 0.0:
            raise ConfigError(f"{name} must be positive")
    if not (0.0 < cfg.polyak <= 1.0):
        raise ConfigError(f"polyak must lie in (0, 1], got {cfg.polyak}")
    if cfg.action_noise < 0.0:
        raise ConfigError(f"action_noise must be >= 0, got {cfg.action_noise}")
    if not cfg.hidden or any(h < 1 for h in cfg.hidden):
        raise ConfigError(f"hidden sizes must be positive, got {cfg.hidden}")
    return cfg


@dataclass
class EvalResult:
    mean: float
    std: float
    returns: list[float]
    success_rate: float | None


def evaluate(policy, env: Env, episodes: int, seed: int) -> EvalResult:
    """Deterministic-mode rollouts; success on sparse tasks is any reward-1 step."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    returns, successes = [], []
    rng = np.random.default_rng(seed)
    for ep in range(episodes):
        state = env.reset(seed=seed + ep)
        total, success = 0.0, False
        while True:
            action, _ = policy.sample_np(state, rng, deterministic=True)
            res = env.step(action)
            total += res.reward
            success = success or res.reward == 1.0
            state = res.next_state
            if res.terminated or res.truncated:
                break
        returns.append(total)
        successes.append(success)
    arr = np.asarray(returns)
    rate = float(np.mean(successes)) if env.spec.reward_kind == "sparse" else None
    return EvalResult(float(arr.mean()), float(arr.std()), returns, rate)


class Agent:
    """One seeded training run over one environment."""

    def __init__(self, config: AgentConfig | dict):
        self.config = config_validate(config)
        cfg = self.config
        ss = np.random.SeedSequence(cfg.seed)
        (s_env, s_eval, s_init, s_act, s_upd, s_noise, s_eval_noise) = ss.spawn(7)

        self.env = wrap_action_noise(
            make_env(cfg.env, seed=_seed_of(s_env)), cfg.action_noise, seed=_seed_of(s_noise)
        )
        self.eval_env = wrap_action_noise(
            make_env(cfg.env, seed=_seed_of(s_eval)), cfg.action_noise, seed=_seed_of(s_eval_noise)
        )
        spec = self.env.spec

        init_rng = np.random.default_rng(_seed_of(s_init))
        self.policy = actor.make_policy(
            spec.state_dim, spec.action_dim, spec.action_low, spec.action_high,
            cfg.hidden, cfg.activation, cfg.actor_lr, init_rng,
        )
        self.q_pi = critic.make_critic_pair(
            spec.state_dim, spec.action_dim, cfg.hidden, cfg.activation,
            cfg.critic_lr, init_rng, clip_double=cfg.clip_double,
        )
        self.q_mu = critic.make_critic_pair(
            spec.state_dim, spec.action_dim, cfg.hidden, cfg.activation,
            cfg.critic_lr, init_rng, clip_double=cfg.clip_double,
        )
        self.v_mu = critic.make_value_head(
            spec.state_dim, cfg.hidden, cfg.activation, cfg.critic_lr, cfg.tau, init_rng
        )
        self.temperature = actor.make_temperature(
            spec.action_dim, cfg.alpha_lr, cfg.target_entropy
        )
        self.buffer = ReplayBuffer(spec.state_dim, spec.action_dim, cfg.buffer_capacity)
        self.act_rng = np.random.default_rng(_seed_of(s_act))
        self.update_rng = np.random.default_rng(_seed_of(s_upd))
        self.gate = actor.GateConfig(lam=cfg.lam, mode=cfg.gate_mode,
                                     v_pi_samples=cfg.v_pi_samples)
        self.env_step = 0
        self._state: Array | None = None
        self.run_id = cfg.run_id or f"{cfg.env}_{cfg.gate_mode}_{cfg.policy_variant}_s{cfg.seed}"

    # ------------------------------------------------------------------ alpha

    @property
    def alpha(self) -> float:
        if self.config.policy_variant == "deterministic":
            return 0.0
        return self.temperature.alpha

    # ------------------------------------------------------------------- tick

    def gradient_tick(self, collect_bc_norm: bool = False) -> dict:
        """One pass over all learned components in the fixed update order."""
        cfg = self.config
        batch = self.buffer.sample_batch(cfg.batch_size, self.update_rng)
        alpha = self.alpha

        loss_q_pi = critic.update_q_pi(self.q_pi, batch, self.policy, alpha,
                                       cfg.gamma, self.update_rng)
        # gate inputs, frozen before the offline pair and the policy move
        v_pi_vals = critic.compute_v_pi(self.q_pi, self.policy, batch.states, alpha,
                                        cfg.v_pi_samples, self.update_rng)
        v_mu_vals = critic.value_of(self.v_mu, batch.states)
        loss_q_mu = critic.update_q_mu(self.q_mu, self.v_mu, batch, cfg.gamma)
        loss_v_mu = critic.update_v_mu(self.v_mu, self.q_mu, batch)

        if cfg.policy_variant == "stochastic":
            out = actor.update_policy_adaptive(
                self.policy, self.q_pi, self.v_mu, batch, alpha, self.gate,
                self.update_rng, gate_values=(v_mu_vals, v_pi_vals),
                collect_bc_gate0_norm=collect_bc_norm,
            )
            alpha = actor.update_temperature(self.temperature, out.logp_samples)
        else:
            out = actor.update_policy_deterministic(
                self.policy, self.q_pi, self.v_mu, batch, self.gate,
                self.update_rng, gate_values=(v_mu_vals, v_pi_vals),
            )
        critic.polyak_pair(self.q_pi, cfg.polyak)
        critic.polyak_pair(self.q_mu, cfg.polyak)

        return {
            "loss_q_pi": loss_q_pi,
            "loss_q_mu": loss_q_mu,
            "loss_v_mu": loss_v_mu,
            "loss_actor": out.loss,
            "alpha": alpha,
            "gate_fraction": out.gate_fraction,
            "v_pi_mean": float(v_pi_vals.mean()),
            "v_mu_mean": float(v_mu_vals.mean()),
            "bc_gate0_norm": out.bc_gate0_grad_norm,
        }

    # ------------------------------------------------------------------ train

    def train(self, snapshot_path=None) -> RunLog:
        cfg = self.config
        log = RunLog()
        log.extras["bc_gate0_norms"] = []
        t0 = time.monotonic()
        if self._state is None:
            self._state = self.env.reset()
        acc: dict[str, list] = {}
        while self.env_step < cfg.steps:
            self.env_step += 1
            spec = self.env.spec
            if self.env_step <= cfg.warmup_steps:
                action = self.act_rng.uniform(spec.action_low, spec.action_high)
            else:
                action, _ = self.policy.sample_np(self._state, self.act_rng,
                                                  deterministic=False)
            res = self.env.step(action)
            self.buffer.push(Transition(self._state, action, res.reward,
                                        res.next_state, res.terminated))
            self._state = self.env.reset() if (res.terminated or res.truncated) else res.next_state

            if self.env_step > cfg.warmup_steps:
                log_tick = self.env_step % cfg.eval_interval == 0
                for _ in range(cfg.updates_per_env_step):
                    try:
                        metrics = self.gradient_tick(collect_bc_norm=log_tick)
                    except NumericError as e:
                        if snapshot_path is not None:
                            checkpoint_save(self, snapshot_path)
                        raise NumericError(
                            f"run aborted at env step {self.env_step}: {e}"
                        ) from e
                    for k, v in metrics.items():
                        if v is not None:
                            acc.setdefault(k, []).append(v)

            if self.env_step % cfg.eval_interval == 0:
                ev = evaluate(self.policy, self.eval_env, cfg.eval_episodes,
                              seed=cfg.seed * 1_000_003 + self.env_step)
                means = {k: float(np.mean(v)) for k, v in acc.items() if v}
                log.append(
                    env_step=self.env_step,
                    wall_ms=int((time.monotonic() - t0) * 1000),
                    eval_return_mean=ev.mean,
                    eval_return_std=ev.std,
                    success_rate=ev.success_rate if ev.success_rate is not None else float("nan"),
                    loss_q_pi=means.get("loss_q_pi", float("nan")),
                    loss_q_mu=means.get("loss_q_mu", float("nan")),
                    loss_v_mu=means.get("loss_v_mu", float("nan")),
                    loss_actor=means.get("loss_actor", float("nan")),
                    alpha=self.alpha,
                    gate_fraction=means.get("gate_fraction", float("nan")),
                    v_pi_mean=means.get("v_pi_mean", float("nan")),
                    v_mu_mean=means.get("v_mu_mean", float("nan")),
                    seed=cfg.seed,
                    run_id=self.run_id,
                )
                if acc.get("bc_gate0_norm"):
                    log.extras["bc_gate0_norms"].append(acc["bc_gate0_norm"][-1])
                acc = {}
        return log


def train(config: AgentConfig | dict, snapshot_path=None) -> RunLog:
    """Build an agent from config and run it to completion."""
    return Agent(config).train(snapshot_path=snapshot_path)


def _seed_of(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ------------------------------------------------------------- checkpointing

def _optimizer_state(opt: nets.AdamState) -> dict:
    return {"t": opt.t, "lr": opt.lr}


def checkpoint_save(agent: Agent, path) -> None:
    """Single-file snapshot: parameters, optimizer moments, RNG states, env
    state, buffer contents, and a config hash guarding resume compatibility."""
    cfg = agent.config
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": {**asdict(cfg), "hidden": list(cfg.hidden)},
        "config_hash": cfg.hash(),
        "env_step": agent.env_step,
        "state": None if agent._state is None else agent._state.tolist(),
        "env_state": agent.env.get_state(),
        "eval_env_state": agent.eval_env.get_state(),
        "act_rng": agent.act_rng.bit_generator.state,
        "update_rng": agent.update_rng.bit_generator.state,
        "adam_t": {
            "policy": agent.policy.opt.t,
            "q_pi_1": agent.q_pi.opt1.t, "q_pi_2": agent.q_pi.opt2.t,
            "q_mu_1": agent.q_mu.opt1.t, "q_mu_2": agent.q_mu.opt2.t,
            "v_mu": agent.v_mu.opt.t, "alpha": agent.temperature.opt.t,
        },
        "target_entropy": agent.temperature.target_entropy,
    }
    arrays = {
        "policy": agent.policy.net.flat,
        "q_pi_1": agent.q_pi.q1.flat, "q_pi_2": agent.q_pi.q2.flat,
        "q_pi_1t": agent.q_pi.q1_target.flat, "q_pi_2t": agent.q_pi.q2_target.flat,
        "q_mu_1": agent.q_mu.q1.flat, "q_mu_2": agent.q_mu.q2.flat,
        "q_mu_1t": agent.q_mu.q1_target.flat, "q_mu_2t": agent.q_mu.q2_target.flat,
        "v_mu": agent.v_mu.v.flat,
        "log_alpha": agent.temperature.log_alpha,
        "buf_states": agent.buffer._states[: len(agent.buffer)],
        "buf_actions": agent.buffer._actions[: len(agent.buffer)],
        "buf_rewards": agent.buffer._rewards[: len(agent.buffer)],
        "buf_next_states": agent.buffer._next_states[: len(agent.buffer)],
        "buf_terminated": agent.buffer._terminated[: len(agent.buffer)],
        "buf_ptr": np.array([agent.buffer._ptr], dtype=np.int64),
    }
    for name, opt in _optimizers(agent).items():
        arrays[f"m_{name}"] = opt.m
        arrays[f"v_{name}"] = opt.v
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def _optimizers(agent: Agent) -> dict[str, nets.AdamState]:
    return {
        "policy": agent.policy.opt,
        "q_pi_1": agent.q_pi.opt1, "q_pi_2": agent.q_pi.opt2,
        "q_mu_1": agent.q_mu.opt1, "q_mu_2": agent.q_mu.opt2,
        "v_mu": agent.v_mu.opt, "alpha": agent.temperature.opt,
    }


def checkpoint_load(path, expected_config: AgentConfig | dict | None = None) -> Agent:
    """Rebuild an agent that continues bitwise-identically to the saved one."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        cfg = config_validate(meta["config"])
        if cfg.hash() != meta["config_hash"]:
            raise FormatError(f"{path}: config hash mismatch; refusing to load")
        if expected_config is not None:
            expected = config_validate(expected_config)
            if expected.hash() != meta["config_hash"]:
                raise FormatError(
                    f"{path}: checkpoint was produced by a different config "
                    f"(env {cfg.env!r}, hash {meta['config_hash']}); refusing to resume"
                )
        agent = Agent(cfg)
        agent.env_step = int(meta["env_step"])
        agent._state = None if meta["state"] is None else np.asarray(meta["state"])
        agent.env.set_state(meta["env_state"])
        agent.eval_env.set_state(meta["eval_env_state"])
        agent.act_rng.bit_generator.state = meta["act_rng"]
        agent.update_rng.bit_generator.state = meta["update_rng"]
        agent.policy.net.flat[...] = data["policy"]
        agent.q_pi.q1.flat[...] = data["q_pi_1"]
        agent.q_pi.q2.flat[...] = data["q_pi_2"]
        agent.q_pi.q1_target.flat[...] = data["q_pi_1t"]
        agent.q_pi.q2_target.flat[...] = data["q_pi_2t"]
        agent.q_mu.q1.flat[...] = data["q_mu_1"]
        agent.q_mu.q2.flat[...] = data["q_mu_2"]
        agent.q_mu.q1_target.flat[...] = data["q_mu_1t"]
        agent.q_mu.q2_target.flat[...] = data["q_mu_2t"]
        agent.v_mu.v.flat[...] = data["v_mu"]
        agent.temperature.log_alpha[...] = data["log_alpha"]
        agent.temperature.target_entropy = float(meta["target_entropy"])
        n = data["buf_states"].shape[0]
        agent.buffer._states[:n] = data["buf_states"]
        agent.buffer._actions[:n] = data["buf_actions"]
        agent.buffer._rewards[:n] = data["buf_rewards"]
        agent.buffer._next_states[:n] = data["buf_next_states"]
        agent.buffer._terminated[:n] = data["buf_terminated"]
        agent.buffer._count = n
        agent.buffer._ptr = int(data["buf_ptr"][0])
        for name, opt in _optimizers(agent).items():
            opt.m[...] = data[f"m_{name}"]
            opt.v[...] = data[f"v_{name}"]
            opt.t = int(meta["adam_t"][name])
    return agent
