"""The acting policy: squashed-Gaussian sampling, the gated policy update,
its deterministic variant, and automatic entropy-temperature tuning.

The gate multiplies the behavior-clone term by a per-state 0/1 indicator of
whether the offline value beats the acting policy's value, so the constraint
switches on exactly where the buffer knows better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .critic import CriticPair, OfflineValueHead, compute_v_pi, q_min, value_of
from .errors import DimensionError, NumericError
from .replay import Batch

Array = np.ndarray

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

GATE_MODES = ("adaptive", "fixed_on", "off")


@dataclass
class GateConfig:
    """Behavior-clone weight and gating mode (`fixed_on`/`off` are ablations)."""

    lam: float = 0.001
    mode: str = "adaptive"
    v_pi_samples: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise DimensionError(f"behavior-clone weight must be >= 0, got {self.lam}")
        if self.mode not in GATE_MODES:
            raise DimensionError(f"gate mode must be one of {GATE_MODES}, got {self.mode!r}")
        if self.v_pi_samples < 1:
            raise DimensionError("v_pi_samples must be >= 1")


class SquashedGaussianPolicy:
    """MLP from state to per-dimension (mean, log_std); actions are
    tanh-squashed then affinely mapped into [action_low, action_high]."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        action_low: Array,
        action_high: Array,
        hidden: tuple[int, ...],
        activation: str,
        lr: float,
        rng: np.random.Generator,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.scale = (self.action_high - self.action_low) / 2.0
        self.bias = (self.action_high + self.action_low) / 2.0
        self.net = nets.init_mlp([state_dim, *hidden, 2 * action_dim], activation, rng=rng)
        self.opt = nets.adam_init(self.net.size, lr)

    def heads_np(self, states: Array) -> tuple[Array, Array]:
        out = nets.mlp_eval(self.net, np.atleast_2d(states))
        m = self.action_dim
        return out[:, :m], np.clip(out[:, m:], nets.LOG_STD_MIN, nets.LOG_STD_MAX)

    def sample_np(self, states: Array, rng: np.random.Generator, deterministic: bool) -> tuple[Array, Array]:
        """Draw actions (env units) and their log-probs; no recording."""
        single = np.asarray(states).ndim == 1
        mean, log_std = self.heads_np(states)
        if deterministic:
            u = mean
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        t = np.tanh(u)
        action = t * self.scale + self.bias
        z = (u - mean) / np.exp(log_std)
        per_dim = -0.5 * z * z - log_std - HALF_LOG_2PI - nets.tanh_log_jacobian(u)
        logp = per_dim.sum(axis=1) - np.log(self.scale).sum()
        if single:
            return action[0], float(logp[0])
        return action, logp

    def logprob_np(self, states: Array, actions_env: Array) -> Array:
        """Log-prob of raw env-unit actions (buffer actions included)."""
        mean, log_std = self.heads_np(states)
        t = (np.atleast_2d(actions_env) - self.bias) / self.scale
        core = nets.squashed_gaussian_logprob(mean, log_std, t)
        return np.atleast_1d(core) - np.log(self.scale).sum()


def make_policy(
    state_dim: int,
    action_dim: int,
    action_low,
    action_high,
    hidden: tuple[int, ...],
    activation: str,
    lr: float,
    rng: np.random.Generator,
) -> SquashedGaussianPolicy:
    return SquashedGaussianPolicy(
        state_dim, action_dim, action_low, action_high, hidden, activation, lr, rng
    )


def sample_action(
    policy: SquashedGaussianPolicy,
    state: Array,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> tuple[Array, float]:
    """Single-state convenience wrapper used by rollouts."""
    action, logp = policy.sample_np(state, rng, deterministic)
    return action, logp


def gate_indicator(v_mu, v_pi):
    """1 where v_mu - v_pi >= 0 (ties activate the constraint), else 0."""
    v_mu = np.asarray(v_mu, dtype=np.float64)
    v_pi = np.asarray(v_pi, dtype=np.float64)
    if not (np.isfinite(v_mu).all() and np.isfinite(v_pi).all()):
        raise NumericError("non-finite values in gate comparison")
    out = (v_mu - v_pi >= 0.0).astype(np.float64)
    return float(out) if out.ndim == 0 else out


@dataclass
class TemperatureState:
    """Learned log entropy temperature with its own optimizer."""

    log_alpha: Array  # shape (1,)
    target_entropy: float
    opt: nets.AdamState

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))


INITIAL_ALPHA = 0.2


def make_temperature(action_dim: int, lr: float, target_entropy: float | None = None) -> TemperatureState:
    """Target entropy defaults to -action_dim; alpha starts at the customary
    0.2 so early bootstrapped targets are not dominated by entropy bonuses."""
    target = -float(action_dim) if target_entropy is None else float(target_entropy)
    return TemperatureState(
        log_alpha=np.full(1, math.log(INITIAL_ALPHA)),
        target_entropy=target,
        opt=nets.adam_init(1, lr),
    )


def update_temperature(temp: TemperatureState, log_probs: Array) -> float:
    """Gradient step on E[-log_alpha * (log pi + target_entropy)]; returns alpha."""
    grad = -float(np.mean(log_probs) + temp.target_entropy)
    nets.adam_step(temp.opt, temp.log_alpha, np.array([grad]))
    return temp.alpha


@dataclass
class ActorUpdate:
    """One policy gradient step's diagnostics."""

    loss: float
    gate_fraction: float
    logp_samples: Array          # detached fresh-sample log-probs, (B,)
    bc_gate0_grad_norm: float | None = None


def _gate_column(
    policy: SquashedGaussianPolicy,
    q_pair: CriticPair,
    v_mu_head: OfflineValueHead,
    batch: Batch,
    alpha: float,
    gate: GateConfig,
    rng: np.random.Generator,
    gate_values: tuple[Array, Array] | None,
) -> Array:
    """Per-state indicator column (B, 1) according to the gate mode.

    When gate inputs are computed here, they are computed in every mode so the
    generator advances identically and mode changes never shift later draws.
    """
    B = len(batch)
    if gate_values is not None:
        v_mu, v_pi = gate_values
    else:
        v_mu = value_of(v_mu_head, batch.states)
        v_pi = compute_v_pi(q_pair, policy, batch.states, alpha, gate.v_pi_samples, rng)
    if gate.mode == "off":
        return np.zeros((B, 1))
    if gate.mode == "fixed_on":
        return np.ones((B, 1))
    return gate_indicator(v_mu, v_pi)[:, None]


def _buffer_logprob_taped(policy, mean: ad.Var, log_std: ad.Var, actions_env: Array) -> ad.Var:
    """log pi(a_buf | s) with gradient through mean/log_std; the buffer action
    is a constant, so its tanh correction and the scale term are constants."""
    t = np.clip(
        (actions_env - policy.bias) / policy.scale, -nets.ATANH_CLAMP, nets.ATANH_CLAMP
    )
    u_buf = np.arctanh(t)
    std = ad.exp(log_std)
    z = ad.div(ad.sub(ad.const(u_buf), mean), std)
    gauss = ad.sub(
        ad.neg(ad.add(ad.mul(ad.const(0.5), ad.square(z)), log_std)),
        ad.const(HALF_LOG_2PI),
    )
    per_dim = ad.sub(gauss, ad.const(nets.tanh_log_jacobian(u_buf)))
    return ad.sub(
        ad.vsum(per_dim, axis=1, keepdims=True),
        ad.const(np.log(policy.scale).sum()),
    )


def _policy_heads_taped(policy, tp: nets.TapedParams, states: Array) -> tuple[ad.Var, ad.Var]:
    out = tp.apply(ad.const(states))
    m = policy.action_dim
    mean = ad.slice_cols(out, 0, m)
    log_std = ad.clip(ad.slice_cols(out, m, 2 * m), nets.LOG_STD_MIN, nets.LOG_STD_MAX)
    return mean, log_std


def _bc_gate0_grad_norm(policy, batch: Batch, gate_col: Array, lam: float) -> float:
    """Norm of the behavior-clone gradient restricted to indicator-0 states,
    with each state's own gate multiplier kept in place (measured, not assumed)."""
    mask0 = (gate_col == 0.0).astype(np.float64)
    tape = ad.Tape()
    tp = nets.TapedParams(policy.net, tape)
    mean, log_std = _policy_heads_taped(policy, tp, batch.states)
    logp_buf = _buffer_logprob_taped(policy, mean, log_std, batch.actions)
    restricted = ad.mul(ad.const(-lam), ad.vmean(ad.mul(ad.const(gate_col * mask0), logp_buf)))
    tape.backward(restricted)
    return float(np.linalg.norm(tp.grad_flat()))


def adaptive_loss(
    policy: SquashedGaussianPolicy,
    q_pair: CriticPair,
    batch: Batch,
    alpha: float,
    gate: GateConfig,
    gate_col: Array,
    eps: Array,
) -> tuple[ad.Tape, nets.TapedParams, ad.Var, ad.Var]:
    """Build the gated max-entropy actor loss with frozen sampling noise:

        E_s [ E_{a~pi} (alpha log pi(a|s) - q_min(s, a))
              - lam * 1(V_mu(s) - V_pi(s) >= 0) * log pi(a_buf|s) ]

    Returns (tape, policy leaves, loss, sample log-probs).
    """
    tape = ad.Tape()
    tp = nets.TapedParams(policy.net, tape)
    mean, log_std = _policy_heads_taped(policy, tp, batch.states)
    std = ad.exp(log_std)
    u = ad.add(mean, ad.mul(std, ad.const(eps)))
    t = ad.tanh(u)
    a_env = ad.add(ad.mul(t, ad.const(policy.scale)), ad.const(policy.bias))

    # log pi of the reparameterized sample: the Gaussian part reduces to
    # -0.5 eps^2 - log_std - c, with eps constant
    gauss = ad.sub(ad.const(-0.5 * eps * eps - HALF_LOG_2PI), log_std)
    corr = ad.mul(
        ad.const(2.0),
        ad.sub(ad.const(math.log(2.0)), ad.add(u, ad.softplus(ad.mul(ad.const(-2.0), u)))),
    )
    logp = ad.sub(
        ad.vsum(ad.sub(gauss, corr), axis=1, keepdims=True),
        ad.const(np.log(policy.scale).sum()),
    )

    x = ad.concat_cols(ad.const(batch.states), a_env)
    q1 = nets.mlp_apply_const(q_pair.q1, x)
    if q_pair.clip_double:
        q_sa = ad.minimum(q1, nets.mlp_apply_const(q_pair.q2, x))
    else:
        q_sa = q1
    loss = ad.vmean(ad.sub(ad.mul(ad.const(alpha), logp), q_sa))

    # lam == 0 contributes exactly nothing, so the term is skipped to keep
    # adaptive/off runs bitwise identical
    if gate.mode != "off" and gate.lam != 0.0:
        logp_buf = _buffer_logprob_taped(policy, mean, log_std, batch.actions)
        bc = ad.mul(ad.const(-gate.lam), ad.vmean(ad.mul(ad.const(gate_col), logp_buf)))
        loss = ad.add(loss, bc)
    return tape, tp, loss, logp


def update_policy_adaptive(
    policy: SquashedGaussianPolicy,
    q_pair: CriticPair,
    v_mu_head: OfflineValueHead,
    batch: Batch,
    alpha: float,
    gate: GateConfig,
    rng: np.random.Generator,
    gate_values: tuple[Array, Array] | None = None,
    collect_bc_gate0_norm: bool = False,
) -> ActorUpdate:
    """One gradient step on the gated max-entropy objective. Gate inputs may
    be passed pre-computed (frozen at tick start); otherwise they are
    evaluated here with the current networks."""
    gate_col = _gate_column(policy, q_pair, v_mu_head, batch, alpha, gate, rng, gate_values)
    eps = rng.standard_normal((len(batch), policy.action_dim))
    tape, tp, loss, logp = adaptive_loss(policy, q_pair, batch, alpha, gate, gate_col, eps)

    if not np.isfinite(loss.value):
        raise NumericError("non-finite actor loss; step rejected")
    tape.backward(loss)
    nets.adam_step(policy.opt, policy.net, tp.grad_flat())

    bc_norm = None
    if collect_bc_gate0_norm:
        bc_norm = _bc_gate0_grad_norm(policy, batch, gate_col, gate.lam)
    gate_fraction = float(gate_col.mean()) if gate.mode != "off" else 0.0
    return ActorUpdate(loss.item(), gate_fraction, logp.value[:, 0].copy(), bc_norm)


def deterministic_loss(
    policy: SquashedGaussianPolicy,
    q_pair: CriticPair,
    batch: Batch,
    gate: GateConfig,
    gate_col: Array,
) -> tuple[ad.Tape, nets.TapedParams, ad.Var]:
    """Deterministic-variant loss: -q_min(s, pi(s)) plus a gated squared pull
    toward buffer actions."""
    tape = ad.Tape()
    tp = nets.TapedParams(policy.net, tape)
    mean, _ = _policy_heads_taped(policy, tp, batch.states)
    a_env = ad.add(ad.mul(ad.tanh(mean), ad.const(policy.scale)), ad.const(policy.bias))
    x = ad.concat_cols(ad.const(batch.states), a_env)
    q1 = nets.mlp_apply_const(q_pair.q1, x)
    if q_pair.clip_double:
        q_sa = ad.minimum(q1, nets.mlp_apply_const(q_pair.q2, x))
    else:
        q_sa = q1
    loss = ad.vmean(ad.neg(q_sa))

    if gate.mode != "off" and gate.lam != 0.0:
        sq_dist = ad.vsum(ad.square(ad.sub(a_env, ad.const(batch.actions))), axis=1, keepdims=True)
        loss = ad.add(loss, ad.mul(ad.const(gate.lam), ad.vmean(ad.mul(ad.const(gate_col), sq_dist))))
    return tape, tp, loss


def update_policy_deterministic(
    policy: SquashedGaussianPolicy,
    q_pair: CriticPair,
    v_mu_head: OfflineValueHead,
    batch: Batch,
    gate: GateConfig,
    rng: np.random.Generator,
    gate_values: tuple[Array, Array] | None = None,
) -> ActorUpdate:
    """Deterministic-policy variant step; entropy plays no role (alpha = 0)."""
    gate_col = _gate_column(policy, q_pair, v_mu_head, batch, 0.0, gate, rng, gate_values)
    tape, tp, loss = deterministic_loss(policy, q_pair, batch, gate, gate_col)
    if not np.isfinite(loss.value):
        raise NumericError("non-finite actor loss; step rejected")
    tape.backward(loss)
    nets.adam_step(policy.opt, policy.net, tp.grad_flat())
    gate_fraction = float(gate_col.mean()) if gate.mode != "off" else 0.0
    return ActorUpdate(loss.item(), gate_fraction, np.zeros(len(batch)))
