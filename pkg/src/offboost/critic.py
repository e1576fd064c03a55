"""Policy evaluation: the online twin Q-pair and the offline value pair.

The online pair learns Q of the acting policy against a soft bootstrapped
target. The offline pair (twin Q plus one expectile value head) evaluates the
buffer-restricted optimum implicitly: it only ever sees buffer actions, and
the expectile factor pushes the value head toward the per-state max of Q over
those actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets
from .errors import NumericError
from .replay import Batch

Array = np.ndarray


@dataclass
class CriticPair:
    """Twin Q-networks with target copies sharing one architecture.

    `clip_double` selects min(Q1, Q2) for targets and gating; with it off the
    first head alone is used (the ablation knob).
    """

    q1: nets.MlpParams
    q2: nets.MlpParams
    q1_target: nets.MlpParams
    q2_target: nets.MlpParams
    opt1: nets.AdamState
    opt2: nets.AdamState
    clip_double: bool = True


def make_critic_pair(
    state_dim: int,
    action_dim: int,
    hidden: tuple[int, ...],
    activation: str,
    lr: float,
    rng: np.random.Generator,
    clip_double: bool = True,
) -> CriticPair:
    sizes = [state_dim + action_dim, *hidden, 1]
    q1 = nets.init_mlp(sizes, activation, rng=rng)
    q2 = nets.init_mlp(sizes, activation, rng=rng)
    pair = CriticPair(
        q1=q1,
        q2=q2,
        q1_target=q1.copy(),
        q2_target=q2.copy(),
        opt1=nets.adam_init(q1.size, lr),
        opt2=nets.adam_init(q2.size, lr),
        clip_double=clip_double,
    )
    return pair


@dataclass
class OfflineValueHead:
    """State-value network trained by expectile regression on buffer pairs."""

    v: nets.MlpParams
    opt: nets.AdamState
    tau: float


def make_value_head(
    state_dim: int,
    hidden: tuple[int, ...],
    activation: str,
    lr: float,
    tau: float,
    rng: np.random.Generator,
) -> OfflineValueHead:
    nets.validate_expectile(tau)
    v = nets.init_mlp([state_dim, *hidden, 1], activation, rng=rng)
    return OfflineValueHead(v=v, opt=nets.adam_init(v.size, lr), tau=tau)


def q_min(pair: CriticPair, states: Array, actions: Array, use_target: bool) -> Array:
    """min(Q1, Q2) over the online or target copies; shape (B,)."""
    x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
    a_net = pair.q1_target if use_target else pair.q1
    q1 = nets.mlp_eval(a_net, x)[:, 0]
    if not pair.clip_double:
        return q1
    b_net = pair.q2_target if use_target else pair.q2
    q2 = nets.mlp_eval(b_net, x)[:, 0]
    return np.minimum(q1, q2)


def twin_mse_loss(pair: CriticPair, x: Array, targets: Array):
    """Both heads' 0.5 * (Q_h(x) - y)^2 means on one tape, targets constant."""
    y = ad.const(targets[:, None])
    tape = ad.Tape()
    tp1 = nets.TapedParams(pair.q1, tape)
    tp2 = nets.TapedParams(pair.q2, tape)
    x_const = ad.const(x)
    loss1 = ad.vmean(ad.mul(ad.const(0.5), ad.square(ad.sub(tp1.apply(x_const), y))))
    loss2 = ad.vmean(ad.mul(ad.const(0.5), ad.square(ad.sub(tp2.apply(x_const), y))))
    return tape, tp1, tp2, loss1, loss2


def _twin_mse_step(pair: CriticPair, x: Array, targets: Array) -> float:
    """One gradient step of 0.5 * (Q_h(x) - y)^2 for both heads; mean loss."""
    if not np.isfinite(targets).all():
        raise NumericError("non-finite regression target; critic step rejected")
    tape, tp1, tp2, loss1, loss2 = twin_mse_loss(pair, x, targets)
    tape.backward(ad.add(loss1, loss2))
    nets.adam_step(pair.opt1, pair.q1, tp1.grad_flat())
    nets.adam_step(pair.opt2, pair.q2, tp2.grad_flat())
    return 0.5 * (loss1.item() + loss2.item())


def update_q_pi(
    pair: CriticPair,
    batch: Batch,
    policy,
    alpha: float,
    gamma: float,
    rng: np.random.Generator,
) -> float:
    """Soft TD step: y = r + gamma * (1 - done) * (q_min'(s', a') - alpha log pi(a'|s')),
    with a' drawn fresh from the policy per batch element."""
    a_next, logp_next = policy.sample_np(batch.next_states, rng, deterministic=False)
    q_next = q_min(pair, batch.next_states, a_next, use_target=True)
    soft = q_next - alpha * logp_next
    targets = batch.rewards[:, 0] + gamma * (1.0 - batch.terminated[:, 0]) * soft
    x = np.concatenate([batch.states, batch.actions], axis=1)
    return _twin_mse_step(pair, x, targets)


def compute_v_pi(
    pair: CriticPair,
    policy,
    states: Array,
    alpha: float,
    n_samples: int,
    rng: np.random.Generator,
    use_target: bool = True,
) -> Array:
    """Monte-Carlo soft state value (1/n) sum_i [q_min(s, a_i) - alpha log pi(a_i|s)].

    No gradients flow anywhere; this is the gate's view of the acting policy,
    computed with the same target convention as the TD target so the two
    value scales are comparable.
    """
    if n_samples < 1:
        raise NumericError("n_samples must be >= 1")
    states = np.atleast_2d(states)
    acc = np.zeros(states.shape[0])
    for _ in range(n_samples):
        actions, logp = policy.sample_np(states, rng, deterministic=False)
        acc += q_min(pair, states, actions, use_target=use_target) - alpha * logp
    return acc / n_samples


def expectile_value_loss(head: OfflineValueHead, states: Array, q_vals: Array):
    """Asymmetric expectile loss of (q - V(s)) with the q values constant."""
    tape = ad.Tape()
    tp = nets.TapedParams(head.v, tape)
    v = tp.apply(ad.const(states))
    residual = ad.sub(ad.const(q_vals[:, None]), v)
    # the asymmetric weight is a constant of the residual's sign a.e.
    weight = np.where(residual.value < 0.0, 1.0 - head.tau, head.tau)
    loss = ad.vmean(ad.mul(ad.const(weight), ad.square(residual)))
    return tape, tp, loss


def update_v_mu(head: OfflineValueHead, q_mu: CriticPair, batch: Batch) -> float:
    """Expectile regression of V onto min of the offline Q targets, on buffer
    state-action pairs only."""
    q_vals = q_min(q_mu, batch.states, batch.actions, use_target=True)
    tape, tp, loss = expectile_value_loss(head, batch.states, q_vals)
    tape.backward(loss)
    nets.adam_step(head.opt, head.v, tp.grad_flat())
    return loss.item()


def update_q_mu(q_mu: CriticPair, head: OfflineValueHead, batch: Batch, gamma: float) -> float:
    """TD step toward r + gamma * (1 - done) * V(s'); no action sampling, so
    the offline policy stays implicit."""
    v_next = nets.mlp_eval(head.v, batch.next_states)[:, 0]
    targets = batch.rewards[:, 0] + gamma * (1.0 - batch.terminated[:, 0]) * v_next
    x = np.concatenate([batch.states, batch.actions], axis=1)
    return _twin_mse_step(q_mu, x, targets)


def polyak_pair(pair: CriticPair, rate: float) -> None:
    nets.polyak_update(pair.q1_target, pair.q1, rate)
    nets.polyak_update(pair.q2_target, pair.q2, rate)


def value_of(head: OfflineValueHead, states: Array) -> Array:
    """V(s) for a batch of states; shape (B,)."""
    return nets.mlp_eval(head.v, np.atleast_2d(states))[:, 0]
