"""Dense networks, their optimizer, and the scalar loss primitives.

Parameters of one perceptron live in a single flat float64 vector; the
per-layer weight matrices and bias vectors are reshaped views into it, so
optimizer and target-network updates are a handful of vectorized ops instead
of one pass per array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, NumericError

Array = np.ndarray

ACTIVATIONS = ("elu", "relu", "tanh", "identity")

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
ATANH_CLAMP = 1.0 - 1e-6


def _elu_value(x: Array) -> Array:
    return np.maximum(x, 0.0) + np.expm1(np.minimum(x, 0.0))


_ACT_EVAL = {
    "elu": _elu_value,
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "identity": lambda x: x,
}

_ACT_TAPED = {
    "elu": ad.elu,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": lambda v: v,
}


class MlpParams:
    """Weights and biases of an L-layer perceptron, stored flat.

    `layer_sizes` is [in, h1, ..., out]; the hidden activation applies to all
    layers except the last. Views in `weights` / `biases` alias `flat`.
    """

    __slots__ = ("layer_sizes", "activation", "flat", "weights", "biases")

    def __init__(self, layer_sizes: list[int], activation: str, flat: Array):
        if activation not in ACTIVATIONS:
            raise DimensionError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise DimensionError(f"layer_sizes must be >= 2 positive ints, got {layer_sizes}")
        expected = sum(
            o * i + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:])
        )
        if flat.shape != (expected,):
            raise DimensionError(f"flat storage has {flat.shape}, architecture needs ({expected},)")
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        self.flat = flat
        self.weights: list[Array] = []
        self.biases: list[Array] = []
        ofs = 0
        for i, o in zip(layer_sizes[:-1], layer_sizes[1:]):
            self.weights.append(flat[ofs : ofs + o * i].reshape(o, i))
            ofs += o * i
            self.biases.append(flat[ofs : ofs + o])
            ofs += o

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def size(self) -> int:
        return self.flat.size

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, self.activation, self.flat.copy())

    def same_architecture(self, other: "MlpParams") -> bool:
        return (
            self.layer_sizes == other.layer_sizes and self.activation == other.activation
        )


def init_mlp(layer_sizes: list[int], activation: str = "elu", *, rng: np.random.Generator) -> MlpParams:
    """Fan-in uniform init, U(-1/sqrt(in), 1/sqrt(in)) per layer."""
    total = sum(o * i + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))
    flat = np.empty(total, dtype=np.float64)
    params = MlpParams(layer_sizes, activation, flat)
    for w, b in zip(params.weights, params.biases):
        bound = 1.0 / math.sqrt(w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


def mlp_eval(params: MlpParams, x: Array) -> Array:
    """Forward pass without recording; accepts (in,) or (B, in)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.in_dim:
        raise DimensionError(f"input has {h.shape[1]} features, network expects {params.in_dim}")
    act = _ACT_EVAL[params.activation]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = act(h)
    return h[0] if single else h


class TapedParams:
    """One network's parameters attached to a tape as differentiable leaves."""

    __slots__ = ("params", "w_leaves", "b_leaves")

    def __init__(self, params: MlpParams, tape: ad.Tape):
        self.params = params
        self.w_leaves = [tape.leaf(w) for w in params.weights]
        self.b_leaves = [tape.leaf(b) for b in params.biases]

    def apply(self, x: ad.Var) -> ad.Var:
        act = _ACT_TAPED[self.params.activation]
        last = len(self.w_leaves) - 1
        h = x
        for i, (w, b) in enumerate(zip(self.w_leaves, self.b_leaves)):
            h = ad.affine(h, w, b)
            if i < last:
                h = act(h)
        return h

    def grad_flat(self) -> Array:
        """Collect leaf gradients into one vector aligned with params.flat."""
        out = np.zeros(self.params.size, dtype=np.float64)
        ofs = 0
        for w_leaf, b_leaf in zip(self.w_leaves, self.b_leaves):
            wn = w_leaf.value.size
            if w_leaf.grad is not None:
                out[ofs : ofs + wn] = w_leaf.grad.ravel()
            ofs += wn
            bn = b_leaf.value.size
            if b_leaf.grad is not None:
                out[ofs : ofs + bn] = b_leaf.grad
            ofs += bn
        return out


def mlp_apply_const(params: MlpParams, x: ad.Var) -> ad.Var:
    """Apply a network on a taped input with parameters held constant, so the
    gradient flows to the input only (how critics enter the actor loss)."""
    act = _ACT_TAPED[params.activation]
    last = len(params.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.affine(h, ad.const(w), ad.const(b))
        if i < last:
            h = act(h)
    return h


@dataclass
class MlpGrads:
    """Per-layer gradients aligned with an MlpParams, plus d/d(input)."""

    weights: list[Array]
    biases: list[Array]
    input: Array

    @property
    def flat(self) -> Array:
        pieces = []
        for w, b in zip(self.weights, self.biases):
            pieces.append(w.ravel())
            pieces.append(b)
        return np.concatenate(pieces)


class GradTape:
    """Record of one mlp_forward pass, consumable by backward()."""

    __slots__ = ("tape", "taped", "x_leaf", "out_var", "single")

    def __init__(self, tape: ad.Tape, taped: TapedParams, x_leaf: ad.Var, out_var: ad.Var, single: bool):
        self.tape = tape
        self.taped = taped
        self.x_leaf = x_leaf
        self.out_var = out_var
        self.single = single


def mlp_forward(params: MlpParams, x: Array) -> tuple[Array, GradTape]:
    """Forward pass that records the computation for one backward sweep."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != params.in_dim:
        raise DimensionError(f"input has {xb.shape[1]} features, network expects {params.in_dim}")
    tape = ad.Tape()
    taped = TapedParams(params, tape)
    x_leaf = tape.leaf(xb)
    out_var = taped.apply(x_leaf)
    out = out_var.value[0] if single else out_var.value
    return out, GradTape(tape, taped, x_leaf, out_var, single)


def backward(tape: GradTape, output_grad: Array) -> MlpGrads:
    """Jacobian-transpose product of the recorded pass; consumes the tape."""
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.single:
        g = g[None, :]
    if g.shape != tape.out_var.value.shape:
        raise DimensionError(
            f"output_grad shape {g.shape} does not match output {tape.out_var.value.shape}"
        )
    tape.tape.backward(tape.out_var, g)
    tp = tape.taped
    weights = [
        w.grad if w.grad is not None else np.zeros_like(w.value) for w in tp.w_leaves
    ]
    biases = [
        b.grad if b.grad is not None else np.zeros_like(b.value) for b in tp.b_leaves
    ]
    xg = tape.x_leaf.grad
    if xg is None:
        xg = np.zeros_like(tape.x_leaf.value)
    return MlpGrads(weights, biases, xg[0] if tape.single else xg)


# ------------------------------------------------------------------ optimizer

@dataclass
class AdamState:
    """First/second-moment accumulators for one flat parameter vector."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Array = field(default_factory=lambda: np.zeros(0))
    v: Array = field(default_factory=lambda: np.zeros(0))


def adam_init(size: int, lr: float = 3e-4) -> AdamState:
    return AdamState(lr=lr, m=np.zeros(size), v=np.zeros(size))


def adam_step(state: AdamState, params: MlpParams | Array, grad: Array | MlpGrads):
    """One bias-corrected Adam update, in place. Rejects non-finite gradients."""
    flat = params.flat if isinstance(params, MlpParams) else params
    g = grad.flat if isinstance(grad, MlpGrads) else np.asarray(grad, dtype=np.float64)
    if g.shape != flat.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match params {flat.shape}")
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient entries; step rejected")
    state.t += 1
    state.m += (1.0 - state.beta1) * (g - state.m)
    state.v += (1.0 - state.beta2) * (g * g - state.v)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def polyak_update(target: MlpParams, online: MlpParams, rate: float) -> MlpParams:
    """target <- rate * online + (1 - rate) * target, element-wise, in place."""
    if not target.same_architecture(online):
        raise DimensionError("polyak update across different architectures")
    if not (0.0 < rate <= 1.0):
        raise DimensionError(f"polyak rate must be in (0, 1], got {rate}")
    # literal convex combination so rate=1.0 is an exact copy
    target.flat[...] = rate * online.flat + (1.0 - rate) * target.flat
    return target


# ------------------------------------------------------------- loss primitives

def validate_expectile(tau: float) -> float:
    if not (0.0 < tau < 1.0):
        raise NumericError(f"expectile factor must lie in (0, 1), got {tau}")
    return float(tau)


def expectile_loss(residual, tau: float):
    """Asymmetric squared loss |tau - 1(x < 0)| * x^2."""
    validate_expectile(tau)
    x = np.asarray(residual, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericError("non-finite residual in expectile loss")
    weight = np.where(x < 0.0, 1.0 - tau, tau)
    out = weight * x * x
    return float(out) if out.ndim == 0 else out


def tanh_log_jacobian(pre_squash: Array) -> Array:
    """log(1 - tanh(u)^2), via the overflow-free identity 2(log 2 - u - softplus(-2u))."""
    u = np.asarray(pre_squash, dtype=np.float64)
    sp = np.maximum(-2.0 * u, 0.0) + np.log1p(np.exp(-np.abs(2.0 * u)))
    return 2.0 * (math.log(2.0) - u - sp)


def squashed_gaussian_logprob(mean, log_std, action):
    """Log density of a tanh-squashed diagonal Gaussian at `action` in (-1,1)^m.

    Accepts (m,) vectors or (B, m) batches; returns a scalar or (B,).
    Actions are clamped to |a| <= 1 - 1e-6 before inversion, matching how
    buffer actions that round to +-1 are handled everywhere else.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if np.isnan(mean).any() or np.isnan(log_std).any() or np.isnan(action).any():
        raise NumericError("NaN input to squashed_gaussian_logprob")
    single = action.ndim == 1
    mean, log_std, action = np.atleast_2d(mean), np.atleast_2d(log_std), np.atleast_2d(action)
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    a = np.clip(action, -ATANH_CLAMP, ATANH_CLAMP)
    u = np.arctanh(a)
    std = np.exp(log_std)
    z = (u - mean) / std
    gauss = -0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi)
    logp = (gauss - tanh_log_jacobian(u)).sum(axis=1)
    return float(logp[0]) if single else logp
