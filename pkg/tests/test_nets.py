"""Network forward/backward contracts, Adam, polyak, and loss primitives."""

import math

import numpy as np
import pytest
from scipy import integrate

from offboost import nets
from offboost.errors import DimensionError, NumericError, StateError

from helpers import assert_grads_match, fd_grad


def _net(sizes, activation="elu", seed=0):
    return nets.init_mlp(sizes, activation, rng=np.random.default_rng(seed))


# ------------------------------------------------------------------- forward

def test_identity_single_layer_passes_input_through():
    p = _net([2, 2], activation="identity")
    p.weights[0][...] = np.eye(2)
    p.biases[0][...] = 0.0
    out, _ = nets.mlp_forward(p, np.array([1.0, 2.0]))
    assert np.array_equal(out, [1.0, 2.0])


def test_affine_single_layer_arithmetic():
    p = _net([1, 1], activation="identity")
    p.weights[0][...] = [[2.0]]
    p.biases[0][...] = [0.5]
    out, _ = nets.mlp_forward(p, np.array([3.0]))
    assert out[0] == pytest.approx(6.5)


def test_forward_is_bitwise_deterministic():
    p = _net([3, 512, 512, 1], seed=9)
    x = np.random.default_rng(1).normal(size=3)
    a, _ = nets.mlp_forward(p, x)
    b, _ = nets.mlp_forward(p, x)
    assert np.array_equal(a, b)
    assert np.array_equal(a, nets.mlp_eval(p, x))


def test_forward_rejects_wrong_input_width():
    p = _net([3, 4, 1])
    with pytest.raises(DimensionError):
        nets.mlp_forward(p, np.zeros(5))


# ------------------------------------------------------------------ backward

def test_backward_product_rule():
    p = _net([1, 1], activation="identity")
    p.weights[0][...] = [[2.0]]
    p.biases[0][...] = [0.0]
    _, tape = nets.mlp_forward(p, np.array([3.0]))
    grads = nets.backward(tape, np.array([1.0]))
    assert grads.weights[0][0, 0] == pytest.approx(3.0)
    assert grads.input[0] == pytest.approx(2.0)


def test_backward_zero_output_grad_gives_exact_zeros():
    p = _net([4, 8, 2], seed=3)
    _, tape = nets.mlp_forward(p, np.random.default_rng(0).normal(size=4))
    grads = nets.backward(tape, np.zeros(2))
    assert not grads.flat.any()
    assert not grads.input.any()


def test_backward_consumes_tape():
    p = _net([2, 2, 1])
    _, tape = nets.mlp_forward(p, np.zeros(2))
    nets.backward(tape, np.ones(1))
    with pytest.raises(StateError):
        nets.backward(tape, np.ones(1))


def test_backward_matches_finite_differences_elu():
    p = _net([4, 16, 1], seed=5)
    x = np.random.default_rng(8).normal(size=4)
    _, tape = nets.mlp_forward(p, x)
    grads = nets.backward(tape, np.ones(1))

    def f(flat):
        q = nets.MlpParams(p.layer_sizes, p.activation, flat.copy())
        return float(nets.mlp_eval(q, x)[0])

    assert_grads_match(grads.flat, fd_grad(f, p.flat))


def _min_preactivation(p, x):
    h = np.asarray(x)[None, :]
    worst = np.inf
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w.T + b
        if i < len(p.weights) - 1:
            worst = min(worst, float(np.abs(h).min()))
            h = nets._ACT_EVAL[p.activation](h)
    return worst


def test_gradients_match_fd_on_random_networks():
    """Module invariant: 100 random nets (depth <= 3, width <= 32), random scalar losses."""
    rng = np.random.default_rng(2024)
    for trial in range(100):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(2, 9))] + [int(rng.integers(2, 33)) for _ in range(depth)]
        act = str(rng.choice(["elu", "relu", "tanh", "identity"]))
        p = _net(sizes, act, seed=trial)
        # keep pre-activations away from the relu kink, where central
        # differences are not a valid derivative oracle
        x = rng.normal(size=sizes[0])
        while act == "relu" and _min_preactivation(p, x) < 1e-3:
            x = rng.normal(size=sizes[0])
        c = rng.normal(size=sizes[-1])

        out, tape = nets.mlp_forward(p, x)
        # random scalar loss: c . out + 0.5 ||out||^2
        grads = nets.backward(tape, c + out)

        def f(flat, c=c, x=x, p=p):
            q = nets.MlpParams(p.layer_sizes, p.activation, flat.copy())
            o = nets.mlp_eval(q, x)
            return float(c @ o + 0.5 * o @ o)

        assert_grads_match(grads.flat, fd_grad(f, p.flat))


# ---------------------------------------------------------------------- adam

def test_adam_zero_gradient_is_a_fixed_point():
    p = _net([2, 3, 1], seed=1)
    before = p.flat.copy()
    st = nets.adam_init(p.size, lr=0.1)
    for _ in range(3):
        nets.adam_step(st, p, np.zeros(p.size))
    assert np.array_equal(p.flat, before)
    assert st.t == 3


def test_adam_moments_decay_toward_zero_without_gradient():
    st = nets.adam_init(4, lr=0.1)
    st.m[...] = 1.0
    st.v[...] = 1.0
    theta = np.zeros(4)
    for _ in range(50):
        nets.adam_step(st, theta, np.zeros(4))
    np.testing.assert_allclose(st.m, 0.9**50, rtol=1e-10)
    np.testing.assert_allclose(st.v, 0.999**50, rtol=1e-10)


def test_adam_first_step_moves_by_learning_rate():
    # scalar parameter 0, constant gradient 1, lr 0.1: bias correction makes
    # m_hat = v_hat = 1 at t=1, so the step is lr/(1 + eps) ~ lr.
    p = _net([1, 1], activation="identity")
    p.flat[...] = 0.0
    st = nets.adam_init(p.size, lr=0.1)
    nets.adam_step(st, p, np.ones(p.size))
    assert st.t == 1
    np.testing.assert_allclose(p.flat, -0.1, rtol=1e-6)


def test_adam_converges_on_scalar_quadratic():
    # run the optimizer against an independently coded Adam recurrence on
    # f(theta) = theta^2 from theta = 1; at lr 3e-4 the step size is ~lr per
    # iteration, so |theta| < 0.05 needs ~5000 steps, not 1000
    theta = np.array([1.0])
    st = nets.adam_init(1, lr=3e-4)

    th, m, v = 1.0, 0.0, 0.0
    b1, b2, lr, eps = 0.9, 0.999, 3e-4, 1e-8
    for t in range(1, 5001):
        nets.adam_step(st, theta, 2.0 * theta)
        g = 2.0 * th
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        th -= lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
        if t == 1000:
            assert theta[0] == pytest.approx(th, rel=1e-10)
            assert theta[0] == pytest.approx(0.7205817926005327, rel=1e-12)
    assert abs(theta[0]) < 0.05
    assert theta[0] == pytest.approx(th, rel=1e-9)


def test_adam_rejects_non_finite_gradients():
    p = _net([1, 1])
    st = nets.adam_init(p.size)
    before = p.flat.copy()
    with pytest.raises(NumericError):
        nets.adam_step(st, p, np.array([np.nan, 0.0]))
    assert np.array_equal(p.flat, before)


# -------------------------------------------------------------------- polyak

def test_polyak_full_rate_copies():
    a, b = _net([2, 4, 1], seed=1), _net([2, 4, 1], seed=2)
    nets.polyak_update(a, b, 1.0)
    assert np.array_equal(a.flat, b.flat)


def test_polyak_convex_combination():
    a, b = _net([1, 1]), _net([1, 1])
    a.flat[...] = 0.0
    b.flat[...] = 1.0
    nets.polyak_update(a, b, 0.005)
    np.testing.assert_allclose(a.flat, 0.005)


def test_polyak_geometric_decay():
    a, b = _net([1, 1]), _net([1, 1])
    a.flat[...] = 0.0
    b.flat[...] = 1.0
    rho, n = 0.1, 20
    for _ in range(n):
        nets.polyak_update(a, b, rho)
    np.testing.assert_allclose(1.0 - a.flat[0], (1.0 - rho) ** n, rtol=1e-12)


def test_polyak_rejects_architecture_mismatch():
    with pytest.raises(DimensionError):
        nets.polyak_update(_net([2, 3, 1]), _net([2, 4, 1]), 0.5)


# ----------------------------------------------------------- expectile loss

def test_expectile_loss_symmetric_at_half():
    for x in (-2.0, -0.3, 0.7, 4.0):
        assert nets.expectile_loss(x, 0.5) == pytest.approx(0.5 * x * x)


def test_expectile_loss_asymmetry_direct_values():
    assert nets.expectile_loss(1.0, 0.9) == pytest.approx(0.9)
    assert nets.expectile_loss(-1.0, 0.9) == pytest.approx(0.1)


def test_two_point_expectile_minimizer_is_tau():
    # grid-search oracle: minimizer of L(0 - m) + L(1 - m) over m
    tau = 0.9
    grid = np.linspace(0.0, 1.0, 200001)
    total = nets.expectile_loss(0.0 - grid, tau) + nets.expectile_loss(1.0 - grid, tau)
    m_star = grid[np.argmin(total)]
    assert m_star == pytest.approx(tau, abs=1e-4)


def test_expectile_loss_rejects_bad_tau():
    with pytest.raises(NumericError):
        nets.expectile_loss(1.0, 1.2)


# --------------------------------------------------- squashed gaussian logprob

def test_logprob_standard_normal_at_mode():
    lp = nets.squashed_gaussian_logprob(np.zeros(1), np.zeros(1), np.zeros(1))
    assert lp == pytest.approx(-0.5 * math.log(2.0 * math.pi), abs=1e-12)


def test_logprob_factorizes_over_dimensions():
    rng = np.random.default_rng(4)
    mean, log_std = rng.normal(size=3), rng.uniform(-1, 0, size=3)
    action = np.tanh(rng.normal(size=3))
    joint = nets.squashed_gaussian_logprob(mean, log_std, action)
    parts = sum(
        nets.squashed_gaussian_logprob(mean[i : i + 1], log_std[i : i + 1], action[i : i + 1])
        for i in range(3)
    )
    assert joint == pytest.approx(parts, abs=1e-12)


def test_logprob_matches_pushforward_density_pointwise():
    # density of tanh(X), X ~ N(0,1), at a = tanh(1)
    a = math.tanh(1.0)
    expected = math.exp(-0.5) / math.sqrt(2.0 * math.pi) / (1.0 - a * a)
    got = math.exp(nets.squashed_gaussian_logprob(np.zeros(1), np.zeros(1), np.array([a])))
    assert abs(got - expected) < 1e-6


def test_logprob_density_integrates_to_one():
    def density(a):
        return math.exp(
            nets.squashed_gaussian_logprob(np.zeros(1), np.zeros(1), np.array([a]))
        )

    total, err = integrate.quad(density, -1.0, 1.0, limit=200)
    assert err < 1e-6
    assert total == pytest.approx(1.0, abs=1e-4)


def test_logprob_batched_matches_loop():
    rng = np.random.default_rng(12)
    mean = rng.normal(size=(5, 2))
    log_std = rng.uniform(-2, 1, size=(5, 2))
    action = np.tanh(rng.normal(size=(5, 2)))
    batched = nets.squashed_gaussian_logprob(mean, log_std, action)
    for i in range(5):
        assert batched[i] == pytest.approx(
            nets.squashed_gaussian_logprob(mean[i], log_std[i], action[i])
        )


def test_logprob_clamps_boundary_actions_instead_of_failing():
    lp = nets.squashed_gaussian_logprob(np.zeros(1), np.zeros(1), np.array([1.0]))
    assert np.isfinite(lp)


def test_logprob_rejects_nan():
    with pytest.raises(NumericError):
        nets.squashed_gaussian_logprob(np.array([np.nan]), np.zeros(1), np.zeros(1))
