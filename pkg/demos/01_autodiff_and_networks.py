"""Tour of the numeric core: tape-based gradients, Adam, and the loss
primitives. Everything is plain float64 numpy under the hood."""

import numpy as np

from offboost import autodiff as ad
from offboost import nets

rng = np.random.default_rng(0)

# --- record a forward pass, sweep it backward -------------------------------
net = nets.init_mlp([3, 16, 1], "elu", rng=rng)
x = rng.normal(size=3)
out, tape = nets.mlp_forward(net, x)
grads = nets.backward(tape, np.ones(1))
print(f"f(x) = {out[0]:+.4f}, |df/dparams| = {np.linalg.norm(grads.flat):.4f}, "
      f"df/dx = {grads.input}")

# cross-check one coordinate against a central finite difference
i = 7
h = 1e-6
shifted = net.copy()
shifted.flat[i] += h
up = nets.mlp_eval(shifted, x)[0]
shifted.flat[i] -= 2 * h
down = nets.mlp_eval(shifted, x)[0]
print(f"coordinate {i}: analytic {grads.flat[i]:+.8f}, "
      f"finite difference {(up - down) / (2 * h):+.8f}")

# --- composite graphs: the same engine drives every loss --------------------
tape = ad.Tape()
w = tape.leaf(np.array([[0.5]]))
loss = ad.vmean(ad.square(ad.sub(ad.tanh(w), ad.const(0.9))))
tape.backward(loss)
print(f"d/dw mean((tanh(w) - 0.9)^2) at w=0.5: {w.grad[0, 0]:+.6f}")

# --- Adam puts it together ---------------------------------------------------
theta = np.array([2.5])
opt = nets.adam_init(1, lr=0.05)
for step in range(400):
    nets.adam_step(opt, theta, 2.0 * (theta - 1.0))  # gradient of (theta-1)^2
print(f"Adam on (theta-1)^2: theta -> {theta[0]:.4f} after 400 steps")

# --- the asymmetric expectile loss ------------------------------------------
for tau in (0.5, 0.9):
    print(f"tau={tau}: loss(+1) = {nets.expectile_loss(1.0, tau):.2f}, "
          f"loss(-1) = {nets.expectile_loss(-1.0, tau):.2f}")

# --- squashed-Gaussian log density -------------------------------------------
lp = nets.squashed_gaussian_logprob(np.zeros(1), np.zeros(1), np.array([0.0]))
print(f"log p(a=0 | mean 0, std 1, tanh-squashed) = {lp:.4f} "
      f"(= -0.5 log 2 pi = {-0.5 * np.log(2 * np.pi):.4f})")
