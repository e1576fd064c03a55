"""Expectile regression is the whole trick for valuing the buffer's implicit
optimum: as tau -> 1, the regressed value approaches the max of Q over the
dataset's actions, without ever evaluating an action outside the data."""

import numpy as np

from offboost import critic
from offboost.replay import Batch
from offboost.tabular import expectile_of_set

# the exact expectile of a finite set, by bisection on the balance condition
values = [0.0, 1.0, 5.0]
for tau in (0.5, 0.9, 0.99):
    print(f"expectile_{tau}({values}) = {expectile_of_set(values, tau):.4f}")
print("(tau=0.5 is the mean; tau -> 1 walks toward the max)\n")

# the neural head reproduces it: one state, three dataset actions with
# q-values {0, 1, 5}, trained by the asymmetric loss
rng = np.random.default_rng(0)
s = np.tile([[1.0, 0.0]], (3, 1))
a = np.array([[-0.6], [0.0], [0.6]])
x = np.concatenate([s, a], axis=1)
pair = critic.make_critic_pair(2, 1, (16, 16), "elu", 1e-2, rng)
for _ in range(4000):  # pin the q pair to the dataset q-values first
    critic._twin_mse_step(pair, x, np.array([0.0, 1.0, 5.0]))
critic.polyak_pair(pair, 1.0)

batch = Batch(s, a, np.zeros((3, 1)), s, np.zeros((3, 1)))
for tau in (0.5, 0.9, 0.99):
    head = critic.make_value_head(2, (16, 16), "elu", 2e-2, tau, np.random.default_rng(1))
    for _ in range(6000):
        critic.update_v_mu(head, pair, batch)
    learned = critic.value_of(head, s[:1])[0]
    print(f"tau={tau}: neural head converges to {learned:.3f} "
          f"(exact expectile {expectile_of_set([0.0, 1.0, 5.0], tau):.3f})")
