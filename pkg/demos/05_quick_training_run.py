"""A three-minute pendulum run at reduced scale, then a checkpoint round trip.

The defaults target full-scale training (hidden 512x512, batch 512, buffer
1e6); here everything is shrunk so the whole loop is visible quickly.
"""

import numpy as np

from offboost import agent as ag

config = dict(
    env="pendulum", seed=0, steps=9000, warmup_steps=500,
    batch_size=128, hidden=(64, 64), buffer_capacity=9000,
    eval_interval=1000, eval_episodes=5, gate_mode="adaptive",
)

agent = ag.Agent(config)
log = agent.train()

print("step    eval return   gate fraction   alpha")
for row in log.rows:
    print(f"{row['env_step']:6d} {row['eval_return_mean']:12.1f} "
          f"{row['gate_fraction']:14.2f} {row['alpha']:7.3f}")

ag.checkpoint_save(agent, "/tmp/offboost_demo_checkpoint.npz")
resumed = ag.checkpoint_load("/tmp/offboost_demo_checkpoint.npz")
same = np.array_equal(resumed.policy.net.flat, agent.policy.net.flat)
print(f"\ncheckpoint round trip preserves every parameter bit: {same}")

agent.config.steps = resumed.config.steps = 10_000
a = agent.train()
b = resumed.train()
print("resumed run matches the uninterrupted continuation:",
      [r["eval_return_mean"] for r in a.rows] == [r["eval_return_mean"] for r in b.rows])
