"""
Position bias in the simulated feeds
====================================

The simulator examines rank i with probability 1/log2(1+i) on both feed
levels.  We log sessions under a random ranking, compare the observed
examination rates with that curve, then show that dividing first-level
rewards by the examination probability flattens the position bias.
"""

import numpy as np

from nestedltr.core import ScalarizationWeights, discounts
from nestedltr.simulator import WorldConfig, build_world, logging_batches

world = build_world(WorldConfig(n_users=300, n_items=1500), seed=1)
batch = next(logging_batches(world, 50_000, seed=2, chunk=50_000))

# examination frequency per first-level rank against the model curve
observed = batch.examined_l1.mean(axis=0)
print("rank  observed  1/log2(1+i)")
for i in range(0, world.slate_size, 3):
    print(f"{i + 1:>4}  {observed[i]:.4f}    {discounts(world.slate_size)[i]:.4f}")

# second level: only visits that were actually entered count
inside = batch.examined_l2[batch.entered_l2]
print(f"\n{len(inside)} second-level visits, rank-2 examination {inside[:, 1].mean():.4f}"
      f" (model {discounts(world.l2_size)[1]:.4f})")

# the random logger puts every item at every rank equally often, so the mean
# reward per rank only reflects position bias; debiasing removes it
w1 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.5)
reward = batch.l1_obs @ w1.as_array()
raw = reward.mean(axis=0)
corrected = (reward / discounts(world.slate_size)).mean(axis=0)
print("\nrank  raw reward  debiased")
for i in (0, 4, 9, 19):
    print(f"{i + 1:>4}  {raw[i]:.4f}      {corrected[i]:.4f}")
