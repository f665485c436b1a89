"""
Training a LambdaRank ensemble
==============================

Simulate logs on a small world, build the labelled dataset, and fit one
model per synthetic label.  Training keeps the tree count with the best
validation DCG@10 and stops after `early_stopping_patience` rounds
without improvement.
"""

from nestedltr.core import SYNTHETIC_LABELS, ScalarizationWeights
from nestedltr.labeling import build_dataset, negative_sample, stratified_split
from nestedltr.ranker import TrainConfig, fit
from nestedltr.simulator import WorldConfig, build_world, simulate_logs

w1 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.5)
w2 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.0)

world = build_world(WorldConfig(n_users=300, n_items=1500), seed=5)
data = build_dataset(world, simulate_logs(world, 4000, seed=6), w1, w2)
data = negative_sample(data, 0.05, seed=7)
train, validation, test = stratified_split(data, seed=8)
print(f"{len(train.groups)} / {len(validation.groups)} / {len(test.groups)} sessions, "
      f"positive rate {data.positive_rate:.3f}")

config = TrainConfig(num_trees_max=200, early_stopping_patience=25, learning_rate=0.1)
for label in SYNTHETIC_LABELS:
    model = fit(train, validation, label, config)
    meta = model.training_meta
    hist = meta["validation_history"]
    print(f"{label.value}: kept {model.n_trees} trees of {meta['iterations']} grown, "
          f"validation DCG@10 {hist[0]:.3f} -> {meta['best_validation_dcg']:.3f}")
