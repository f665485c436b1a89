"""
Three labels for one session
============================

A first-level item earns reward directly, and a click on it opens a
second-level feed whose engagements also belong to it.  S1 keeps only the
first-level reward, S2 adds the second-level rewards discounted by their
rank, S3 adds them undiscounted.  Here we print all three for the clicked
items of a few sessions.
"""

import numpy as np

from nestedltr.core import ALL_LABELS, ScalarizationWeights
from nestedltr.labeling import label_matrix
from nestedltr.simulator import WorldConfig, build_world, simulate_logs

w1 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.5)
w2 = ScalarizationWeights(likes=1.0, shares=2.0, favs=1.5, clicks=0.0)

world = build_world(WorldConfig(n_users=100, n_items=800), seed=3)
shown = 0
for log in simulate_logs(world, 200, seed=4):
    if not log.entered_l2.any():
        continue
    labels = label_matrix(log, w1, w2)
    print(f"session {log.session_id} (user {log.user_id})")
    print("  rank  item    " + "  ".join(f"{k.value:>6}" for k in ALL_LABELS[:3]))
    for i in np.flatnonzero(log.entered_l2):
        row = labels[i, :3]
        print(f"  {i + 1:>4}  {log.l1_slate[i]:>4}  " + "  ".join(f"{v:6.2f}" for v in row))
    shown += 1
    if shown == 3:
        break

# items nobody clicked have no second-level feedback, so the labels agree
print("\nunclicked rows with S1 == S3:",
      bool(np.all(labels[~log.entered_l2, 0] == labels[~log.entered_l2, 2])))
