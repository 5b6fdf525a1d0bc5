# # Learning XOR with hard axis-aligned trees
#
# A single axis-aligned split cannot separate the four XOR clusters, but a
# depth-2 tree can.  This script builds the dataset, trains a small ensemble
# and looks at what it learned.

import numpy as np

from grande import TrainConfig, fit, predict_proba
from grande.explain import prune_tree, render_tree

# ## The data
#
# Four Gaussian blobs at (+-1, +-1); the label is 1 when exactly one
# coordinate is positive.

rng = np.random.default_rng(0)
corner = rng.integers(0, 2, (400, 2))
x = (2 * corner - 1) + rng.normal(0.0, 0.3, (400, 2))
y = corner[:, 0] ^ corner[:, 1]
print("class balance:", np.bincount(y))

# ## Training
#
# 128 trees of depth 2 are plenty here.  Training stops early once the
# validation loss has not improved for 25 epochs.

config = TrainConfig(n_estimators=128, depth=2, max_epochs=60, seed=0)
params, history = fit(x[:320], y[:320], config=config)
print(f"trained {len(history)} epochs, best validation loss "
      f"{min(h['valid_loss'] for h in history):.4f}")

accuracy = ((predict_proba(x[320:], params) >= 0.5) == y[320:]).mean()
print(f"held-out accuracy: {accuracy:.3f}")

# ## One tree, pruned
#
# Every tree is a plain if/else program at prediction time.  Pruning
# against the training data drops branches no sample reaches.

tree = prune_tree(params, 0, x[:320])
print(render_tree(tree, feature_names=["x0", "x1"]))

# ## The decision surface on a grid

grid = np.linspace(-2, 2, 9)
gx, gy = np.meshgrid(grid, grid)
surface = predict_proba(np.column_stack([gx.ravel(), gy.ravel()]), params).reshape(gx.shape)
for row in surface[::-1]:
    print(" ".join("#" if p >= 0.5 else "." for p in row))
