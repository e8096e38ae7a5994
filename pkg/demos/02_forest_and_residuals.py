"""Grow a regression forest and inspect its in-sample residual matrix.

The residual matrix has one row per training observation and one column per
tree.  Its column means and covariance are what the hedged weights are
estimated from.
"""

# %%
import numpy as np

from hedgeforest import ForestConfig, fit_forest, generate_friedman, residual_matrix, subsample_split
from hedgeforest.bench import bias_variance_check

ds = generate_friedman(2400, noise_sd=1.0, seed=0)
split = subsample_split(ds, 400, seed=1)
X, y = ds.features[split.train_indices], ds.target[split.train_indices]
Xt, yt = ds.features[split.test_indices], ds.target[split.test_indices]

forest = fit_forest(X, y, ForestConfig(seed=2))
print(f"{forest.num_trees} trees, mtry={forest.config.resolve_mtry(ds.d)}, "
      f"mean node count {np.mean([t.node_count for t in forest.trees]):.0f}")

# %% residual matrix and bootstrap bookkeeping
R = residual_matrix(forest, X, y)
print("residual matrix:", R.shape)
print(f"share of (row, tree) pairs that are in bag: {1 - R.oob_mask.mean():.3f} "
      f"(1 - (1 - 1/n)^n = {1 - (1 - 1 / len(y)) ** len(y):.3f})")

# %% each column's MSE splits into squared bias plus variance
mse, bias2, var = bias_variance_check(R.values[:, 0])
print(f"tree 0: in-sample MSE {mse:.3f} = bias^2 {bias2:.4f} + var {var:.3f}")

# %% in-sample errors are optimistic; test MSE of the averaged forest
print(f"forest test MSE {np.mean((yt - forest.predict(Xt)) ** 2):.3f}, "
      f"mean single-tree in-sample MSE {np.mean(R.values ** 2):.3f}")
