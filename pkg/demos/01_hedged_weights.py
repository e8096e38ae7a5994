"""Hedged combination weights on a two-method toy problem.

Two forecasting methods with error variances 1 and 4 and error covariance
1.5.  Equal weighting is far from optimal; the gross-exposure bound kappa
controls how far the combination may short the worse method.
"""

# %%
import math

import numpy as np

from hedgeforest import HedgeProblem, oracle_weights_unconstrained, solve_hedged_weights

mu = np.zeros(2)
sigma = np.array([[1.0, 1.5], [1.5, 4.0]])

# %% MSE of equal weighting versus the hedged optimum over a kappa grid
w_eq = np.array([0.5, 0.5])
print(f"equal weights: MSE {w_eq @ sigma @ w_eq:.4f}")
for kappa in (1.0, 1.25, 1.5, 2.0, math.inf):
    wv = solve_hedged_weights(HedgeProblem(mu, sigma, kappa))
    print(f"kappa={kappa:<5}  w={np.round(wv.w, 4)}  MSE {wv.objective_value:.4f}  "
          f"||w||_1={wv.gross_exposure:.3f}")

# %% kappa=1 forbids short positions; without a bound the closed form applies
print("closed form:", oracle_weights_unconstrained(mu, sigma).w)

# %% a common bias enters through (w'mu)^2; weights on biased methods shrink
mu_biased = np.array([0.0, 1.0])
for kappa in (1.0, 2.0):
    wv = solve_hedged_weights(HedgeProblem(mu_biased, np.eye(2), kappa))
    print(f"biased second method, kappa={kappa}: w={np.round(wv.w, 4)}")

# %% rescaling (mu, Sigma) -> (c mu, c^2 Sigma) leaves the weights unchanged
base = solve_hedged_weights(HedgeProblem(mu_biased, sigma, 1.5)).w
scaled = solve_hedged_weights(HedgeProblem(1e3 * mu_biased, 1e6 * sigma, 1.5)).w
print("max weight change under rescaling:", np.abs(base - scaled).max())
