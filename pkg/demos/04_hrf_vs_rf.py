"""Hedged random forest against the plain and Winham-weighted forests.

Twenty train/test repetitions on the Friedman #1 problem.  Ratios below one
favour the hedged forest.
"""

# %%
from hedgeforest.bench import ExperimentConfig, cell_ratios, resolve_dataset, run_cell

config = ExperimentConfig(
    datasets=("friedman1",), n_train=(400,), B=20,
    kappas=(1.0, 2.0, "inf"), estimators=("sample", "nonlinear_shrinkage"),
    friedman={"n_total": 2400, "noise_sd": 1.0, "seed": 0},
)
cell = run_cell(resolve_dataset("friedman1", config), 400, config)

# %% root mean squared test error per method
for m in cell.methods:
    print(f"{m.name:>6} kappa={'-' if m.kappa is None else m.kappa!s:>4} {m.estimator or '':>20}  RMSE {cell.rmse(m.key):.4f}")

# %% ratios against RF, WRF and the sample-covariance kappa=1 variant
for row in cell_ratios(cell):
    print(f"{row['comparison']:>10}  kappa={row['kappa']:>4}  {row['estimator']:>20}  {row['ratio']:.4f}")
