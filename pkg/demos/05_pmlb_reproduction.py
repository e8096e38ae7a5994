"""Optional multi-hour run over the 14 PMLB regression datasets.

Fetch the data once (this downloads about 30 MB)::

    hedgeforest fetch --dest data

then run this script.  ``B`` and the training sizes can be reduced for a
quicker look; the full grid uses B=100.
"""

# %%
import sys
from pathlib import Path

from hedgeforest.bench import ExperimentConfig, run_experiment
from hedgeforest.data import load_registry

B = int(sys.argv[1]) if len(sys.argv) > 1 else 100
names = tuple(load_registry())

config = ExperimentConfig(
    datasets=names,
    n_train=(200, 400, 600, 800, 1000, 2000, 3000, 4000, 5000),
    B=B,
    kappas=(2.0,),
    estimators=("nonlinear_shrinkage",),
    data_dir="data",
)
manifest = run_experiment(config, Path("results/pmlb"), threads=1)

# %% summary across datasets per training size
import csv

with open("results/pmlb/summary.csv") as fh:
    for row in csv.DictReader(fh):
        if row["comparison"] == "HRF/RF":
            print(f"n={row['n_train']:>5}  median {float(row['median']):.3f}  "
                  f"min {float(row['min']):.3f}  max {float(row['max']):.3f}")
