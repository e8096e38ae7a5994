"""Hedged forecast combinations applied to the regression random forest."""

__version__ = "0.1.0"

from .data import Dataset, Split, generate_friedman, load_tsv, subsample_split, write_tsv
from .forest import (
    FittedForest,
    ForestConfig,
    RegressionTree,
    ResidualMatrix,
    fit_forest,
    predict_tree,
    residual_matrix,
    tree_prediction_matrix,
)
from .hedge import (
    HedgeProblem,
    WeightVector,
    combine,
    oracle_weights_unconstrained,
    solve_hedged_weights,
    winham_weights,
)
from .moments import (
    Estimator,
    MomentEstimates,
    estimate_moments,
    linear_shrinkage,
    mean_estimate,
    nonlinear_shrinkage_qis,
    sample_covariance,
)

__all__ = [
    "Dataset", "Split", "generate_friedman", "load_tsv", "subsample_split", "write_tsv",
    "FittedForest", "ForestConfig", "RegressionTree", "ResidualMatrix", "fit_forest",
    "predict_tree", "residual_matrix", "tree_prediction_matrix",
    "HedgeProblem", "WeightVector", "combine", "oracle_weights_unconstrained",
    "solve_hedged_weights", "winham_weights",
    "Estimator", "MomentEstimates", "estimate_moments", "linear_shrinkage", "mean_estimate",
    "nonlinear_shrinkage_qis", "sample_covariance",
]
