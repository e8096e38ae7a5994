"""Mean and covariance estimates of forecast errors from a residual matrix.

Every covariance estimator here divides by the number of rows ``n`` (not
``n - 1``) after removing column means, except QIS, which follows its
published reference implementation and divides by ``n - 1``.  Any global
rescaling of the covariance leaves the hedged weights unchanged, so the
divisor only matters when comparing matrices across estimators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import isotonic_regression

QIS_MIN_ROWS = 12


class Estimator(str, Enum):
    SAMPLE = "sample"
    LINEAR_SHRINKAGE = "linear_shrinkage"
    NONLINEAR_SHRINKAGE = "nonlinear_shrinkage"

    @classmethod
    def parse(cls, value) -> "Estimator":
        if isinstance(value, cls):
            return value
        aliases = {"linear": cls.LINEAR_SHRINKAGE, "nonlinear": cls.NONLINEAR_SHRINKAGE,
                   "qis": cls.NONLINEAR_SHRINKAGE}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            choices = [e.value for e in cls] + sorted(aliases)
            raise ValueError(f"unknown estimator {value!r}; choose from {choices}") from None


@dataclass(frozen=True)
class MomentEstimates:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    estimator: Estimator

    def to_json(self) -> str:
        return json.dumps({
            "estimator": self.estimator.value,
            "mu_hat": self.mu_hat.tolist(),
            "sigma_hat": self.sigma_hat.tolist(),
        })


def _as_matrix(R) -> np.ndarray:
    values = getattr(R, "values", R)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"expected a non-empty 2-D residual matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("residual matrix contains non-finite values")
    return values


def mean_estimate(R) -> np.ndarray:
    return _as_matrix(R).mean(axis=0)


def sample_covariance(R) -> np.ndarray:
    """Demeaned cross-product over ``n``: ``(R - mean)'(R - mean) / n``."""
    values = _as_matrix(R)
    n = values.shape[0]
    if n < 2:
        raise ValueError("sample covariance needs at least 2 rows")
    Z = values - values.mean(axis=0)
    S = Z.T @ Z / n
    return 0.5 * (S + S.T)


def linear_shrinkage(R, shrinkage: float | None = None) -> np.ndarray:
    """Ledoit-Wolf (2004) shrinkage toward ``trace(S)/p * I``.

    The intensity is estimated from the data unless ``shrinkage`` is given,
    in which case it is used as-is (it must lie in [0, 1]).
    """
    values = _as_matrix(R)
    n, p = values.shape
    S = sample_covariance(values)
    nu = np.trace(S) / p
    target = nu * np.eye(p)
    if shrinkage is None:
        Z = values - values.mean(axis=0)
        d2 = np.sum((S - target) ** 2)
        # sum_k ||z_k z_k' - S||_F^2 = sum_k ||z_k||^4 - n ||S||_F^2
        b2_bar = (np.sum(np.sum(Z ** 2, axis=1) ** 2) - n * np.sum(S ** 2)) / n ** 2
        b2 = min(b2_bar, d2)
        shrinkage = 0.0 if d2 <= 0 else b2 / d2
    elif not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage intensity must lie in [0, 1]")
    if shrinkage == 0.0:
        return S
    return shrinkage * target + (1.0 - shrinkage) * S


def qis_eigenvalues(R) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample eigenvalues, QIS-shrunk eigenvalues and shared eigenvectors.

    Implements quadratic-inverse shrinkage (Ledoit and Wolf, 2022) with
    column demeaning, effective sample size ``n - 1`` and the reference
    smoothing bandwidth.  Eigenvalues are returned in ascending order.
    """
    values = _as_matrix(R)
    N, p = values.shape
    if N < QIS_MIN_ROWS:
        raise ValueError(f"QIS needs at least {QIS_MIN_ROWS} rows, got {N}")
    if p < 2:
        raise ValueError("QIS needs at least 2 columns")

    Z = values - values.mean(axis=0)
    n = N - 1
    c = p / n
    sample = Z.T @ Z / n
    sample = 0.5 * (sample + sample.T)
    lam, U = np.linalg.eigh(sample)
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if total <= 0.0:
        return lam, np.zeros(p), U

    # near-duplicate columns can leave exact zeros among the non-null spectrum
    lam_work = np.maximum(lam, total * 1e-14)

    h = min(c ** 2, 1 / c ** 2) ** 0.35 / p ** 0.35
    inv = 1.0 / lam_work[max(1, p - n + 1) - 1:]
    Lj = np.broadcast_to(inv[:, None], (inv.size, inv.size))
    Lj_i = Lj - Lj.T
    denom = Lj_i ** 2 + Lj ** 2 * h ** 2
    theta = np.mean(Lj * Lj_i / denom, axis=0)
    Htheta = np.mean(Lj * Lj * h / denom, axis=0)
    Atheta2 = theta ** 2 + Htheta ** 2

    if p <= n:
        delta = 1.0 / ((1 - c) ** 2 * inv + 2 * c * (1 - c) * inv * theta + c ** 2 * inv * Atheta2)
    else:
        delta0 = 1.0 / ((c - 1) * np.mean(inv))
        delta = np.concatenate([np.full(p - n, delta0), 1.0 / (inv * Atheta2)])

    # the oracle shrinker is monotone; project the estimate onto that cone
    delta = isotonic_regression(delta).x
    delta = np.clip(delta, 0.0, None)
    delta = delta * (total / delta.sum())
    return lam, delta, U


def nonlinear_shrinkage_qis(R) -> np.ndarray:
    _, delta, U = qis_eigenvalues(R)
    sigma = (U * delta) @ U.T
    return 0.5 * (sigma + sigma.T)


def estimate_moments(R, estimator="nonlinear_shrinkage") -> MomentEstimates:
    estimator = Estimator.parse(estimator)
    mu = mean_estimate(R)
    if estimator is Estimator.SAMPLE:
        sigma = sample_covariance(R)
    elif estimator is Estimator.LINEAR_SHRINKAGE:
        sigma = linear_shrinkage(R)
    else:
        sigma = nonlinear_shrinkage_qis(R)
    return MomentEstimates(mu_hat=mu, sigma_hat=sigma, estimator=estimator)
