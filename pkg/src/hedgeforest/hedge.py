"""Hedged forecast-combination weights.

The combination ``f_w(x) = sum_j w_j M_j(x)`` has mean squared error
``(w'mu)^2 + w'Sigma w`` when ``mu`` and ``Sigma`` are the mean and
covariance of the individual forecast errors.  Hedged weights minimise the
plug-in version of that quantity subject to ``sum(w) = 1`` and a
gross-exposure bound ``||w||_1 <= kappa``.  With ``Q = Sigma + mu mu'`` the
objective is the quadratic form ``w'Qw``.

``kappa = math.inf`` is the unbounded case and drops the L1 constraint.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

RIDGE = 1e-10
PSD_TOL = 1e-8
FEAS_TOL = 1e-8
POLISH_START = 1e-3
ZERO_OBJECTIVE = 1e-12


class NotPSDError(ValueError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class HedgeProblem:
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    kappa: float = 2.0

    def __post_init__(self):
        mu = np.asarray(self.mu_hat, dtype=np.float64).ravel()
        sigma = np.asarray(self.sigma_hat, dtype=np.float64)
        p = mu.shape[0]
        if sigma.shape != (p, p):
            raise ValueError(f"sigma_hat must be {p}x{p}, got {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("mu_hat and sigma_hat must be finite")
        kappa = float(self.kappa)
        if math.isnan(kappa) or kappa < 1.0:
            raise ValueError(f"kappa must be >= 1 (sum(w) = 1 forces ||w||_1 >= 1), got {self.kappa}")
        object.__setattr__(self, "mu_hat", mu)
        object.__setattr__(self, "sigma_hat", sigma)
        object.__setattr__(self, "kappa", kappa)

    @property
    def p(self) -> int:
        return self.mu_hat.shape[0]

    def objective(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return float((w @ self.mu_hat) ** 2 + w @ self.sigma_hat @ w)


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    kappa_used: float
    objective_value: float
    converged: bool = True
    degenerate: bool = False
    iterations: int = 0

    @property
    def gross_exposure(self) -> float:
        return float(np.abs(self.w).sum())

    def to_json(self) -> str:
        kappa = "inf" if math.isinf(self.kappa_used) else self.kappa_used
        return json.dumps({
            "kappa": kappa,
            "objective": self.objective_value,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "weights": self.w.tolist(),
        })

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["tree", "weight"])
            for j, wj in enumerate(self.w):
                writer.writerow([j, repr(float(wj))])


def _check_psd(sigma: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.abs(sigma).max()))
    if np.abs(sigma - sigma.T).max() > 1e-10 * scale:
        raise NotPSDError("sigma_hat is not symmetric")
    sigma = 0.5 * (sigma + sigma.T)
    eig = np.linalg.eigvalsh(sigma)
    if eig[0] < -PSD_TOL * max(eig[-1], 0.0) and eig[0] < -1e-300:
        raise NotPSDError(f"sigma_hat is not positive semi-definite (min eigenvalue {eig[0]:.3g})")
    return sigma


def _equality_only(Q: np.ndarray) -> np.ndarray:
    """Minimise w'Qw subject to sum(w) = 1 through the bordered KKT system."""
    p = Q.shape[0]
    K = np.zeros((p + 1, p + 1))
    K[:p, :p] = 2.0 * Q
    K[:p, p] = 1.0
    K[p, :p] = 1.0
    rhs = np.zeros(p + 1)
    rhs[p] = 1.0
    try:
        sol = linalg.solve(K, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        sol = linalg.lstsq(K, rhs)[0]
    return sol[:p]


class _KKTSolver:
    """Factorisation of the Newton matrix for the split variables (u, v, s).

    The Hessian block is ``[[G, -G], [-G, G]]`` with ``G = 2Q``; eliminating
    ``v`` leaves one symmetric positive definite p x p system.
    """

    def __init__(self, G, du, dv, ds):
        self.G = G
        self.du, self.dv, self.ds = du, dv, ds
        self.e = 1.0 + du / dv
        M = G.copy()
        M[np.diag_indices_from(M)] += du * dv / (du + dv)
        try:
            self.factor = linalg.cho_factor(M, check_finite=False)
            self.cholesky = True
        except linalg.LinAlgError:
            self.factor = linalg.lu_factor(M, check_finite=False)
            self.cholesky = False

    def solve(self, r):
        p = self.G.shape[0]
        r1, r2, r3 = r[:p], r[p:2 * p], r[2 * p]
        rhs = r1 + self.G @ ((r1 + r2) / self.dv)
        t = (linalg.cho_solve if self.cholesky else linalg.lu_solve)(self.factor, rhs, check_finite=False)
        a = t / self.e
        b = (r1 + r2 - self.du * a) / self.dv
        return np.concatenate([a, b, [r3 / self.ds]])


def _interior_point(Q: np.ndarray, kappa: float, max_iter: int):
    """Mehrotra predictor-corrector iterates for the split problem.

    Variables ``x = (u, v, s) >= 0`` with ``w = u - v``; constraints
    ``1'u - 1'v = 1`` and ``1'u + 1'v + s = kappa``.  Yields
    ``(x, z, residual)`` after every step and stops early once the Newton
    systems become too ill-conditioned to make progress.
    """
    p = Q.shape[0]
    N = 2 * p + 1
    G = 2.0 * Q

    def hess(x):
        g = G @ (x[:p] - x[p:2 * p])
        return np.concatenate([g, -g, [0.0]])

    A = np.zeros((2, N))
    A[0, :p], A[0, p:2 * p] = 1.0, -1.0
    A[1, :] = 1.0
    b = np.array([1.0, kappa])

    t = max(kappa - 1.0, 0.5) / (4.0 * p)
    x = np.concatenate([np.full(p, 1.0 / p + t), np.full(p, t), [max(kappa - 1.0, 0.5) / 2.0]])
    z = np.ones(N)
    y = np.zeros(2)
    g_scale = 1.0 + np.abs(G).max()

    for _ in range(max_iter):
        r_d = hess(x) - A.T @ y - z
        r_p = A @ x - b
        mu = x @ z / N
        yield x, z, max(np.abs(r_p).max() / (1.0 + kappa), np.abs(r_d).max() / g_scale, mu)

        try:
            kkt = _KKTSolver(G, z[:p] / x[:p], z[p:2 * p] / x[p:2 * p], z[2 * p] / x[2 * p])
            KinvAT = np.column_stack([kkt.solve(A[0]), kkt.solve(A[1])])
            S = A @ KinvAT

            def direction(r_c):
                Kh = kkt.solve(-r_d + r_c / x)
                dy = np.linalg.solve(S, -r_p - A @ Kh)
                dx = Kh + KinvAT @ dy
                return dx, dy, (r_c - z * dx) / x

            dx, dy, dz = direction(-x * z)
            a_aff = min(_max_step(x, dx), _max_step(z, dz))
            mu_aff = (x + a_aff * dx) @ (z + a_aff * dz) / N
            sigma = (mu_aff / mu) ** 3
            dx, dy, dz = direction(-x * z - dx * dz + sigma * mu)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            return
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
            return
        alpha = min(1.0, 0.995 * min(_max_step(x, dx), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz


def _max_step(v, dv):
    neg = dv < 0
    return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0


def _solve_on_support(Q, kappa, support, sign):
    """KKT solve with ``w`` restricted to ``support`` and fixed signs.

    Returns ``(w, certified, flips)``.  ``w`` is None when a support
    coordinate comes out with the wrong sign; those coordinates are then
    reported in ``flips`` as ``(index, 0)``.  Otherwise ``flips`` lists
    off-support coordinates that violate the optimality conditions, with the
    sign they should enter with.
    """
    p = Q.shape[0]
    # with all-positive signs the L1 row coincides with sum(w) = 1
    l1_row = not np.all(sign > 0)
    k = support.size
    m = 2 if l1_row else 1
    K = np.zeros((k + m, k + m))
    K[:k, :k] = 2.0 * Q[np.ix_(support, support)]
    K[:k, k] = K[k, :k] = 1.0
    rhs = np.zeros(k + m)
    rhs[k] = 1.0
    if l1_row:
        K[:k, k + 1] = K[k + 1, :k] = sign
        rhs[k + 1] = kappa
    sol = linalg.lstsq(K, rhs)[0]
    wrong = sign * sol[:k] < 0
    if np.any(wrong):
        return None, False, [(j, 0) for j in support[wrong]]
    w = np.zeros(p)
    w[support] = sol[:k]

    g = 2.0 * Q @ w
    off = np.ones(p, dtype=bool)
    off[support] = False
    off = np.flatnonzero(off)
    slack = 1e-9 * (1.0 + np.abs(g).max())
    if l1_row:
        # g_S = nu - lam * sign_S with lam >= 0; zeros need |g_j - nu| <= lam
        nu, lam = -sol[k], sol[k + 1]
        if lam < -slack:
            return w, False, []
        d = g[off] - nu
        flips = [(j, -1) for j in off[d > lam + slack]] + [(j, 1) for j in off[d < -lam - slack]]
    elif kappa <= 1.0:
        # simplex case: zeros need a gradient no smaller than on the support
        flips = [(j, 1) for j in off[g[off] < g[support].max() - slack]]
    else:
        # ||w||_1 = 1 < kappa leaves the bound slack, yet the bound must bind
        return w, False, []
    return w, not flips, flips


def _polish(Q, kappa, x, z, rounds=0):
    """Re-solve the KKT equations on the active set guessed from an interior iterate.

    Returns ``(w, certified)``; ``certified`` means the multipliers of the
    reduced system also satisfy the optimality conditions for the
    coordinates held at zero, so ``w`` is optimal independently of how well
    the interior-point iterate converged.  With ``rounds > 0`` a guess that
    fails the check is repaired by moving the offending coordinates into or
    out of the support and solving again.
    """
    p = Q.shape[0]
    u, v = x[:p], x[p:2 * p]
    zu, zv = z[:p], z[p:2 * p]
    pos = (u > zu) & (u >= v)
    neg = (v > zv) & ~pos
    sign = np.where(pos, 1.0, np.where(neg, -1.0, 0.0))
    w_last = None
    for _ in range(rounds + 1):
        support = np.flatnonzero(sign)
        if support.size == 0:
            return w_last, False
        w, certified, flips = _solve_on_support(Q, kappa, support, sign[support])
        if certified:
            return w, True
        if w is not None:
            w_last = w
        if not flips:
            break
        for j, sj in flips:
            sign[j] = sj
    return w_last, False


def _feasible(w, kappa, tol=FEAS_TOL) -> bool:
    return abs(w.sum() - 1.0) <= tol and np.abs(w).sum() <= kappa + tol


def solve_hedged_weights(problem: HedgeProblem, tol: float = 1e-14, max_iter: int = 600) -> WeightVector:
    """Minimise ``(w'mu)^2 + w'Sigma w`` s.t. ``sum(w) = 1`` and ``||w||_1 <= kappa``.

    The quadratic form is first normalised to unit average eigenvalue, which
    makes the result invariant to rescaling ``(mu, Sigma) -> (c mu, c^2 Sigma)``,
    and a ridge of ``1e-10`` (relative to that unit scale) keeps singular
    inputs solvable.  If the equality-only minimiser already satisfies the L1
    bound it is returned directly.  Otherwise interior-point iterates on the
    split ``w = u - v`` are used to guess the active set (support and signs),
    the KKT equations are solved exactly on that set, and the result is
    accepted once its multipliers certify optimality.

    An all-zero ``Q`` makes every feasible point optimal; equal weights are
    returned with ``degenerate=True``.  Without a certificate after
    ``max_iter`` iterations (or once the interior-point residual drops below
    ``tol``) the best feasible iterate is returned with ``converged=False``
    and a :class:`ConvergenceWarning` is issued.
    """
    if not isinstance(problem, HedgeProblem):
        raise TypeError("expected a HedgeProblem")
    kappa = problem.kappa
    sigma = _check_psd(problem.sigma_hat)
    mu = problem.mu_hat
    p = problem.p
    Q = sigma + np.outer(mu, mu)
    scale = np.trace(Q) / p
    if scale <= 0.0:
        w = np.full(p, 1.0 / p)
        return WeightVector(w, kappa, problem.objective(w), degenerate=True)

    Q0 = Q / scale
    Qn = Q0.copy()
    Qn[np.diag_indices_from(Qn)] += RIDGE

    w = _equality_only(Qn)
    if math.isinf(kappa) or np.abs(w).sum() <= kappa:
        return WeightVector(w, kappa, problem.objective(w))
    if p == 1:
        w = np.ones(1)
        return WeightVector(w, kappa, problem.objective(w))

    best_w, best_f, iterations, certified = None, math.inf, 0, False
    for iterations, (x, z, res) in enumerate(_interior_point(Qn, kappa, max_iter), start=1):
        candidates = [x[:p] - x[p:2 * p]]
        if res < POLISH_START:
            w_pol, certified = _polish(Qn, kappa, x, z)
            if w_pol is not None:
                candidates.insert(0, w_pol)
        for c in candidates:
            f = c @ Qn @ c
            if _feasible(c, kappa) and f < best_f:
                best_w, best_f = c, f
        if certified and _feasible(candidates[0], kappa, 1e-12):
            best_w = candidates[0]
            break
        if best_w is not None and best_w @ Q0 @ best_w <= ZERO_OBJECTIVE:
            # w'Qw >= 0 everywhere, so a numerically zero objective is optimal
            certified = True
            break
        certified = False
        if res < tol:
            break
    if not certified:
        # degenerate coordinates can defeat the sign guess; repair it combinatorially
        w_pol, certified = _polish(Qn, kappa, x, z, rounds=max(10, p // 10))
        if certified and _feasible(w_pol, kappa, 1e-12):
            best_w = w_pol
        else:
            certified = False
    if best_w is None:
        w = x[:p] - x[p:2 * p]
        best_w = w / w.sum()
    if not certified:
        warnings.warn(f"hedged-weight solver stopped after {iterations} iterations without "
                      "an optimality certificate; returning the best feasible iterate",
                      ConvergenceWarning, stacklevel=2)
    return WeightVector(best_w, kappa, problem.objective(best_w), converged=certified,
                        iterations=iterations)


def oracle_weights_unconstrained(mu, sigma) -> WeightVector:
    """Closed form ``Q^{-1} 1 / (1' Q^{-1} 1)`` with ``Q = sigma + mu mu'``.

    Raises ``ValueError`` when ``Q`` is numerically singular.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64)
    Q = sigma + np.outer(mu, mu)
    if np.linalg.cond(Q) > 1.0 / np.finfo(float).eps:
        raise ValueError("Q = sigma + mu mu' is singular")
    q = np.linalg.solve(Q, np.ones(len(mu)))
    w = q / q.sum()
    return WeightVector(w, math.inf, float((w @ mu) ** 2 + w @ sigma @ w))


def combine(weights, method_forecasts) -> np.ndarray:
    """Weighted forecast ``F @ w`` for an (m x p) forecast matrix ``F``."""
    w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, dtype=np.float64)
    F = np.asarray(method_forecasts, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != w.shape[0]:
        raise ValueError(f"{w.shape[0]} weights for forecasts of shape {F.shape}")
    return F @ w


def equal_weights(p: int) -> WeightVector:
    return WeightVector(np.full(p, 1.0 / p), 1.0, float("nan"))


# -- Winham et al. weighted forest ---------------------------------------------

WINHAM_RULES = ("one_minus", "exp_inverse", "power")


def tree_prediction_errors(R) -> np.ndarray:
    """Per-tree mean absolute out-of-bag error (tPE)."""
    if R.oob_mask is None:
        raise ValueError("residual matrix carries no out-of-bag mask")
    counts = R.oob_mask.sum(axis=0)
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0)
        raise ValueError(f"trees {empty[:10].tolist()} have no out-of-bag observations")
    return np.where(R.oob_mask, np.abs(R.values), 0.0).sum(axis=0) / counts


def winham_weights_from_tpe(tpe, rule: str = "exp_inverse", lam: float = 5.0) -> WeightVector:
    """Normalised relative weights ``1 - tPE``, ``exp(1/tPE)`` or ``tPE^-lam``.

    The exponential and power rules are evaluated in log space and normalised
    with a softmax, so large ``1/tPE`` does not overflow.  A tree with
    ``tPE == 0`` is treated as having the smallest positive double as its
    error, which hands it (and any other zero-error tree) all of the weight.
    """
    tpe = np.asarray(tpe, dtype=np.float64).ravel()
    if np.any(tpe < 0) or not np.all(np.isfinite(tpe)):
        raise ValueError("tPE values must be finite and nonnegative")
    if rule == "one_minus":
        if np.any(tpe >= 1.0):
            raise ValueError("rule 'one_minus' needs every tPE < 1 (relative weights would be <= 0)")
        rel = 1.0 - tpe
        w = rel / rel.sum()
    elif rule in ("exp_inverse", "power"):
        safe = np.maximum(tpe, np.finfo(float).tiny)
        if rule == "exp_inverse":
            log_rel = 1.0 / safe
        else:
            if lam <= 0:
                raise ValueError("lambda must be positive")
            log_rel = -lam * np.log(safe)
        log_rel = log_rel - log_rel.max()
        rel = np.exp(log_rel)
        w = rel / rel.sum()
    else:
        raise ValueError(f"unknown rule {rule!r}; choose from {WINHAM_RULES}")
    return WeightVector(w, 1.0, float("nan"))


def winham_weights(R, rule: str = "exp_inverse", lam: float = 5.0) -> WeightVector:
    return winham_weights_from_tpe(tree_prediction_errors(R), rule, lam)
