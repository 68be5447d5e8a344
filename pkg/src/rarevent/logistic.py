"""Weighted binomial-logit regression fitted by IRLS (Newton-Raphson).

Row weights enter the log-likelihood multiplicatively, so a row with
integer weight ``w`` is equivalent to ``w`` copies of that row.  This is
what lets random over/under-sampling be expressed as weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data import DesignMatrix
from .errors import AllOneClass, DimensionMismatch, NoConvergence, SingularInformation

PROB_CLAMP = 1e-12
PIVOT_TOL = 1e-12
_TINY = np.finfo(float).smallest_subnormal
_ALMOST_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class FitControl:
    max_iter: int = 100
    tolerance: float = 1e-10
    divergence_bound: float = 1e4
    # Fitted probabilities this close to the observed label mark separation.
    separation_eps: float = 1e-8


@dataclass(frozen=True, eq=False)
class FittedLogistic:
    beta: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    final_deviance: float
    separation_flag: bool

    def predict(self, X) -> np.ndarray:
        return sigmoid(np.asarray(X, dtype=float) @ self.beta)


def sigmoid(z):
    """Overflow-safe logistic function, strictly inside (0, 1)."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    p = np.clip(p, _TINY, _ALMOST_ONE)
    return p if p.ndim else float(p)


def predict_probability(beta, x) -> float:
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta.shape != x.shape:
        raise DimensionMismatch(f"beta has shape {beta.shape}, x has {x.shape}")
    return float(sigmoid(x @ beta))


def log_likelihood(beta, X, y, w=None) -> float:
    """Weighted log-likelihood with probabilities clamped away from 0 and 1."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    p = np.clip(sigmoid(X @ np.asarray(beta, dtype=float)), PROB_CLAMP, 1 - PROB_CLAMP)
    return float(np.sum(w * (y * np.log(p) + (1 - y) * np.log1p(-p))))


def score(beta, X, y, w=None) -> np.ndarray:
    """Gradient of :func:`log_likelihood`: sum_i w_i (y_i - pi_i) x_i."""
    X = np.asarray(X, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    return X.T @ (w * (np.asarray(y, dtype=float) - sigmoid(X @ np.asarray(beta, dtype=float))))


def _information(X, w, p) -> np.ndarray:
    W = w * p * (1.0 - p)
    return (X * W[:, None]).T @ X


def _factor(H: np.ndarray):
    """Cholesky factor of ``H``; raises SingularInformation on tiny pivots.

    A pivot is compared with the matching diagonal entry, so the test is
    invariant to column scaling.
    """
    try:
        c, lower = linalg.cho_factor(H, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularInformation("information matrix is not positive definite") from None
    d = np.diag(c) ** 2
    diag = np.diag(H)
    if not np.all(diag > 0) or np.any(d < PIVOT_TOL * diag):
        raise SingularInformation("information matrix is numerically singular")
    return c, lower


def variance(beta, design: DesignMatrix) -> np.ndarray:
    return _variance(np.asarray(beta, dtype=float), design.rows, design.weights)


def _variance(beta, X, w) -> np.ndarray:
    if beta.shape != (X.shape[1],):
        raise DimensionMismatch(f"beta has {beta.size} entries, design has {X.shape[1]} columns")
    H = _information(X, w, sigmoid(X @ beta))
    factor = _factor(H)
    V = linalg.cho_solve(factor, np.eye(H.shape[0]), check_finite=False)
    return (V + V.T) / 2


def fit(design: DesignMatrix, control: FitControl | None = None, start=None) -> FittedLogistic:
    return fit_arrays(design.rows, design.response, design.weights, control, start)


def _deviance(X, y, w, beta) -> float:
    return -2.0 * log_likelihood(beta, X, y, w)


def _polish(X, y, w, beta, dev):
    """One more full Newton step, kept unless it clearly raises the deviance.

    The deviance test stops one step early: the last step's own error is
    still of order its length squared.
    """
    p = np.clip(sigmoid(X @ beta), PROB_CLAMP, 1 - PROB_CLAMP)
    try:
        factor = _factor(_information(X, w, p))
    except SingularInformation:
        return beta, dev
    new_beta = beta + linalg.cho_solve(factor, X.T @ (w * (y - p)), check_finite=False)
    new_dev = _deviance(X, y, w, new_beta)
    # near the optimum the deviance gain is below rounding, hence the slack
    ok = new_dev <= dev * (1 + 1e-12) + 1e-12
    return (new_beta, new_dev) if ok else (beta, dev)


def fit_arrays(X, y, w=None, control: FitControl | None = None, start=None) -> FittedLogistic:
    control = control or FitControl()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or w.shape != y.shape:
        raise DimensionMismatch(f"X {X.shape}, y {y.shape}, w {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not (np.any((y == 1) & (w > 0)) and np.any((y == 0) & (w > 0))):
        raise AllOneClass("both classes need a positive weight")
    keep = w > 0
    if not keep.all():
        X, y, w = X[keep], y[keep], w[keep]

    # Collinearity is a property of the columns, checked once at pi = 1/2.
    _factor(_information(X, w, np.full(len(y), 0.5)))

    beta = np.zeros(X.shape[1]) if start is None else np.array(start, dtype=float)
    dev = _deviance(X, y, w, beta)
    converged = separated = False
    it = 0
    while it < control.max_iter:
        it += 1
        p = sigmoid(X @ beta)
        p = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
        grad = X.T @ (w * (y - p))
        try:
            factor = _factor(_information(X, w, p))
        except SingularInformation:
            # Weights pi(1-pi) collapsed along some direction: the likelihood
            # is flat there because the MLE runs off to infinity.
            separated = True
            break
        step = linalg.cho_solve(factor, grad, check_finite=False)
        new_beta = beta + step
        new_dev = _deviance(X, y, w, new_beta)
        halvings = 0
        while new_dev > dev * (1 + 1e-12) + 1e-12 and halvings < 30:
            step = step / 2
            new_beta = beta + step
            new_dev = _deviance(X, y, w, new_beta)
            halvings += 1
        change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        beta, dev = new_beta, new_dev
        if np.max(np.abs(beta)) > control.divergence_bound:
            separated = True
            break
        if change < control.tolerance:
            converged = True
            beta, dev = _polish(X, y, w, beta, dev)
            break

    if not converged and not separated:
        raise NoConvergence(it)

    p = sigmoid(X @ beta)
    if np.any(np.abs(y - p) < control.separation_eps):
        separated = True
    try:
        cov = _variance(beta, X, w)
    except SingularInformation:
        H = _information(X, w, p)
        cov = np.linalg.pinv(H, hermitian=True)
        cov = (cov + cov.T) / 2
    return FittedLogistic(
        beta=beta,
        covariance=cov,
        converged=converged,
        iterations=it,
        final_deviance=float(dev),
        separation_flag=bool(separated),
    )
