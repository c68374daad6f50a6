"""Ridge-penalised logistic regression by Newton/IRLS.

Predictors are centred and scaled internally; the ridge penalty
``ridge/2 * ||beta||^2`` acts on the standardised slopes and never on the
intercept. Results are mapped back to the original predictor units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats


class DegenerateFitError(ValueError):
    """Only one outcome class present."""


class DataError(ValueError):
    """Non-finite or malformed predictors."""


@dataclass
class LogisticFit:
    coef: np.ndarray        # slopes, original units (log-odds per unit)
    intercept: float
    cov: np.ndarray         # covariance of (intercept, coef...), original units
    n_iter: int
    converged: bool
    history: list = field(default_factory=list)  # penalised objective per iterate

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov)[1:], 0.0, None))

    @property
    def intercept_se(self) -> float:
        return float(np.sqrt(max(self.cov[0, 0], 0.0)))

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def pvalues(self) -> np.ndarray:
        return wald_pvalues_from(self.coef, self.se)


def expit(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log1pexp(z):
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(-np.abs(z))))


def wald_pvalues_from(coef, se) -> np.ndarray:
    coef = np.asarray(coef, dtype=np.float64)
    se = np.asarray(se, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, coef / se, 0.0)
    return 2.0 * stats.norm.sf(np.abs(z))


def check_design(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"design must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("design contains non-finite values")
    if y is not None:
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise DataError("design and labels differ in length")
        if not np.all(np.isfinite(y)):
            raise DataError("labels contain non-finite values")
    return X, y


def standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(mean)), scale, 1.0)
    return (X - mean) / scale, mean, scale


def _objective(Z, y, theta, ridge, offset):
    eta = Z @ theta[1:] + theta[0] + offset
    return float(np.sum(log1pexp(eta) - y * eta) + 0.5 * ridge * theta[1:] @ theta[1:])


def fit_logistic(X, y, ridge: float = 1e-4, max_iter: int = 100, tol: float = 1e-10, offset=None) -> LogisticFit:
    X, y = check_design(X, y)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0/1")
    if y.min() == y.max():
        raise DegenerateFitError("labels contain a single class")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    n, d = X.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=np.float64)
    Z, mean, scale = standardize(X)
    theta = np.zeros(d + 1)
    p0 = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    theta[0] = np.log(p0 / (1 - p0))
    pen = np.full(d + 1, ridge)
    pen[0] = 0.0
    obj = _objective(Z, y, theta, ridge, off)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = Z @ theta[1:] + theta[0] + off
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = np.concatenate(([np.sum(mu - y)], Z.T @ (mu - y))) + pen * theta
        H = _hessian(Z, w, pen)
        step = _solve(H, grad)
        # step halving keeps the penalised objective monotone
        t = 1.0
        while True:
            cand = theta - t * step
            new = _objective(Z, y, cand, ridge, off)
            if new <= obj or t < 1e-10:
                break
            t *= 0.5
        if new > obj:
            converged = True
            break
        decrease = obj - new
        theta, obj = cand, new
        history.append(obj)
        if decrease <= tol * (abs(obj) + 1.0) or float(grad @ step) < 2 * tol:
            converged = True
            break

    mu = expit(Z @ theta[1:] + theta[0] + off)
    H = _hessian(Z, mu * (1.0 - mu), pen)
    cov_std = _inverse(H)
    # back-transform: coef = b/s, intercept = b0 - sum(b*m/s)
    A = np.zeros((d + 1, d + 1))
    A[0, 0] = 1.0
    A[0, 1:] = -mean / scale
    A[1:, 1:] = np.diag(1.0 / scale)
    orig = A @ theta
    cov = A @ cov_std @ A.T
    return LogisticFit(
        coef=orig[1:], intercept=float(orig[0]), cov=cov, n_iter=it, converged=converged, history=history
    )


def _hessian(Z, w, pen):
    d = Z.shape[1]
    H = np.empty((d + 1, d + 1))
    Zw = Z * w[:, None]
    H[0, 0] = w.sum()
    H[0, 1:] = H[1:, 0] = Zw.sum(axis=0)
    H[1:, 1:] = Z.T @ Zw
    H[np.diag_indices_from(H)] += pen
    return H


def _solve(H, g):
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


def _inverse(H):
    try:
        return np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(H)
