"""Linear predictors: ridge logistic (GLM), least squares (LM) and their
random-intercept variants.

The random-intercept fit is a penalised approximation, not restricted
likelihood: for a fixed intercept variance the joint mode of fixed effects
and per-patient intercepts is found by Newton steps (the intercept block of
the Hessian is diagonal, so a Schur complement keeps each step cheap); the
variance is then re-estimated as the mean of squared modes plus their
conditional variances, and the two steps alternate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..logistic import (
    DataError,
    DegenerateFitError,
    LogisticFit,
    check_design,
    expit,
    fit_logistic,
    log1pexp,
    standardize,
    wald_pvalues_from,
)

DEFAULT_GLM_RIDGE = 1.0


@dataclass
class LinearModel:
    """Fitted linear predictor in original feature units.

    ``cov`` is the covariance of ``(intercept, coef...)``. ``family`` is
    ``"binomial"`` (scores are probabilities) or ``"gaussian"``.
    """

    coef: np.ndarray
    intercept: float
    cov: np.ndarray
    family: str
    converged: bool = True
    n_iter: int = 0
    residual_var: float = float("nan")
    r2: float = float("nan")
    ridge: float = 0.0

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.cov)[1:], 0.0, None))

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.coef.shape[0]:
            raise DataError(f"expected {self.coef.shape[0]} features, got {X.shape[-1]}")
        return X @ self.coef + self.intercept

    def predict(self, X):
        eta = self.decision_function(X)
        return expit(eta) if self.family == "binomial" else eta


@dataclass
class MixedModel(LinearModel):
    """Linear model plus per-patient random intercepts."""

    intercept_var: float = 0.0
    random_intercepts: dict | None = None
    n_outer: int = 0

    def predict(self, X, patient_ids=None):
        """New patients (or ``patient_ids=None``) get a zero random intercept."""
        eta = self.decision_function(X)
        if patient_ids is not None and self.random_intercepts:
            eta = eta + np.array([self.random_intercepts.get(p, 0.0) for p in patient_ids])
        return expit(eta) if self.family == "binomial" else eta


def fit_glm(X, y, ridge: float = DEFAULT_GLM_RIDGE, max_iter: int = 100) -> LinearModel:
    """Ridge logistic regression with Wald standard errors.

    The penalty acts on standardised slopes; an all-zero column therefore
    gets coefficient exactly 0.
    """
    fit: LogisticFit = fit_logistic(X, y, ridge=ridge, max_iter=max_iter)
    return LinearModel(
        coef=fit.coef, intercept=fit.intercept, cov=fit.cov, family="binomial",
        converged=fit.converged, n_iter=fit.n_iter, ridge=ridge,
    )


def fit_lm(X, y, ridge: float = 0.0) -> LinearModel:
    """Least squares by the normal equations.

    A rank-deficient design (or ``ridge > 0``) switches to a ridge solve on
    standardised columns, ``ridge`` defaulting to 1e-8 times the trace.
    """
    X, y = check_design(X, y)
    n, d = X.shape
    if n < 1:
        raise DataError("need at least one sample")
    Z, mean, scale = standardize(X)
    ym = y.mean()
    yc = y - ym
    G = Z.T @ Z
    lam = float(ridge)
    if lam == 0.0 and d and np.linalg.matrix_rank(G) < d:
        lam = 1e-8 * max(float(np.trace(G)), 1.0)
    A = G + lam * np.eye(d)
    b = np.linalg.solve(A, Z.T @ yc) if d else np.zeros(0)
    resid = yc - Z @ b
    rss = float(resid @ resid)
    dof = max(n - d - 1, 1)
    s2 = rss / dof
    tss = float(yc @ yc)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    # covariance on the standardised scale: intercept (= mean of y) is independent of centred slopes
    cov_std = np.zeros((d + 1, d + 1))
    cov_std[0, 0] = s2 / n
    if d:
        Ainv = np.linalg.inv(A)
        cov_std[1:, 1:] = s2 * Ainv @ G @ Ainv
    theta = np.concatenate(([ym], b))
    T = _back_transform(mean, scale)
    orig = T @ theta
    return LinearModel(
        coef=orig[1:], intercept=float(orig[0]), cov=T @ cov_std @ T.T, family="gaussian",
        residual_var=s2, r2=r2, ridge=lam,
    )


def _back_transform(mean, scale):
    d = mean.shape[0]
    T = np.zeros((d + 1, d + 1))
    T[0, 0] = 1.0
    T[0, 1:] = -mean / scale
    T[1:, 1:] = np.diag(1.0 / scale)
    return T


def wald_pvalues(model: LinearModel, index=None) -> np.ndarray:
    """Two-sided normal Wald p-values of the requested slope coefficients."""
    idx = np.arange(model.coef.shape[0]) if index is None else np.asarray(index, dtype=np.int64).ravel()
    if idx.size and (idx.min() < -model.coef.shape[0] or idx.max() >= model.coef.shape[0]):
        raise IndexError(f"coefficient index out of range 0..{model.coef.shape[0] - 1}")
    return wald_pvalues_from(model.coef[idx], model.se[idx])


# --------------------------------------------------------------------------
# random intercept
# --------------------------------------------------------------------------


def fit_random_intercept(
    X,
    y,
    patient_ids,
    family: str = "binomial",
    ridge: float = DEFAULT_GLM_RIDGE,
    init_var: float = 1.0,
    max_outer: int = 200,
    tol: float = 1e-6,
    max_newton: int = 50,
) -> MixedModel:
    """Fixed effects plus a Gaussian per-patient intercept.

    ``family`` is ``"binomial"`` (GLMER analogue) or ``"gaussian"`` (LMER
    analogue). The fixed slopes carry the same standardised ridge as
    :func:`fit_glm`; the fixed intercept is unpenalised.
    """
    if family not in ("binomial", "gaussian"):
        raise ValueError(f"unknown family {family!r}")
    X, y = check_design(X, y)
    n, d = X.shape
    ids = np.asarray(patient_ids)
    if ids.shape[0] != n:
        raise DataError("patient_ids and design differ in length")
    groups, g = np.unique(ids, return_inverse=True)
    G = groups.shape[0]
    if G < 2:
        raise DataError("need at least 2 patients")
    if family == "binomial":
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0/1")
        if y.min() == y.max():
            raise DegenerateFitError("labels contain a single class")
    Z, mean, scale = standardize(X)
    pen = np.full(d + 1, float(ridge))
    pen[0] = 0.0

    theta = np.zeros(d + 1)
    if family == "binomial":
        p0 = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        theta[0] = np.log(p0 / (1 - p0))
    else:
        theta[0] = y.mean()
    u = np.zeros(G)
    var_u = float(init_var)
    var_e = float(np.var(y)) if family == "gaussian" else 1.0
    var_e = max(var_e, 1e-12)
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        theta, u, H_parts = _joint_mode(Z, y, g, G, theta, u, var_u, var_e, pen, family, max_newton)
        cond_var = _intercept_cond_var(*H_parts)
        new_var_u = float(np.mean(u * u + cond_var))
        if family == "gaussian":
            eta = Z @ theta[1:] + theta[0] + u[g]
            # expected RSS adds tr(Z C Z') = var_e * (effective parameter count), C the joint inverse
            theta_var = np.diag(_schur_inverse(*H_parts))
            edf = (d + 1 + G) - float(np.sum(cond_var)) / var_u - float(pen @ theta_var)
            new_var_e = float((np.sum((y - eta) ** 2) + var_e * edf) / n)
            new_var_e = max(new_var_e, 1e-12)
        else:
            new_var_e = var_e
        change = abs(new_var_u - var_u) + abs(new_var_e - var_e)
        var_u, var_e = new_var_u, new_var_e
        if change <= tol * (1.0 + var_u):
            converged = True
            break
        if var_u < 1e-10:
            var_u = 1e-10
            converged = True
            break

    theta, u, H_parts = _joint_mode(Z, y, g, G, theta, u, var_u, var_e, pen, family, max_newton)
    cov_std = _fixed_cov(*H_parts)
    T = _back_transform(mean, scale)
    orig = T @ theta
    return MixedModel(
        coef=orig[1:], intercept=float(orig[0]), cov=T @ cov_std @ T.T, family=family,
        converged=converged, n_iter=outer, residual_var=var_e if family == "gaussian" else float("nan"),
        ridge=float(ridge), intercept_var=var_u,
        random_intercepts={k.item() if hasattr(k, "item") else k: float(v) for k, v in zip(groups, u)},
        n_outer=outer,
    )


def _penalised_nll(Z, y, g, theta, u, var_u, var_e, pen, family):
    eta = Z @ theta[1:] + theta[0] + u[g]
    if family == "binomial":
        nll = float(np.sum(log1pexp(eta) - y * eta))
    else:
        nll = float(0.5 * np.sum((y - eta) ** 2) / var_e)
    return nll + 0.5 * float(u @ u) / var_u + 0.5 * float(pen @ (theta * theta))


def _joint_mode(Z, y, g, G, theta, u, var_u, var_e, pen, family, max_newton):
    """Newton on (theta, u) with the diagonal u-block eliminated."""
    obj = _penalised_nll(Z, y, g, theta, u, var_u, var_e, pen, family)
    Z1 = np.hstack([np.ones((Z.shape[0], 1)), Z])
    for _ in range(max_newton):
        eta = Z1 @ theta + u[g]
        if family == "binomial":
            mu = expit(eta)
            r = mu - y
            w = mu * (1.0 - mu)
        else:
            r = (eta - y) / var_e
            w = np.full_like(eta, 1.0 / var_e)
        g_theta = Z1.T @ r + pen * theta
        g_u = np.bincount(g, weights=r, minlength=G) + u / var_u
        A, B, Dg = _blocks(Z1, w, g, G, pen, var_u)
        step_theta, step_u = _schur_solve(A, B, Dg, g_theta, g_u)
        t = 1.0
        while True:
            ct, cu = theta - t * step_theta, u - t * step_u
            new = _penalised_nll(Z, y, g, ct, cu, var_u, var_e, pen, family)
            if new <= obj or t < 1e-10:
                break
            t *= 0.5
        if new > obj:
            break
        dec = obj - new
        theta, u, obj = ct, cu, new
        if dec <= 1e-12 * (abs(obj) + 1.0):
            break
    eta = Z1 @ theta + u[g]
    if family == "binomial":
        mu = expit(eta)
        w = mu * (1.0 - mu)
    else:
        w = np.full_like(eta, 1.0 / var_e)
    return theta, u, _blocks(Z1, w, g, G, pen, var_u)


def _blocks(Z1, w, g, G, pen, var_u):
    Zw = Z1 * w[:, None]
    A = Z1.T @ Zw
    A[np.diag_indices_from(A)] += pen
    # B[j, i] = sum over rows of patient i of w * z_j
    B = np.zeros((Z1.shape[1], G))
    for j in range(Z1.shape[1]):
        B[j] = np.bincount(g, weights=Zw[:, j], minlength=G)
    Dg = np.bincount(g, weights=w, minlength=G) + 1.0 / var_u
    return A, B, Dg


def _schur_solve(A, B, Dg, g_theta, g_u):
    S = A - (B / Dg) @ B.T
    rhs = g_theta - B @ (g_u / Dg)
    try:
        st = np.linalg.solve(S, rhs)
    except np.linalg.LinAlgError:
        st = np.linalg.lstsq(S, rhs, rcond=None)[0]
    su = (g_u - B.T @ st) / Dg
    return st, su


def _schur_inverse(A, B, Dg):
    S = A - (B / Dg) @ B.T
    try:
        return np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(S)


def _fixed_cov(A, B, Dg):
    return _schur_inverse(A, B, Dg)


def _intercept_cond_var(A, B, Dg):
    """Diagonal of the u-block of the inverse joint Hessian."""
    Sinv = _schur_inverse(A, B, Dg)
    C = B / Dg  # [p, G]
    return 1.0 / Dg + np.einsum("ji,jk,ki->i", C, Sinv, C)
