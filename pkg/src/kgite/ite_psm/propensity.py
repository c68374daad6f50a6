from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..logistic import DataError, DegenerateFitError, expit, fit_logistic

DEFAULT_PROPENSITY_RIDGE = 1.0


@dataclass(frozen=True)
class PropensityModel:
    """P(Z=1 | X) for one comparable group pair."""

    coefficients: np.ndarray
    intercept: float
    fitted_on: str = ""

    @property
    def dim(self) -> int:
        return self.coefficients.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise DataError(f"expected {self.dim} predictors, got {X.shape[-1]}")
        p = expit(X @ self.coefficients + self.intercept)
        # keep probabilities strictly inside (0, 1)
        return np.clip(p, 1e-15, 1.0 - 1e-15)


def fit_propensity(X, Z, ridge: float = DEFAULT_PROPENSITY_RIDGE, fitted_on: str = "") -> PropensityModel:
    """Ridge logistic regression of treatment indicator ``Z`` on ``X``."""
    Z = np.asarray(Z).ravel()
    n1 = int(np.sum(Z == 1))
    n0 = int(np.sum(Z == 0))
    if n1 < 2 or n0 < 2:
        raise DegenerateFitError(f"need >= 2 members per class, got {n1} treated / {n0} control")
    fit = fit_logistic(X, Z, ridge=ridge)
    return PropensityModel(coefficients=fit.coef, intercept=fit.intercept, fitted_on=fitted_on)
