"""Missing-lab imputation: carry the last observation forward within a
patient, and fall back to a per-lab mean fitted on training patients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class ImputationError(ValueError):
    pass


@dataclass(frozen=True)
class ImputationStats:
    lab_means: np.ndarray


def fit_imputer(values: np.ndarray, patients=None) -> ImputationStats:
    """Per-lab mean of observed cells, over ``patients`` (default: all)."""
    v = values if patients is None else values[np.asarray(patients)]
    v = v.reshape(-1, v.shape[-1])
    obs = ~np.isnan(v)
    counts = obs.sum(axis=0)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ImputationError(f"labs never observed in the fitting patients: {missing}")
    sums = np.where(obs, v, 0.0).sum(axis=0)
    return ImputationStats(lab_means=sums / counts)


def impute(values: np.ndarray, stats: ImputationStats | None = None) -> np.ndarray:
    """Fill NaNs in a ``[patient, window, lab]`` array."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if stats is None:
        stats = fit_imputer(values)
    if not np.isnan(values).any():
        return values.copy()
    return kernels.locf(values, np.ascontiguousarray(stats.lab_means))
