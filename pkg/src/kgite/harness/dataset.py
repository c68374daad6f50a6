"""Per-run data preparation: patient split, imputation, Δ, and sample assembly.

Each patient contributes one sample per experiment. The last input window
is ``a = T - 1 - horizon``; inputs cover windows ``a-K+1 .. a`` and the
label is read at ``a + horizon``. For diagnosis tasks, patients already
diagnosed with the outcome at any window ``<= a`` are dropped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..imputation import fit_imputer, impute as impute_labs
from ..ite_psm.delta import DeltaSet, build_delta_sequences
from ..seqmodels.data import SequenceSample, align_deltas
from .config import ConfigError, DeltaOptions, ExperimentConfig

log = logging.getLogger(__name__)


def split_patients(n: int, train_fraction: float, seed: int):
    """Disjoint sorted train/test index arrays, shuffled by ``seed``."""
    perm = np.random.default_rng(int(seed)).permutation(n)
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1) if n > 1 else n
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def impute(cohort, train_patients=None) -> np.ndarray:
    """Carry-forward imputation with fallback means fitted on ``train_patients``."""
    stats = fit_imputer(cohort.labs_observed, train_patients)
    return impute_labs(cohort.labs_observed, stats)


def input_windows(n_windows: int, time_step: int, horizon: int) -> np.ndarray:
    last = n_windows - 1 - horizon
    first = last - time_step + 1
    if horizon < 1 or last < 0:
        raise ConfigError(f"horizon {horizon} leaves no input window in {n_windows} windows")
    if first < 0:
        raise ConfigError(f"time step {time_step} with horizon {horizon} needs {time_step + horizon} windows, cohort has {n_windows}")
    return np.arange(first, last + 1)


def assemble_dataset(cohort, deltas: DeltaSet | None, config: ExperimentConfig, features=None, patients=None) -> SequenceSample:
    """Samples for ``config`` over ``patients`` (default: all).

    ``features`` is the imputed ``[P, T, labs]`` array; when omitted it is
    imputed here with statistics from all patients.
    """
    T = cohort.n_windows
    windows = input_windows(T, config.time_step, config.horizon)
    last = windows[-1]
    X = impute(cohort) if features is None else features
    idx = np.arange(len(cohort)) if patients is None else np.asarray(patients, dtype=np.int64)
    if config.task == "dx":
        if config.outcome not in cohort.dx_codes:
            raise ConfigError(f"unknown outcome {config.outcome!r}")
        code = cohort.dx_codes.index(config.outcome)
        prior = cohort.dx[idx, : last + 1, code].max(axis=1) if len(idx) else np.zeros(0)
        idx = idx[prior == 0]
        labels = cohort.dx[idx, last + config.horizon, code].astype(np.float64)
    else:
        if config.outcome not in cohort.lab_ids:
            raise ConfigError(f"unknown lab {config.outcome!r}")
        lab = cohort.lab_ids.index(config.outcome)
        labels = X[idx, last + config.horizon, lab].astype(np.float64)
    ids = [cohort.patient_ids[i] for i in idx]
    sample = SequenceSample(ids, windows, X[idx][:, windows], labels)
    if deltas is not None and config.uses_delta:
        sample.delta_targets, sample.unmatched = align_deltas(ids, windows, deltas.patient_ids, deltas.delta, deltas.unmatched)
    return sample


@dataclass
class RunData:
    run: int
    seed: int
    train: np.ndarray
    test: np.ndarray
    features: np.ndarray
    deltas: DeltaSet | None


def prepare_run(cohort, run: int, base_seed: int, train_fraction: float, deltas=None, need_delta=True,
                delta_options: DeltaOptions = DeltaOptions()) -> RunData:
    """Split, impute on training patients, and attach Δ.

    A precomputed ``deltas`` set is used as is; otherwise Δ is recomputed
    over the whole cohort with propensity models fitted on this run's
    training patients.
    """
    seed = int(base_seed) + int(run)
    train, test = split_patients(len(cohort), train_fraction, seed)
    X = impute(cohort, train)
    ds = deltas
    if ds is None and need_delta:
        o = delta_options
        ds = build_delta_sequences(
            cohort.meds, X, cohort.patient_ids, caliper=o.caliper, caliper_factor=o.caliper_factor,
            min_group_size=o.min_group_size, relevant_labs=o.relevant_labs, structure=cohort.structure,
            fit_patients=train, propensity_ridge=o.propensity_ridge,
        )
    return RunData(run, seed, train, test, X, ds)
