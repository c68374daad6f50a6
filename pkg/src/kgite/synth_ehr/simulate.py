"""Forward simulation of patient cohorts over a causal structure.

Per window, for every disease ``d``::

    s_t = a*s_{t-1} + sum_p b_p*parent_p(s_{t-1}) + c + noise
          + sum over active lines of Ep(windows since start) * EI
    s_t = max(s_t, 0)
    labs_t = labs_{t-1} + W @ (S_t - S_{t-1})      (= baseline + W @ S_t)
    read_t = labs_t + measurement noise, where the lab is measured
    dx_t   = dx_{t-1} or diag_read_t > threshold

then the next medication line of a diagnosed disease is started when its
measured diagnostic lab exceeds ``threshold * (1 + escalation_margin)``.
Decisions only use measured values; no measurement, no decision.

Every random number a patient consumes is drawn up front from a stream
seeded by ``(rng_seed, patient index)``; treatment decisions never change
what is drawn, so a re-simulation with medications withheld is an exact
counterfactual clone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from .structure import MAX_LINES, CausalStructure


@dataclass(frozen=True)
class SimulationConfig:
    structure: CausalStructure
    n_patients: int = 10000
    observation_rate: float = 0.5
    escalation_margin: float = 0.10
    rng_seed: int = 0
    n_windows: int | None = None

    def __post_init__(self):
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if not 0.0 < self.observation_rate <= 1.0:
            raise ValueError("observation_rate must be in (0, 1]")
        if not self.escalation_margin > 0.0:
            raise ValueError("escalation_margin must be > 0")
        if self.n_windows is not None and self.n_windows < 1:
            raise ValueError("n_windows must be >= 1")

    @property
    def windows(self) -> int:
        return self.structure.n_windows if self.n_windows is None else self.n_windows


@dataclass
class PatientTrajectory:
    """One simulated patient. Matrices are window-major: ``[window, item]``."""

    patient_id: str
    severity: np.ndarray
    labs_true: np.ndarray
    labs_observed: np.ndarray  # NaN where missing
    observed_mask: np.ndarray
    meds: np.ndarray
    dx: np.ndarray
    individual_effects: np.ndarray  # [disease, line]
    line_start: np.ndarray = field(default=None)  # [disease, line], -1 if never
    severity_noise: np.ndarray = field(default=None)
    observation_noise: np.ndarray = field(default=None)


@dataclass
class Cohort:
    """Stacked trajectories, arrays shaped ``[patient, window, item]``."""

    structure: CausalStructure
    patient_ids: list[str]
    labs_observed: np.ndarray
    meds: np.ndarray
    dx: np.ndarray
    lab_ids: list[str]
    digit_names: list[str]
    dx_codes: list[str]
    severity: np.ndarray | None = None
    labs_true: np.ndarray | None = None
    individual_effects: np.ndarray | None = None
    line_start: np.ndarray | None = None
    severity_noise: np.ndarray | None = None
    observation_noise: np.ndarray | None = None

    def __len__(self):
        return len(self.patient_ids)

    @property
    def n_windows(self) -> int:
        return self.meds.shape[1]

    @property
    def observed_mask(self) -> np.ndarray:
        return ~np.isnan(self.labs_observed)

    @property
    def has_ground_truth(self) -> bool:
        return self.labs_true is not None

    def patient(self, i: int) -> PatientTrajectory:
        gt = self.has_ground_truth
        return PatientTrajectory(
            patient_id=self.patient_ids[i],
            severity=self.severity[i] if gt else None,
            labs_true=self.labs_true[i] if gt else None,
            labs_observed=self.labs_observed[i],
            observed_mask=~np.isnan(self.labs_observed[i]),
            meds=self.meds[i],
            dx=self.dx[i],
            individual_effects=self.individual_effects[i] if gt else None,
            line_start=None if self.line_start is None else self.line_start[i],
            severity_noise=None if self.severity_noise is None else self.severity_noise[i],
            observation_noise=None if self.observation_noise is None else self.observation_noise[i],
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.patient(i)

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return Cohort(
            structure=self.structure,
            patient_ids=[self.patient_ids[i] for i in idx],
            labs_observed=self.labs_observed[idx],
            meds=self.meds[idx],
            dx=self.dx[idx],
            lab_ids=self.lab_ids,
            digit_names=self.digit_names,
            dx_codes=self.dx_codes,
            severity=pick(self.severity),
            labs_true=pick(self.labs_true),
            individual_effects=pick(self.individual_effects),
            line_start=pick(self.line_start),
            severity_noise=pick(self.severity_noise),
            observation_noise=pick(self.observation_noise),
        )


# --------------------------------------------------------------------------
# per-patient random draws
# --------------------------------------------------------------------------


def patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _initial_severity(structure: CausalStructure, u: np.ndarray) -> np.ndarray:
    a = structure.arrays
    s0 = np.zeros(len(structure.diseases))
    for d in a["topo"]:
        v = 0.0
        for j in range(len(s0)):
            v += a["init_parent_w"][d, j] * s0[j]
        v += a["init_low"][d] + (a["init_high"][d] - a["init_low"][d]) * u[d]
        s0[d] = max(v, 0.0)
    return s0


def init_patient(structure: CausalStructure, rng: np.random.Generator) -> np.ndarray:
    """Initial severity vector.

    Root diseases are uniform on ``[init_low, init_high]``; a child adds
    ``init_parent_weights . parent severities`` to its own uniform draw.
    """
    return _initial_severity(structure, rng.random(len(structure.diseases)))


def _draw(structure: CausalStructure, n_windows: int, seed: int, index: int):
    D, L = len(structure.diseases), len(structure.labs)
    rng = patient_rng(seed, index)
    init_u = rng.random(D)
    sev_noise = rng.standard_normal((n_windows, D))
    sev_noise[0] = 0.0
    z = rng.standard_normal((D, MAX_LINES))
    shared = rng.standard_normal()
    obs_u = rng.random((n_windows, L))
    obs_z = rng.standard_normal((n_windows, L))
    rho = structure.individual_effect_correlation
    # corr(log E^I) between any two lines of a patient is rho; the marginal stays log-normal(0, sigma)
    indiv = np.exp(structure.individual_effect_sigma * (np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * z))
    return init_u, sev_noise, indiv, obs_u, obs_z


def _meds_from_starts(structure: CausalStructure, start: np.ndarray, n_windows: int) -> np.ndarray:
    P = start.shape[0]
    meds = np.zeros((P, n_windows, structure.n_digits), dtype=np.int8)
    t = np.arange(n_windows)
    for d, spec in enumerate(structure.diseases):
        off = structure.digit_offsets[d]
        for k in range(len(spec.lines)):
            s = start[:, d, k]
            meds[:, :, off + k] = (s[:, None] >= 0) & (t[None, :] >= s[:, None])
    return meds


def simulate_cohort(
    config: SimulationConfig,
    withhold=None,
    force_start=None,
    patient_indices=None,
) -> Cohort:
    """Simulate ``config.n_patients`` trajectories.

    ``withhold`` (bool, broadcastable to ``[patient, disease, line]``) blocks
    prescription of the flagged lines; ``True`` gives the untreated
    counterfactual cohort. ``force_start`` (int, same shape, -1 for none)
    starts a line at a given window regardless of labs.
    ``patient_indices`` simulates only those patients of the cohort.
    """
    s = config.structure
    T = config.windows
    D, L = len(s.diseases), len(s.labs)
    idx = np.arange(config.n_patients) if patient_indices is None else np.asarray(patient_indices)
    P = len(idx)

    init_u = np.zeros((P, D))
    sev_noise = np.zeros((P, T, D))
    indiv = np.ones((P, D, MAX_LINES))
    obs_u = np.zeros((P, T, L))
    obs_z = np.zeros((P, T, L))
    for row, i in enumerate(idx):
        init_u[row], sev_noise[row], indiv[row], obs_u[row], obs_z[row] = _draw(s, T, config.rng_seed, i)
    for d, spec in enumerate(s.diseases):
        indiv[:, d, len(spec.lines):] = 0.0

    if withhold is None:
        withhold = False
    withhold = np.ascontiguousarray(np.broadcast_to(np.asarray(withhold, dtype=bool), (P, D, MAX_LINES)))
    if force_start is None:
        force_start = -1
    force_start = np.ascontiguousarray(np.broadcast_to(np.asarray(force_start, dtype=np.int64), (P, D, MAX_LINES)))

    mask = obs_u < config.observation_rate
    a = s.arrays
    severity, labs, observed, dx, start = kernels.simulate(
        init_u, sev_noise, indiv, force_start, withhold,
        a["topo"], a["persistence"], a["drift"], a["noise_std"], a["init_low"], a["init_high"],
        a["parent_w"], a["init_parent_w"], a["effect"], a["n_lines"], a["diag_lab"], a["threshold"],
        a["lab_baseline"], a["lab_weight"], a["out_w"], a["out_threshold"], a["out_onset"],
        float(config.escalation_margin),
        mask, obs_z, a["lab_noise"],
    )
    return Cohort(
        structure=s,
        patient_ids=[f"P{i:06d}" for i in idx],
        labs_observed=observed,
        meds=_meds_from_starts(s, start, T),
        dx=dx,
        lab_ids=s.lab_ids,
        digit_names=s.digit_names,
        dx_codes=s.dx_codes,
        severity=severity,
        labs_true=labs,
        individual_effects=indiv,
        line_start=start,
        severity_noise=sev_noise,
        observation_noise=obs_z,
    )


# --------------------------------------------------------------------------
# single-patient operations (reference path, used for checking the kernels)
# --------------------------------------------------------------------------


def prescribe(labs_t, meds, dx_t, structure: CausalStructure, escalation_margin: float = 0.10):
    """Treatment vector for a window given its labs, diagnoses and prior meds.

    A diagnosed disease whose diagnostic lab is above
    ``threshold * (1 + margin)`` starts its lowest unstarted line, if any.
    A missing (NaN) lab never triggers a start.
    """
    out = np.array(meds, dtype=np.int8, copy=True)
    for d, spec in enumerate(structure.diseases):
        if not dx_t[d]:
            continue
        off = structure.digit_offsets[d]
        k = 0
        while k < len(spec.lines) and out[off + k]:
            k += 1
        if k == len(spec.lines):
            continue
        lab = labs_t[structure.arrays["diag_lab"][d]]
        if lab > spec.threshold * (1.0 + escalation_margin):
            out[off + k] = 1
    return out


def step_patient(patient: PatientTrajectory, structure: CausalStructure, t: int, escalation_margin: float = 0.10):
    """Fill severity, labs, dx and meds of window ``t`` in place.

    Needs ``patient.severity_noise``, ``patient.observation_noise``, the
    measurement mask and windows ``< t`` populated. Line start windows are
    read back from the meds matrix.
    """
    T = patient.severity.shape[0]
    if not 1 <= t < T:
        raise IndexError(f"window {t} out of range 1..{T - 1}")
    a = structure.arrays
    D = len(structure.diseases)
    prev = patient.severity[t - 1]
    S = a["effect"].shape[2]
    new = np.zeros(D)
    for d, spec in enumerate(structure.diseases):
        v = a["persistence"][d] * prev[d]
        for j in range(D):
            v += a["parent_w"][d, j] * prev[j]
        v += a["drift"][d]
        v += a["noise_std"][d] * patient.severity_noise[t, d]
        off = structure.digit_offsets[d]
        for k in range(len(spec.lines)):
            on = np.flatnonzero(patient.meds[:t, off + k])
            if on.size:
                e = t - 1 - on[0]
                if e < S:
                    v += a["effect"][d, k, e] * patient.individual_effects[d, k]
        new[d] = v if v > 0.0 else 0.0
    patient.severity[t] = new
    # the lab change is W @ (S_t - S_{t-1}); summing from the baseline avoids drift
    labs = np.array(a["lab_baseline"], copy=True)
    for l in range(labs.shape[0]):
        for d in range(D):
            labs[l] += a["lab_weight"][l, d] * new[d]
    patient.labs_true[t] = labs
    read = np.where(patient.observed_mask[t], labs + a["lab_noise"] * patient.observation_noise[t], np.nan)
    patient.labs_observed[t] = read
    dx_prev = patient.dx[t - 1]
    dx = np.array(dx_prev, dtype=np.int8, copy=True)
    with np.errstate(invalid="ignore"):
        dx[:D] |= (read[a["diag_lab"]] > a["threshold"]).astype(np.int8)
    for y, o in enumerate(structure.outcomes):
        if t >= a["out_onset"][y]:
            v = 0.0
            for d in range(D):
                v += a["out_w"][y, d] * new[d]
            if v > a["out_threshold"][y]:
                dx[D + y] = 1
    patient.dx[t] = dx
    patient.meds[t] = prescribe(read, patient.meds[t - 1], dx, structure, escalation_margin)
    return patient
