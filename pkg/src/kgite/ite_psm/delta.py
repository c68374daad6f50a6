"""Sequential individualized treatment effects.

For a treated record ``(p1, t1)`` matched to control ``(p2, t2)``::

    delta[p1, t1 + 1] = labs[p1, t1 + 1, L] - labs[p2, t2 + 1, L]

The vector is attached to window ``t1 + 1``, the window whose labs it is
computed from, so it never reaches a model before those labs do. Windows
with no newly-added medication carry the zero vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..logistic import DataError, DegenerateFitError
from .groups import enumerate_group_pairs
from .matching import MatchedPair, default_caliper, match_groups
from .propensity import DEFAULT_PROPENSITY_RIDGE, fit_propensity

log = logging.getLogger(__name__)


class HorizonError(IndexError):
    pass


@dataclass
class DeltaRecord:
    patient: int
    window: int               # t1 + 1
    delta: np.ndarray
    matched_control: tuple[int, int] | None
    unmatched: bool = False


@dataclass
class PairReport:
    key: str
    m_add: tuple[int, ...]
    treated_count: int
    control_count: int
    matched: int
    match_rate: float
    mean_gap: float
    caliper: float
    status: str


@dataclass
class DeltaSet:
    """Delta sequences for a whole cohort, ``[patient, window, lab in L]``."""

    patient_ids: list[str]
    lab_index: np.ndarray
    delta: np.ndarray
    unmatched: np.ndarray            # [patient, window] 0/1
    control_patient: np.ndarray      # [patient, window], -1 where none
    control_window: np.ndarray
    report: list[PairReport] = field(default_factory=list)
    horizon_dropped: int = 0
    propensity: dict = field(default_factory=dict)   # pair key -> PropensityModel

    @property
    def n_labs(self) -> int:
        return len(self.lab_index)

    def records(self):
        """Non-default rows: computed deltas and unmatched flags."""
        P, T = self.unmatched.shape
        rows = np.argwhere((self.control_patient >= 0) | (self.unmatched == 1))
        for p, t in rows:
            c = None if self.control_patient[p, t] < 0 else (int(self.control_patient[p, t]), int(self.control_window[p, t]))
            yield DeltaRecord(int(p), int(t), self.delta[p, t].copy(), c, bool(self.unmatched[p, t]))

    def subset(self, idx) -> "DeltaSet":
        idx = np.asarray(idx, dtype=np.int64)
        return DeltaSet(
            patient_ids=[self.patient_ids[i] for i in idx],
            lab_index=self.lab_index,
            delta=self.delta[idx],
            unmatched=self.unmatched[idx],
            control_patient=self.control_patient[idx],
            control_window=self.control_window[idx],
            report=self.report,
            horizon_dropped=self.horizon_dropped,
            propensity=self.propensity,
        )


def compute_delta(matched: MatchedPair, labs: np.ndarray, relevant_labs, mask=None) -> DeltaRecord:
    """Difference of next-window labs over ``relevant_labs``.

    ``labs`` is a fully observed ``[patient, window, lab]`` array (impute
    first). ``mask`` zeroes entries of labs outside the pair's relevant set.
    """
    T = labs.shape[1]
    (p1, t1), (p2, t2) = matched.treated, matched.control
    if t1 + 1 >= T or t2 + 1 >= T:
        raise HorizonError(f"next window beyond last window {T - 1}: t1={t1}, t2={t2}")
    L = np.asarray(relevant_labs, dtype=np.int64)
    d = labs[p1, t1 + 1, L] - labs[p2, t2 + 1, L]
    if mask is not None:
        d = np.where(mask, d, 0.0)
    return DeltaRecord(p1, t1 + 1, d, (p2, t2))


def resolve_relevant_labs(spec, n_labs: int, structure=None) -> np.ndarray:
    """``"auto"``, a comma string, or a sequence of lab indices."""
    if spec is None or (isinstance(spec, str) and spec == "auto"):
        if structure is not None:
            return np.asarray(structure.outcome_relevant_labs(), dtype=np.int64)
        return np.arange(n_labs)
    if isinstance(spec, str):
        spec = [s for s in spec.split(",") if s.strip()]
    out = []
    for s in spec:
        if isinstance(s, str) and structure is not None and s in structure.lab_ids:
            out.append(structure.lab_ids.index(s))
        else:
            out.append(int(s))
    L = np.asarray(sorted(set(out)), dtype=np.int64)
    if L.size == 0 or L.min() < 0 or L.max() >= n_labs:
        raise ValueError(f"relevant labs out of range 0..{n_labs - 1}: {spec}")
    return L


def _pair_mask(pair, L, structure, auto: bool):
    if structure is None or not auto:
        return None
    dig = structure.digit_disease[list(pair.m_add)]
    targeted = set(structure.labs_for_diseases(sorted(set(dig.tolist()))).tolist())
    return np.array([l in targeted for l in L.tolist()])


def build_delta_sequences(
    meds,
    labs,
    patient_ids=None,
    caliper=None,
    caliper_factor: float = 0.2,
    min_group_size: int = 5,
    relevant_labs="auto",
    structure=None,
    fit_patients=None,
    propensity_ridge: float = DEFAULT_PROPENSITY_RIDGE,
    digit_classes="auto",
) -> DeltaSet:
    """Enumerate pairs, fit propensities, match and difference next-window labs.

    ``labs`` must be imputed. With ``fit_patients`` (indices or bool mask) the
    propensity model of every pair is fitted on those patients' members only
    and then applied to everyone; controls are drawn from the full cohort.
    ``digit_classes="auto"`` compares combinations within each disease's
    line ladder when a structure is given, and over the whole vector
    otherwise.
    """
    meds = np.asarray(meds)
    labs = np.asarray(labs, dtype=np.float64)
    P, T, n_lab = labs.shape
    if patient_ids is None:
        patient_ids = [f"P{i:06d}" for i in range(P)]
    auto = isinstance(relevant_labs, str) and relevant_labs == "auto" or relevant_labs is None
    L = resolve_relevant_labs(relevant_labs, n_lab, structure)

    fit_mask = np.ones(P, dtype=bool)
    if fit_patients is not None:
        fp = np.asarray(fit_patients)
        if fp.dtype == bool:
            fit_mask = fp.copy()
        else:
            fit_mask = np.zeros(P, dtype=bool)
            fit_mask[fp] = True

    delta = np.zeros((P, T, len(L)))
    hits = np.zeros((P, T, len(L)), dtype=np.int64)
    unmatched = np.zeros((P, T), dtype=np.int8)
    cp = np.full((P, T), -1, dtype=np.int64)
    cw = np.full((P, T), -1, dtype=np.int64)
    dropped = 0
    report: list[PairReport] = []
    models = {}

    if isinstance(digit_classes, str) and digit_classes == "auto":
        digit_classes = None if structure is None else structure.digit_disease
    pairs, small = (
        enumerate_group_pairs(meds, min_group_size, return_small=True, digit_classes=digit_classes)
        if P
        else ([], [])
    )

    def flag(records):
        n = 0
        for p, t in records:
            if t + 1 < T:
                unmatched[p, t + 1] = 1
            else:
                n += 1
        return n

    for pair in small:
        dropped += flag(pair.treated)
        report.append(PairReport(pair.key, pair.m_add, len(pair.treated), len(pair.control), 0, 0.0, float("nan"), float("nan"), "too_small"))

    for pair in pairs:
        tr, ct = pair.treated, pair.control
        tr_fit = tr[fit_mask[tr[:, 0]]]
        ct_fit = ct[fit_mask[ct[:, 0]]]
        Xf = np.concatenate([labs[tr_fit[:, 0], tr_fit[:, 1]], labs[ct_fit[:, 0], ct_fit[:, 1]]])
        Zf = np.concatenate([np.ones(len(tr_fit)), np.zeros(len(ct_fit))])
        try:
            model = fit_propensity(Xf, Zf, ridge=propensity_ridge, fitted_on=pair.key)
        except (DegenerateFitError, DataError) as exc:
            log.warning("group pair %s skipped: %s", pair.key, exc)
            dropped += flag(tr)
            report.append(PairReport(pair.key, pair.m_add, len(tr), len(ct), 0, 0.0, float("nan"), float("nan"), f"failed: {exc}"))
            continue
        models[pair.key] = model
        p_t = model.predict(labs[tr[:, 0], tr[:, 1]])
        p_c = model.predict(labs[ct[:, 0], ct[:, 1]])
        eps = caliper if caliper is not None else default_caliper(model.predict(Xf), caliper_factor)
        if not eps > 0:
            # a fit with no spread in propensity cannot separate anyone; accept exact ties only
            eps = np.finfo(float).tiny
        res = match_groups(tr, ct, p_t, p_c, eps, patient_ids)
        mask = _pair_mask(pair, L, structure, auto)
        for m in res.pairs:
            (p1, t1), (p2, t2) = m.treated, m.control
            if t1 + 1 >= T:
                dropped += 1
                continue
            rec = compute_delta(m, labs, L, mask)
            on = np.ones(len(L), dtype=bool) if mask is None else mask
            delta[p1, t1 + 1] += rec.delta
            hits[p1, t1 + 1] += on
            if cp[p1, t1 + 1] < 0:
                cp[p1, t1 + 1], cw[p1, t1 + 1] = p2, t2
        dropped += flag(res.unmatched)
        report.append(
            PairReport(pair.key, pair.m_add, len(tr), len(ct), len(res.pairs), res.match_rate, res.mean_gap, float(eps), "ok")
        )
    # additions in several classes at one window: average where their labs overlap
    np.divide(delta, hits, out=delta, where=hits > 1)
    return DeltaSet(list(patient_ids), L, delta, unmatched, cp, cw, report, dropped, models)
