from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels


class CaliperError(ValueError):
    pass


@dataclass(frozen=True)
class MatchedPair:
    treated: tuple[int, int]   # (patient index, window t1)
    control: tuple[int, int]   # (patient index, window t2)
    propensity_gap: float


@dataclass
class MatchResult:
    pairs: list[MatchedPair]
    unmatched: list[tuple[int, int]]

    @property
    def match_rate(self) -> float:
        n = len(self.pairs) + len(self.unmatched)
        return len(self.pairs) / n if n else 0.0

    @property
    def mean_gap(self) -> float:
        return float(np.mean([m.propensity_gap for m in self.pairs])) if self.pairs else float("nan")


def default_caliper(propensities, factor: float = 0.2) -> float:
    """``factor`` times the spread of fitted probabilities over the union population."""
    sd = float(np.std(np.asarray(propensities, dtype=np.float64)))
    return factor * sd


def control_ranks(control: np.ndarray, patient_ids) -> np.ndarray:
    """Position of each control in (patient id string, window) order."""
    ids = np.asarray(patient_ids, dtype=str)
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[np.argsort(ids, kind="stable")] = np.arange(len(ids))
    order = np.lexsort((control[:, 1], id_rank[control[:, 0]])) if len(control) else np.zeros(0, dtype=np.int64)
    rank = np.empty(len(control), dtype=np.int64)
    rank[order] = np.arange(len(control))
    return rank


def match_groups(treated, control, p_treated, p_control, caliper: float, patient_ids=None) -> MatchResult:
    """1:nearest propensity matching with replacement inside ``caliper``.

    ``treated``/``control`` are ``(patient, window)`` rows. Equal gaps go to the
    control with the smaller ``|t1 - t2|``, then the smaller patient id, then
    the earlier window.
    """
    if not caliper > 0:
        raise CaliperError(f"caliper must be > 0, got {caliper}")
    treated = np.asarray(treated, dtype=np.int64).reshape(-1, 2)
    control = np.asarray(control, dtype=np.int64).reshape(-1, 2)
    if patient_ids is None:
        n = int(max(treated[:, 0].max(initial=-1), control[:, 0].max(initial=-1))) + 1
        patient_ids = [f"{i:012d}" for i in range(n)]
    rank = control_ranks(control, patient_ids)
    best, gaps = kernels.match(
        p_treated, treated[:, 1], treated[:, 0],
        p_control, control[:, 1], control[:, 0], rank, caliper,
    )
    pairs, unmatched = [], []
    for i, c in enumerate(best):
        tr = (int(treated[i, 0]), int(treated[i, 1]))
        if c < 0:
            unmatched.append(tr)
        else:
            pairs.append(MatchedPair(tr, (int(control[c, 0]), int(control[c, 1])), float(gaps[i])))
    assert all(m.propensity_gap <= caliper for m in pairs)
    return MatchResult(pairs, unmatched)
