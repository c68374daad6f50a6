"""Comparable treatment groups.

A patient-window joins the *treated* side of a pair at the window where
some digits turn on (``m_add``); the *control* side is every patient-window
holding the same combination without those digits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TreatmentVector:
    digits: tuple[int, ...]

    def __post_init__(self):
        if any(d not in (0, 1) for d in self.digits):
            raise ValueError("treatment digits must be 0/1")

    def __len__(self):
        return len(self.digits)

    @classmethod
    def of(cls, row) -> "TreatmentVector":
        return cls(tuple(int(v) for v in np.asarray(row).ravel()))

    def as_array(self) -> np.ndarray:
        return np.array(self.digits, dtype=np.int8)

    def __str__(self):
        return "".join(str(d) for d in self.digits)


@dataclass(frozen=True)
class ComparableGroupPair:
    treated_key: TreatmentVector
    control_key: TreatmentVector
    m_add: tuple[int, ...]
    # members as (patient index, window) rows
    treated: np.ndarray
    control: np.ndarray

    def __post_init__(self):
        if not self.m_add:
            raise ValueError("m_add must be nonempty")
        if len(self.treated_key) != len(self.control_key):
            raise ValueError("treatment vectors differ in length")
        add = set(self.m_add)
        for i, (a, b) in enumerate(zip(self.treated_key.digits, self.control_key.digits)):
            if i in add and not (a == 1 and b == 0):
                raise ValueError(f"digit {i} in m_add must be 1 in treated and 0 in control")
            if i not in add and a != b:
                raise ValueError(f"digit {i} outside m_add differs between groups")

    @property
    def key(self) -> str:
        return f"{self.control_key}+{{{','.join(map(str, self.m_add))}}}"


def transitions(meds: np.ndarray):
    """Newly-added digit masks per patient-window (window 0 starts from no meds)."""
    prev = np.zeros_like(meds)
    prev[:, 1:] = meds[:, :-1]
    return (meds == 1) & (prev == 0)


def enumerate_group_pairs(
    meds,
    min_group_size: int = 5,
    control_max_window: int | None = None,
    return_small: bool = False,
    digit_classes=None,
):
    """All comparable pairs with at least ``min_group_size`` members per side.

    ``digit_classes`` partitions the digits into medication classes (a class
    id per digit); combinations are then compared within one class at a
    time and the pair keys are full-length vectors that are zero outside the
    class. ``None`` treats the whole vector as one class.

    ``control_max_window`` caps control windows (default: the penultimate
    window, since a control's next-window labs are needed). With
    ``return_small`` the pairs failing the size filter are returned too, as
    a second list.
    """
    meds = np.asarray(meds, dtype=np.int8)
    if meds.ndim != 3 or meds.shape[0] == 0 or meds.shape[1] == 0:
        return ([], []) if return_small else []
    if digit_classes is None:
        kept, small = _enumerate(meds, min_group_size, control_max_window)
    else:
        classes = np.asarray(digit_classes)
        if classes.shape != (meds.shape[2],):
            raise ValueError("digit_classes needs one class id per digit")
        kept, small = [], []
        for c in sorted(set(classes.tolist())):
            cols = np.flatnonzero(classes == c)
            k, s = _enumerate(meds[:, :, cols], min_group_size, control_max_window)
            kept += [_widen(pr, cols, meds.shape[2]) for pr in k]
            small += [_widen(pr, cols, meds.shape[2]) for pr in s]
    return (kept, small) if return_small else kept


def _widen(pair: ComparableGroupPair, cols, m: int) -> ComparableGroupPair:
    tk = np.zeros(m, dtype=np.int8)
    ck = np.zeros(m, dtype=np.int8)
    tk[cols] = pair.treated_key.as_array()
    ck[cols] = pair.control_key.as_array()
    return ComparableGroupPair(
        treated_key=TreatmentVector.of(tk),
        control_key=TreatmentVector.of(ck),
        m_add=tuple(int(cols[i]) for i in pair.m_add),
        treated=pair.treated,
        control=pair.control,
    )


def _enumerate(meds, min_group_size, control_max_window):
    P, T, m = meds.shape
    if control_max_window is None:
        control_max_window = T - 2
    added = transitions(meds)
    flat = meds.reshape(P * T, m)
    codes, inverse = np.unique(np.packbits(flat, axis=1), axis=0, return_inverse=True)
    inverse = inverse.ravel().reshape(P, T)
    code_of = {codes[i].tobytes(): i for i in range(codes.shape[0])}

    pt = np.argwhere(added.any(axis=2))  # (patient, window) rows, sorted
    buckets: dict[tuple[bytes, bytes], list] = {}
    for p, t in pt:
        add = added[p, t]
        ctrl = meds[p, t].copy()
        ctrl[add] = 0
        key = (np.packbits(ctrl).tobytes(), np.packbits(add.astype(np.int8)).tobytes())
        buckets.setdefault(key, []).append((p, t))

    window = np.arange(T)[None, :]
    kept, small = [], []
    for (ctrl_bytes, add_bytes) in sorted(buckets):
        treated = np.array(buckets[(ctrl_bytes, add_bytes)], dtype=np.int64)
        code = code_of.get(ctrl_bytes)
        if code is None:
            control = np.zeros((0, 2), dtype=np.int64)
        else:
            control = np.argwhere((inverse == code) & (window <= control_max_window)).astype(np.int64)
        ctrl_vec = np.unpackbits(np.frombuffer(ctrl_bytes, dtype=np.uint8))[:m].astype(np.int8)
        add_vec = np.unpackbits(np.frombuffer(add_bytes, dtype=np.uint8))[:m].astype(bool)
        treat_vec = ctrl_vec.copy()
        treat_vec[add_vec] = 1
        pair = ComparableGroupPair(
            treated_key=TreatmentVector.of(treat_vec),
            control_key=TreatmentVector.of(ctrl_vec),
            m_add=tuple(int(i) for i in np.flatnonzero(add_vec)),
            treated=treated,
            control=control,
        )
        if len(treated) >= min_group_size and len(control) >= min_group_size:
            kept.append(pair)
        else:
            small.append(pair)
    return kept, small
