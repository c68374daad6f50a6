from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AlignmentError(ValueError):
    pass


@dataclass
class SequenceSample:
    """Model-ready sequences for one experiment, stacked over patients.

    ``inputs`` is ``[n, K, d]``; ``delta_targets`` (``[n, K, |L|]``) and
    ``unmatched`` (``[n, K]``) are present when Δ was attached.
    """

    patient_ids: list
    windows: np.ndarray          # the K window indices, oldest first
    inputs: np.ndarray
    labels: np.ndarray
    delta_targets: np.ndarray | None = None
    unmatched: np.ndarray | None = None

    def __len__(self):
        return len(self.patient_ids)

    @property
    def time_step(self):
        return self.inputs.shape[1]

    def subset(self, idx) -> "SequenceSample":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return SequenceSample(
            [self.patient_ids[i] for i in idx], self.windows, self.inputs[idx], self.labels[idx],
            pick(self.delta_targets), pick(self.unmatched),
        )


def augment(inputs, delta, unmatched=None) -> np.ndarray:
    """Per-window concatenation ``[X, Δ, unmatched flag]``.

    Missing ``unmatched`` counts as all zeros; the flag column is always
    present so the width is ``d + |L| + 1``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    dl = np.asarray(delta, dtype=np.float64)
    if dl.ndim != 3 or dl.shape[:2] != x.shape[:2]:
        raise AlignmentError(f"Δ shape {dl.shape} does not align with inputs {x.shape}")
    if unmatched is None:
        flag = np.zeros(x.shape[:2] + (1,))
    else:
        flag = np.asarray(unmatched, dtype=np.float64)
        if flag.shape != x.shape[:2]:
            raise AlignmentError(f"unmatched flags {flag.shape} do not align with inputs {x.shape[:2]}")
        flag = flag[..., None]
    return np.concatenate([x, dl, flag], axis=2)


def align_deltas(sample_ids, windows, delta_ids, delta, unmatched):
    """Rows of a cohort-wide ``[P, T, |L|]`` Δ array for the sample's patients and windows."""
    pos = {p: i for i, p in enumerate(delta_ids)}
    missing = [p for p in sample_ids if p not in pos]
    if missing:
        raise AlignmentError(f"{len(missing)} patients have no Δ sequence, e.g. {missing[0]}")
    windows = np.asarray(windows, dtype=np.int64)
    if windows.size and (windows.min() < 0 or windows.max() >= delta.shape[1]):
        raise AlignmentError(f"windows {windows.min()}..{windows.max()} outside Δ span 0..{delta.shape[1] - 1}")
    rows = np.array([pos[p] for p in sample_ids], dtype=np.int64)
    return delta[rows][:, windows], unmatched[rows][:, windows]


def flatten_windows(x) -> np.ndarray:
    """``[n, K, d]`` to the ``[n, K*d]`` design of the linear models, windows in time order."""
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1)
