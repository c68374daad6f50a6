"""Δ files and match reports.

The Δ file is JSON-Lines. A header names the patients, windows and labs;
only non-default rows follow (computed Δ or an ``unmatched`` flag), every
other patient-window carries the zero vector::

    {"kind": "header", "schema": "kgite/deltas/v1", "n_windows": T,
     "labs": [...], "lab_index": [...], "patients": [...], "horizon_dropped": n}
    {"kind": "delta", "patient": "P000003", "window": 17, "delta": [...],
     "unmatched": 0, "control": {"patient": "P000150", "window": 12}}
"""
from __future__ import annotations

import csv
import json

import numpy as np

from .delta import DeltaSet, PairReport

DELTA_SCHEMA = "kgite/deltas/v1"
REPORT_COLUMNS = ["pair_key", "m_add", "treated_count", "control_count", "matched", "match_rate", "mean_gap", "caliper", "status"]


class DeltaFormatError(ValueError):
    pass


def write_deltas(ds: DeltaSet, path, lab_ids=None) -> None:
    P, T = ds.unmatched.shape
    labs = [lab_ids[i] for i in ds.lab_index] if lab_ids is not None else [str(int(i)) for i in ds.lab_index]
    header = {
        "kind": "header", "schema": DELTA_SCHEMA, "n_windows": T, "labs": labs,
        "lab_index": [int(i) for i in ds.lab_index], "patients": list(ds.patient_ids),
        "horizon_dropped": int(ds.horizon_dropped),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in ds.records():
            ctrl = None
            if rec.matched_control is not None:
                ctrl = {"patient": ds.patient_ids[rec.matched_control[0]], "window": rec.matched_control[1]}
            row = {
                "kind": "delta", "patient": ds.patient_ids[rec.patient], "window": rec.window,
                "delta": [float(v) for v in rec.delta], "unmatched": int(rec.unmatched), "control": ctrl,
            }
            fh.write(json.dumps(row) + "\n")


def read_deltas(path) -> DeltaSet:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise DeltaFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DeltaFormatError(f"{path}:1: {exc}") from exc
    if header.get("kind") != "header" or header.get("schema") != DELTA_SCHEMA:
        raise DeltaFormatError(f"{path}: missing {DELTA_SCHEMA} header")
    try:
        ids = list(header["patients"])
        T = int(header["n_windows"])
        L = np.asarray(header["lab_index"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DeltaFormatError(f"{path}:1: bad header ({exc!r})") from exc
    pos = {p: i for i, p in enumerate(ids)}
    P = len(ids)
    delta = np.zeros((P, T, len(L)))
    unmatched = np.zeros((P, T), dtype=np.int8)
    cp = np.full((P, T), -1, dtype=np.int64)
    cw = np.full((P, T), -1, dtype=np.int64)
    for n, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            p, t = pos[row["patient"]], int(row["window"])
            if not 0 <= t < T:
                raise DeltaFormatError(f"{path}:{n}: window {t} outside 0..{T - 1}")
            vec = np.asarray(row["delta"], dtype=np.float64)
            if vec.shape != (len(L),):
                raise DeltaFormatError(f"{path}:{n}: Δ has {vec.size} entries, header lists {len(L)} labs")
            delta[p, t] = vec
            unmatched[p, t] = int(row.get("unmatched", 0))
            if row.get("control"):
                cp[p, t] = pos[row["control"]["patient"]]
                cw[p, t] = int(row["control"]["window"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            if isinstance(exc, DeltaFormatError):
                raise
            raise DeltaFormatError(f"{path}:{n}: {exc!r}") from exc
    return DeltaSet(ids, L, delta, unmatched, cp, cw, [], int(header.get("horizon_dropped", 0)))


def write_match_report(report, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in report:
            w.writerow([
                r.key, " ".join(map(str, r.m_add)), r.treated_count, r.control_count, r.matched,
                f"{r.match_rate:.6f}", f"{r.mean_gap:.6g}", f"{r.caliper:.6g}", r.status,
            ])


def read_match_report(path) -> list[PairReport]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(PairReport(
                row["pair_key"], tuple(int(v) for v in row["m_add"].split()), int(row["treated_count"]),
                int(row["control_count"]), int(row["matched"]), float(row["match_rate"]),
                float(row["mean_gap"]), float(row["caliper"]), row["status"],
            ))
    return out
