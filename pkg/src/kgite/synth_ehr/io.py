"""Cohort JSON-Lines files.

Line 1 is a header record::

    {"kind": "header", "schema": "kgite/cohort/v1", "n_windows": T,
     "labs": [...], "digits": [...], "dx_codes": [...],
     "ground_truth": bool, "structure": {...}}

Every following line is one patient::

    {"kind": "patient", "id": "P000001",
     "meds": [[0/1 per digit] per window],
     "labs_observed": [[value or null per lab] per window],
     "dx": [[0/1 per code] per window],
     # only with ground truth:
     "severity": [[...]], "labs_true": [[...]],
     "individual_effects": [[per line] per disease]}
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .simulate import Cohort
from .structure import structure_from_dict

COHORT_SCHEMA = "kgite/cohort/v1"


class CohortFormatError(ValueError):
    pass


def _nullable(row):
    return [None if math.isnan(v) else v for v in row.tolist()]


def write_cohort(cohort: Cohort, path, emit_ground_truth: bool = False) -> None:
    gt = emit_ground_truth and cohort.has_ground_truth
    header = {
        "kind": "header",
        "schema": COHORT_SCHEMA,
        "n_windows": cohort.n_windows,
        "labs": list(cohort.lab_ids),
        "digits": list(cohort.digit_names),
        "dx_codes": list(cohort.dx_codes),
        "ground_truth": bool(gt),
        "structure": cohort.structure.to_dict() if cohort.structure is not None else None,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, pid in enumerate(cohort.patient_ids):
            rec = {
                "kind": "patient",
                "id": pid,
                "meds": cohort.meds[i].tolist(),
                "labs_observed": [_nullable(r) for r in cohort.labs_observed[i]],
                "dx": cohort.dx[i].tolist(),
            }
            if gt:
                rec["severity"] = cohort.severity[i].tolist()
                rec["labs_true"] = cohort.labs_true[i].tolist()
                n_lines = [len(d.lines) for d in cohort.structure.diseases]
                rec["individual_effects"] = [
                    cohort.individual_effects[i, d, :k].tolist() for d, k in enumerate(n_lines)
                ]
            fh.write(json.dumps(rec) + "\n")


def read_cohort(path) -> Cohort:
    """Parse a cohort file; any malformed content raises ``CohortFormatError``."""
    try:
        return _read_cohort(path)
    except CohortFormatError:
        raise
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
        raise CohortFormatError(f"{path}: {type(exc).__name__}: {exc}") from exc


def _read_cohort(path) -> Cohort:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CohortFormatError(f"{path}: empty cohort file")
    header = json.loads(lines[0])
    if header.get("kind") != "header" or header.get("schema") != COHORT_SCHEMA:
        raise CohortFormatError(f"{path}: missing {COHORT_SCHEMA} header")
    structure = structure_from_dict(header["structure"]) if header.get("structure") else None
    T = int(header["n_windows"])
    ids, meds, labs, dx = [], [], [], []
    sev, labs_true, indiv = [], [], []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("kind", "patient") != "patient":
            continue
        ids.append(str(rec["id"]))
        m = np.asarray(rec["meds"], dtype=np.int8)
        x = np.array([[np.nan if v is None else v for v in r] for r in rec["labs_observed"]], dtype=np.float64)
        d = np.asarray(rec["dx"], dtype=np.int8)
        if m.shape[0] != T or x.shape[0] != T or d.shape[0] != T:
            raise CohortFormatError(f"{path}:{n}: patient {rec['id']} does not span {T} windows")
        meds.append(m)
        labs.append(x)
        dx.append(d)
        if "labs_true" in rec:
            sev.append(np.asarray(rec["severity"], dtype=np.float64))
            labs_true.append(np.asarray(rec["labs_true"], dtype=np.float64))
            e = np.zeros((len(rec["individual_effects"]), 3))
            for k, row in enumerate(rec["individual_effects"]):
                e[k, : len(row)] = row
            indiv.append(e)
    n_lab, n_dig, n_dx = len(header["labs"]), len(header["digits"]), len(header["dx_codes"])
    gt = len(labs_true) == len(ids) and len(ids) > 0
    return Cohort(
        structure=structure,
        patient_ids=ids,
        labs_observed=np.stack(labs) if ids else np.zeros((0, T, n_lab)),
        meds=np.stack(meds) if ids else np.zeros((0, T, n_dig), dtype=np.int8),
        dx=np.stack(dx) if ids else np.zeros((0, T, n_dx), dtype=np.int8),
        lab_ids=list(header["labs"]),
        digit_names=list(header["digits"]),
        dx_codes=list(header["dx_codes"]),
        severity=np.stack(sev) if gt else None,
        labs_true=np.stack(labs_true) if gt else None,
        individual_effects=np.stack(indiv) if gt else None,
    )
