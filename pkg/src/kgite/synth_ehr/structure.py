"""Causal structures for the cohort simulator.

A structure declares latent diseases (with parent links and an escalation
ladder of medication lines), labs that read disease severity, and outcome
codes that are caused by diseases but carry no labs or medications.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

MAX_LINES = 3


class StructureError(ValueError):
    """Structural validation failure (cycles, bad counts, bad values)."""


class EmptyStructureError(StructureError):
    pass


class UnknownReferenceError(StructureError):
    """An id refers to a disease or lab that is not declared."""


@dataclass(frozen=True)
class MedLine:
    # Population-level effect on severity per window, indexed by windows
    # elapsed since the line started. Zero past the end of the schedule.
    effect: tuple[float, ...]


@dataclass(frozen=True)
class DiseaseSpec:
    id: str
    parents: tuple[str, ...] = ()
    parent_weights: tuple[float, ...] = ()
    persistence: float = 1.0
    drift: float = 0.0
    noise_std: float = 0.0
    init_low: float = 0.0
    init_high: float = 1.0
    init_parent_weights: tuple[float, ...] = ()
    lines: tuple[MedLine, ...] = ()
    diagnostic_lab: str = ""
    threshold: float = 0.0


@dataclass(frozen=True)
class LabSpec:
    id: str
    baseline: float
    weights: dict[str, float]
    noise_std: float = 0.0
    units: str = ""


@dataclass(frozen=True)
class OutcomeSpec:
    id: str
    parents: tuple[str, ...]
    weights: tuple[float, ...]
    threshold: float
    onset_window: int | None = None


@dataclass(frozen=True)
class CausalStructure:
    diseases: tuple[DiseaseSpec, ...]
    labs: tuple[LabSpec, ...]
    outcomes: tuple[OutcomeSpec, ...]
    n_windows: int = 60
    window_length_years: float = 0.5
    individual_effect_sigma: float = 0.25
    # share of log E^I variance common to all of a patient's lines (a responder trait)
    individual_effect_correlation: float = 0.0
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        _validate(self)
        object.__setattr__(self, "_arrays", _compile(self))

    # index helpers -------------------------------------------------------
    @property
    def disease_ids(self) -> list[str]:
        return [d.id for d in self.diseases]

    @property
    def lab_ids(self) -> list[str]:
        return [l.id for l in self.labs]

    @property
    def outcome_ids(self) -> list[str]:
        return [o.id for o in self.outcomes]

    @property
    def dx_codes(self) -> list[str]:
        return self.disease_ids + self.outcome_ids

    @property
    def n_digits(self) -> int:
        return sum(len(d.lines) for d in self.diseases)

    @property
    def digit_names(self) -> list[str]:
        return [f"{d.id}:line{k + 1}" for d in self.diseases for k in range(len(d.lines))]

    @property
    def digit_disease(self) -> np.ndarray:
        """Disease index owning each treatment digit."""
        return np.array([i for i, d in enumerate(self.diseases) for _ in d.lines], dtype=np.int64)

    @property
    def digit_offsets(self) -> np.ndarray:
        return self.arrays["digit_offset"]

    @property
    def arrays(self) -> dict:
        return self._arrays

    def onset(self, outcome: OutcomeSpec) -> int:
        if outcome.onset_window is None:
            return self.n_windows // 2
        return outcome.onset_window

    def labs_for_diseases(self, disease_idx) -> np.ndarray:
        """Lab indices with a nonzero weight on any of the given diseases."""
        w = self.arrays["lab_weight"]
        idx = np.asarray(list(disease_idx), dtype=np.int64)
        if idx.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(np.any(w[:, idx] != 0.0, axis=1))

    def ancestors(self, disease_idx: int) -> set[int]:
        pos = {d.id: i for i, d in enumerate(self.diseases)}
        seen: set[int] = set()
        stack = [disease_idx]
        while stack:
            i = stack.pop()
            for p in self.diseases[i].parents:
                j = pos[p]
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return seen

    def outcome_relevant_labs(self) -> np.ndarray:
        """Labs reading any disease that is a cause (direct or indirect) of an outcome."""
        pos = {d.id: i for i, d in enumerate(self.diseases)}
        causes: set[int] = set()
        for o in self.outcomes:
            for p in o.parents:
                causes.add(pos[p])
                causes |= self.ancestors(pos[p])
        return self.labs_for_diseases(sorted(causes))

    def to_dict(self) -> dict:
        return {
            "n_windows": self.n_windows,
            "window_length_years": self.window_length_years,
            "individual_effect_sigma": self.individual_effect_sigma,
            "individual_effect_correlation": self.individual_effect_correlation,
            "diseases": [
                {
                    "id": d.id,
                    "parents": list(d.parents),
                    "parent_weights": list(d.parent_weights),
                    "persistence": d.persistence,
                    "drift": d.drift,
                    "noise_std": d.noise_std,
                    "init_low": d.init_low,
                    "init_high": d.init_high,
                    "init_parent_weights": list(d.init_parent_weights),
                    "lines": [{"effect": list(m.effect)} for m in d.lines],
                    "diagnostic_lab": d.diagnostic_lab,
                    "threshold": d.threshold,
                }
                for d in self.diseases
            ],
            "labs": [asdict(l) for l in self.labs],
            "outcomes": [
                {
                    "id": o.id,
                    "parents": list(o.parents),
                    "weights": list(o.weights),
                    "threshold": o.threshold,
                    "onset_window": o.onset_window,
                }
                for o in self.outcomes
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _topological_order(diseases) -> list[int]:
    pos = {d.id: i for i, d in enumerate(diseases)}
    state = [0] * len(diseases)  # 0 new, 1 on stack, 2 done
    order: list[int] = []

    def visit(i, path):
        if state[i] == 2:
            return
        if state[i] == 1:
            cycle = " -> ".join(diseases[j].id for j in path + [i])
            raise StructureError(f"cyclic disease parents: {cycle}")
        state[i] = 1
        for p in diseases[i].parents:
            visit(pos[p], path + [i])
        state[i] = 2
        order.append(i)

    for i in range(len(diseases)):
        visit(i, [])
    return order


def _validate(s: CausalStructure) -> None:
    if len(s.diseases) == 0:
        raise EmptyStructureError("structure declares no diseases")
    if s.n_windows < 1:
        raise StructureError("n_windows must be >= 1")
    if s.individual_effect_sigma < 0:
        raise StructureError("individual_effect_sigma must be >= 0")
    if not 0.0 <= s.individual_effect_correlation <= 1.0:
        raise StructureError("individual_effect_correlation must be in [0, 1]")
    ids = [d.id for d in s.diseases]
    if len(set(ids)) != len(ids):
        raise StructureError("duplicate disease ids")
    lab_ids = [l.id for l in s.labs]
    if len(set(lab_ids)) != len(lab_ids):
        raise StructureError("duplicate lab ids")
    out_ids = [o.id for o in s.outcomes]
    if len(set(out_ids)) != len(out_ids) or set(out_ids) & set(ids):
        raise StructureError("outcome ids must be unique and distinct from disease ids")
    known = set(ids)
    for d in s.diseases:
        for p in d.parents:
            if p not in known:
                raise UnknownReferenceError(f"disease {d.id!r} has unknown parent {p!r}")
        if d.id in d.parents:
            raise StructureError(f"cyclic disease parents: {d.id} -> {d.id}")
        if len(d.parent_weights) != len(d.parents):
            raise StructureError(f"disease {d.id!r}: parent_weights length != parents length")
        if d.init_parent_weights and len(d.init_parent_weights) != len(d.parents):
            raise StructureError(f"disease {d.id!r}: init_parent_weights length != parents length")
        if not 1 <= len(d.lines) <= MAX_LINES:
            raise StructureError(f"disease {d.id!r} must have 1..{MAX_LINES} medication lines")
        if d.init_high < d.init_low:
            raise StructureError(f"disease {d.id!r}: init_high < init_low")
        if d.noise_std < 0:
            raise StructureError(f"disease {d.id!r}: negative noise_std")
        if d.diagnostic_lab not in lab_ids:
            raise UnknownReferenceError(f"disease {d.id!r} has unknown diagnostic lab {d.diagnostic_lab!r}")
    _topological_order(s.diseases)
    if len(s.labs) == 0:
        raise EmptyStructureError("structure declares no labs")
    for l in s.labs:
        if not l.weights:
            raise StructureError(f"lab {l.id!r} maps to no disease")
        for did in l.weights:
            if did not in known:
                raise UnknownReferenceError(f"lab {l.id!r} references unknown disease {did!r}")
        if l.noise_std < 0:
            raise StructureError(f"lab {l.id!r}: negative noise_std")
    labs = {l.id: l for l in s.labs}
    for d in s.diseases:
        if labs[d.diagnostic_lab].weights.get(d.id, 0.0) == 0.0:
            raise StructureError(f"diagnostic lab of {d.id!r} does not read its severity")
    for o in s.outcomes:
        if not o.parents:
            raise StructureError(f"outcome {o.id!r} has no parent disease")
        if len(o.weights) != len(o.parents):
            raise StructureError(f"outcome {o.id!r}: weights length != parents length")
        for p in o.parents:
            if p not in known:
                raise UnknownReferenceError(f"outcome {o.id!r} has unknown parent {p!r}")


def _compile(s: CausalStructure) -> dict:
    """Dense arrays consumed by the simulation kernels.

    Diseases keep their declared order; the kernels walk ``topo`` whenever
    a child must see its parents' values from the same window.
    """
    D, L, Y = len(s.diseases), len(s.labs), len(s.outcomes)
    pos = {d.id: i for i, d in enumerate(s.diseases)}
    lab_pos = {l.id: i for i, l in enumerate(s.labs)}
    sched_len = max(max(len(m.effect) for m in d.lines) for d in s.diseases)
    sched_len = max(sched_len, 1)

    parent_w = np.zeros((D, D))
    init_parent_w = np.zeros((D, D))
    effect = np.zeros((D, MAX_LINES, sched_len))
    n_lines = np.zeros(D, dtype=np.int64)
    digit_offset = np.zeros(D, dtype=np.int64)
    off = 0
    for i, d in enumerate(s.diseases):
        for p, w in zip(d.parents, d.parent_weights):
            parent_w[i, pos[p]] += w
        for p, w in zip(d.parents, d.init_parent_weights or (0.0,) * len(d.parents)):
            init_parent_w[i, pos[p]] += w
        n_lines[i] = len(d.lines)
        digit_offset[i] = off
        off += len(d.lines)
        for k, m in enumerate(d.lines):
            effect[i, k, : len(m.effect)] = m.effect

    lab_weight = np.zeros((L, D))
    for j, l in enumerate(s.labs):
        for did, w in l.weights.items():
            lab_weight[j, pos[did]] = w

    out_w = np.zeros((max(Y, 0), D))
    for y, o in enumerate(s.outcomes):
        for p, w in zip(o.parents, o.weights):
            out_w[y, pos[p]] += w

    arrays = {
        "topo": np.array(_topological_order(s.diseases), dtype=np.int64),
        "persistence": np.array([d.persistence for d in s.diseases], dtype=np.float64),
        "drift": np.array([d.drift for d in s.diseases], dtype=np.float64),
        "noise_std": np.array([d.noise_std for d in s.diseases], dtype=np.float64),
        "init_low": np.array([d.init_low for d in s.diseases], dtype=np.float64),
        "init_high": np.array([d.init_high for d in s.diseases], dtype=np.float64),
        "parent_w": parent_w,
        "init_parent_w": init_parent_w,
        "effect": effect,
        "n_lines": n_lines,
        "digit_offset": digit_offset,
        "diag_lab": np.array([lab_pos[d.diagnostic_lab] for d in s.diseases], dtype=np.int64),
        "threshold": np.array([d.threshold for d in s.diseases], dtype=np.float64),
        "lab_baseline": np.array([l.baseline for l in s.labs], dtype=np.float64),
        "lab_weight": lab_weight,
        "lab_noise": np.array([l.noise_std for l in s.labs], dtype=np.float64),
        "out_w": out_w,
        "out_threshold": np.array([o.threshold for o in s.outcomes], dtype=np.float64),
        "out_onset": np.array([s.onset(o) for o in s.outcomes], dtype=np.int64),
    }
    for a in arrays.values():
        a.setflags(write=False)
    return arrays


def structure_from_dict(doc: dict) -> CausalStructure:
    try:
        diseases = tuple(
            DiseaseSpec(
                id=str(d["id"]),
                parents=tuple(d.get("parents", ())),
                parent_weights=tuple(float(w) for w in d.get("parent_weights", ())),
                persistence=float(d.get("persistence", 1.0)),
                drift=float(d.get("drift", 0.0)),
                noise_std=float(d.get("noise_std", 0.0)),
                init_low=float(d.get("init_low", 0.0)),
                init_high=float(d.get("init_high", 1.0)),
                init_parent_weights=tuple(float(w) for w in d.get("init_parent_weights", ())),
                lines=tuple(MedLine(tuple(float(e) for e in m["effect"])) for m in d.get("lines", ())),
                diagnostic_lab=str(d["diagnostic_lab"]),
                threshold=float(d["threshold"]),
            )
            for d in doc.get("diseases", ())
        )
        labs = tuple(
            LabSpec(
                id=str(l["id"]),
                baseline=float(l["baseline"]),
                weights={str(k): float(v) for k, v in l["weights"].items()},
                noise_std=float(l.get("noise_std", 0.0)),
                units=str(l.get("units", "")),
            )
            for l in doc.get("labs", ())
        )
        outcomes = tuple(
            OutcomeSpec(
                id=str(o["id"]),
                parents=tuple(o["parents"]),
                weights=tuple(float(w) for w in o.get("weights", [1.0] * len(o["parents"]))),
                threshold=float(o["threshold"]),
                onset_window=None if o.get("onset_window") is None else int(o["onset_window"]),
            )
            for o in doc.get("outcomes", ())
        )
    except (KeyError, TypeError) as exc:
        raise StructureError(f"malformed structure document: {exc!r}") from exc
    return CausalStructure(
        diseases=diseases,
        labs=labs,
        outcomes=outcomes,
        n_windows=int(doc.get("n_windows", 60)),
        window_length_years=float(doc.get("window_length_years", 0.5)),
        individual_effect_sigma=float(doc.get("individual_effect_sigma", 0.25)),
        individual_effect_correlation=float(doc.get("individual_effect_correlation", 0.0)),
    )


def load_structure(path) -> CausalStructure:
    from .schema import validate_document

    doc = json.loads(Path(path).read_text())
    validate_document(doc)
    return structure_from_dict(doc)
