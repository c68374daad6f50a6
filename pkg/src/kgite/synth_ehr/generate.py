"""Structure builders: explicit documents and seeded random generation."""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .structure import (
    CausalStructure,
    DiseaseSpec,
    EmptyStructureError,
    LabSpec,
    MedLine,
    OutcomeSpec,
    StructureError,
    structure_from_dict,
)

SCHEDULE_LENGTH = 16


def _schedule(magnitude: float, decay: float, length: int = SCHEDULE_LENGTH) -> MedLine:
    # effect fades geometrically: the line "gradually fails"
    return MedLine(tuple(-magnitude * decay**k for k in range(length)))


def random_structure(
    n_diseases: int = 10,
    n_labs: int = 20,
    n_outcomes: int = 4,
    edge_density: float = 0.3,
    seed: int = 0,
    n_windows: int = 60,
    n_lines: int = 3,
    individual_effect_sigma: float = 0.5,
    individual_effect_correlation: float = 0.0,
    effect_scale: float = 1.0,
    outcome_prevalence: float = 0.35,
    pilot_patients: int = 400,
    severity_noise: float = 0.03,
    lab_noise_fraction: float = 0.02,
) -> CausalStructure:
    """Random DAG of progressive diseases with labs, lines and late outcomes.

    Diseases are generated in index order and only link to earlier ones, so
    the parent graph is acyclic by construction. Labs ``0..n_diseases-1``
    are the diagnostic labs; the rest read one or two random diseases.
    Outcomes pick 2-3 parent diseases and only appear from the second half
    of the horizon; each outcome threshold is set from a pilot cohort so that
    ``outcome_prevalence`` of patients carry the code six windows before the
    end. ``effect_scale=0`` gives placebo medications.
    """
    if n_diseases <= 0:
        raise EmptyStructureError("n_diseases must be positive")
    if n_labs < n_diseases:
        raise StructureError("need at least one lab per disease")
    if not 0.0 <= edge_density <= 1.0:
        raise StructureError("edge_density must be in [0, 1]")
    if not 1 <= n_lines <= 3:
        raise StructureError("n_lines must be in 1..3")
    rng = np.random.default_rng(seed)

    dids = [f"D{i + 1}" for i in range(n_diseases)]
    lids = [f"L{j + 1}" for j in range(n_labs)]

    lab_weights: list[dict[str, float]] = [dict() for _ in range(n_labs)]
    baselines = rng.uniform(60.0, 140.0, n_labs)
    diag_w = rng.uniform(15.0, 25.0, n_diseases)
    for i in range(n_diseases):
        lab_weights[i][dids[i]] = float(diag_w[i])
    for j in range(n_diseases, n_labs):
        k = 1 + int(rng.random() < 0.4)
        for i in rng.choice(n_diseases, size=min(k, n_diseases), replace=False):
            lab_weights[j][dids[i]] = float(rng.uniform(5.0, 15.0))

    diseases = []
    for i in range(n_diseases):
        cand = np.flatnonzero(rng.random(i) < edge_density)[:3]
        parents = tuple(dids[j] for j in cand)
        crit = float(rng.uniform(1.6, 2.4))  # severity at which the diagnostic lab crosses
        threshold = float(baselines[i] + diag_w[i] * crit)
        lines = tuple(
            _schedule(effect_scale * float(rng.uniform(0.12, 0.2)) * (1.0 + 0.5 * k), float(rng.uniform(0.78, 0.88)))
            for k in range(n_lines)
        )
        diseases.append(
            DiseaseSpec(
                id=dids[i],
                parents=parents,
                parent_weights=tuple(float(w) for w in rng.uniform(0.01, 0.03, len(parents))),
                persistence=float(rng.uniform(1.025, 1.045)),
                drift=float(rng.uniform(0.005, 0.02)),
                noise_std=float(severity_noise),
                init_low=0.0,
                init_high=1.0,
                init_parent_weights=tuple(float(w) for w in rng.uniform(0.2, 0.4, len(parents))),
                lines=lines,
                diagnostic_lab=lids[i],
                threshold=threshold,
            )
        )

    labs = tuple(
        LabSpec(
            id=lids[j],
            baseline=float(baselines[j]),
            weights=lab_weights[j],
            noise_std=float(lab_noise_fraction * (baselines[j] + 2.0 * sum(lab_weights[j].values()))),
            units="u",
        )
        for j in range(n_labs)
    )

    outcomes = []
    for y in range(n_outcomes):
        k = int(rng.integers(2, 4))
        parents = tuple(dids[j] for j in sorted(rng.choice(n_diseases, size=min(k, n_diseases), replace=False)))
        weights = tuple(float(w) for w in rng.uniform(0.5, 1.5, len(parents)))
        outcomes.append(OutcomeSpec(f"Y{y + 1}", parents, weights, float("inf"), n_windows // 2))

    draft = CausalStructure(
        diseases=tuple(diseases),
        labs=labs,
        outcomes=tuple(outcomes),
        n_windows=n_windows,
        window_length_years=0.5,
        individual_effect_sigma=individual_effect_sigma,
        individual_effect_correlation=individual_effect_correlation,
    )
    if not outcomes:
        return draft
    return replace(draft, outcomes=_calibrate_outcomes(draft, seed, outcome_prevalence, pilot_patients))


def _calibrate_outcomes(draft: CausalStructure, seed: int, prevalence: float, n_pilot: int):
    from .simulate import SimulationConfig, simulate_cohort

    pilot = simulate_cohort(SimulationConfig(structure=draft, n_patients=n_pilot, rng_seed=seed + 7919))
    w = draft.arrays["out_w"]
    T = draft.n_windows
    at = max(0, T - 6)
    out = []
    for y, o in enumerate(draft.outcomes):
        onset = draft.onset(o)
        score = pilot.severity[:, onset : at + 1, :] @ w[y]
        peak = score.max(axis=1) if score.shape[1] else np.zeros(n_pilot)
        thr = float(np.quantile(peak, 1.0 - prevalence))
        out.append(replace(o, threshold=round(thr, 6)))
    return tuple(out)


def example_structure(n_windows: int = 60) -> CausalStructure:
    """Two diseases in a chain feeding one outcome: D1 -> D2 -> Y."""
    return CausalStructure(
        diseases=(
            DiseaseSpec(
                id="D1", persistence=1.04, drift=0.01, noise_std=0.02,
                lines=(_schedule(0.25, 0.8), _schedule(0.4, 0.85)),
                diagnostic_lab="L1", threshold=140.0,
            ),
            DiseaseSpec(
                id="D2", parents=("D1",), parent_weights=(0.02,), init_parent_weights=(0.3,),
                persistence=1.03, drift=0.01, noise_std=0.02,
                lines=(_schedule(0.2, 0.8),),
                diagnostic_lab="L2", threshold=130.0,
            ),
        ),
        labs=(
            LabSpec("L1", 100.0, {"D1": 20.0}, 2.0, "mg/dL"),
            LabSpec("L2", 90.0, {"D2": 20.0}, 2.0, "mg/dL"),
        ),
        outcomes=(OutcomeSpec("Y", ("D2",), (1.0,), 2.5, n_windows // 2),),
        n_windows=n_windows,
    )


def build_structure(spec=None, **random_params) -> CausalStructure:
    """Structure from a document (dict or path) or from random-generation params."""
    if spec is None:
        return random_structure(**random_params)
    if isinstance(spec, CausalStructure):
        return spec
    if isinstance(spec, (str, Path)):
        from .schema import validate_document

        doc = json.loads(Path(spec).read_text())
        validate_document(doc)
        return structure_from_dict(doc)
    if isinstance(spec, dict):
        return structure_from_dict(spec)
    raise TypeError(f"unsupported structure spec: {type(spec).__name__}")
