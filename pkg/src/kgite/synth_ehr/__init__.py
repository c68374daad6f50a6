from .structure import (
    CausalStructure,
    DiseaseSpec,
    EmptyStructureError,
    LabSpec,
    MedLine,
    OutcomeSpec,
    StructureError,
    UnknownReferenceError,
    load_structure,
    structure_from_dict,
)
from .generate import build_structure, example_structure, random_structure
from .simulate import (
    Cohort,
    PatientTrajectory,
    SimulationConfig,
    init_patient,
    patient_rng,
    prescribe,
    simulate_cohort,
    step_patient,
)
from .io import COHORT_SCHEMA, CohortFormatError, read_cohort, write_cohort
