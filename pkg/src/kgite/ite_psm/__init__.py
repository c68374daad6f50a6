from .groups import ComparableGroupPair, TreatmentVector, enumerate_group_pairs, transitions
from .propensity import PropensityModel, fit_propensity
from .matching import CaliperError, MatchedPair, MatchResult, default_caliper, match_groups
from .delta import (
    DeltaRecord,
    DeltaSet,
    HorizonError,
    PairReport,
    build_delta_sequences,
    compute_delta,
    resolve_relevant_labs,
)
from .io import DeltaFormatError, read_deltas, read_match_report, write_deltas, write_match_report
