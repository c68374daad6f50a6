from .config import (
    LINEAR,
    METHODS,
    MODELS,
    ConfigError,
    DeltaOptions,
    ExperimentConfig,
    GridSpec,
    grid_from_dict,
    load_grid,
)
from .dataset import RunData, assemble_dataset, impute, input_windows, prepare_run, split_patients
from .experiment import (
    AllRunsInvalidError,
    CellFit,
    INVALID_RUN_ERRORS,
    GridResult,
    ResultRow,
    RunOutcome,
    fit_cell,
    run_experiment,
    run_grid,
    run_unit,
)
from .metrics import UndefinedMetricError, compute_auc, compute_mse
from .report import pvalue_summary, write_pvalues, write_results, write_series
