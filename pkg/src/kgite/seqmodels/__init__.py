from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import AlignmentError, SequenceSample, align_deltas, augment, flatten_windows
from .linear import (
    DEFAULT_GLM_RIDGE,
    LinearModel,
    MixedModel,
    fit_glm,
    fit_lm,
    fit_random_intercept,
    wald_pvalues,
)
from .rnn import (
    NumericError,
    RecurrentParams,
    ShapeError,
    clip_gradients,
    init_params,
    rnn_backward,
    rnn_forward,
)
from .train import RecurrentModel, Standardizer, TrainConfig, finetune, fit_scratch, pretrain

__all__ = [
    "AlignmentError", "CheckpointError", "DEFAULT_GLM_RIDGE", "LinearModel", "MixedModel", "NumericError",
    "RecurrentModel", "RecurrentParams", "SequenceSample", "ShapeError", "Standardizer", "TrainConfig",
    "align_deltas", "augment", "clip_gradients", "finetune", "fit_glm", "fit_lm", "fit_random_intercept",
    "fit_scratch", "flatten_windows", "init_params", "load_checkpoint", "pretrain", "rnn_backward",
    "rnn_forward", "save_checkpoint", "wald_pvalues",
]
