"""Experiment and grid configuration.

A grid file is JSON; every key is optional::

    {"outcomes": "auto" | ["Y1", ...], "models": ["glm", "glmer", "lstm", "gru"],
     "methods": ["none", "augment", "pretrain"], "time_steps": [10, 20, 30],
     "horizon": 5, "runs": 3, "base_seed": 0, "train_fraction": 0.8,
     "task": "dx", "glm_ridge": 1.0, "glmer_max_outer": 25, "workers": 1,
     "rnn_augment": false,
     "train": {"hidden_dim": 32, "learning_rate": 0.01, ...},
     "delta": {"caliper": null, "caliper_factor": 0.2, "min_group_size": 5,
               "relevant_labs": "auto", "propensity_ridge": 1.0}}
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..seqmodels.linear import DEFAULT_GLM_RIDGE
from ..seqmodels.train import TrainConfig

MODELS = ("glm", "glmer", "lstm", "gru")
METHODS = ("none", "augment", "pretrain")
LINEAR = ("glm", "glmer")
TASKS = ("dx", "lab")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DeltaOptions:
    caliper: float | None = None
    caliper_factor: float = 0.2
    min_group_size: int = 5
    relevant_labs: object = "auto"
    propensity_ridge: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    outcome: str
    model: str
    method: str
    time_step: int
    horizon: int = 5
    task: str = "dx"
    runs: int = 3
    train_fraction: float = 0.8
    base_seed: int = 0
    glm_ridge: float = DEFAULT_GLM_RIDGE
    glmer_max_outer: int = 25
    train: TrainConfig = field(default_factory=TrainConfig)
    delta: DeltaOptions = field(default_factory=DeltaOptions)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.model in LINEAR and self.method == "pretrain":
            raise ConfigError("pretraining applies to recurrent models only")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.time_step < 1 or self.horizon < 1 or self.runs < 1:
            raise ConfigError("time_step, horizon and runs must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")

    @property
    def metric_name(self):
        return "AUC" if self.task == "dx" else "MSE"

    @property
    def uses_delta(self):
        return self.method != "none"


@dataclass(frozen=True)
class GridSpec:
    outcomes: object = "auto"
    models: tuple = MODELS
    methods: tuple = ("none", "augment", "pretrain")
    time_steps: tuple = (10, 20, 30)
    horizon: int = 5
    runs: int = 3
    base_seed: int = 0
    train_fraction: float = 0.8
    task: str = "dx"
    glm_ridge: float = DEFAULT_GLM_RIDGE
    glmer_max_outer: int = 25
    workers: int = 1
    rnn_augment: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    delta: DeltaOptions = field(default_factory=DeltaOptions)

    def cells(self, outcome_ids) -> list[ExperimentConfig]:
        """Grid cells in a fixed order.

        Pretraining cells of linear models are skipped; recurrent models get
        augmentation cells only with ``rnn_augment``.
        """
        outcomes = list(outcome_ids) if self.outcomes == "auto" else list(self.outcomes)
        out = []
        for o, m, meth, k in itertools.product(outcomes, self.models, self.methods, self.time_steps):
            if m in LINEAR and meth == "pretrain":
                continue
            if m not in LINEAR and meth == "augment" and not self.rnn_augment:
                continue
            out.append(ExperimentConfig(
                outcome=o, model=m, method=meth, time_step=int(k), horizon=self.horizon, task=self.task,
                runs=self.runs, train_fraction=self.train_fraction, base_seed=self.base_seed,
                glm_ridge=self.glm_ridge, glmer_max_outer=self.glmer_max_outer, train=self.train, delta=self.delta,
            ))
        return out

    def to_dict(self):
        d = asdict(self)
        d["models"], d["methods"], d["time_steps"] = list(self.models), list(self.methods), list(self.time_steps)
        return d


def _known(cls, doc, where):
    names = {f.name for f in fields(cls)}
    extra = sorted(set(doc) - names)
    if extra:
        raise ConfigError(f"unknown {where} keys: {extra}")


def grid_from_dict(doc) -> GridSpec:
    if not isinstance(doc, dict):
        raise ConfigError("grid spec must be a JSON object")
    _known(GridSpec, doc, "grid")
    kw = dict(doc)
    try:
        if "train" in kw:
            _known(TrainConfig, kw["train"], "train")
            kw["train"] = TrainConfig(**kw["train"])
        if "delta" in kw:
            _known(DeltaOptions, kw["delta"], "delta")
            kw["delta"] = DeltaOptions(**kw["delta"])
        for k in ("models", "methods", "time_steps"):
            if k in kw:
                if not isinstance(kw[k], list):
                    raise ConfigError(f"{k} must be a list")
                kw[k] = tuple(kw[k])
        if "outcomes" in kw and kw["outcomes"] != "auto" and not isinstance(kw["outcomes"], list):
            raise ConfigError("outcomes must be \"auto\" or a list")
        spec = GridSpec(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    for m in spec.models:
        if m not in MODELS:
            raise ConfigError(f"unknown model {m!r}")
    for m in spec.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if spec.workers < 1:
        raise ConfigError("workers must be >= 1")
    if spec.task not in TASKS:
        raise ConfigError(f"unknown task {spec.task!r}")
    return spec


def load_grid(path) -> GridSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return grid_from_dict(doc)


def with_overrides(spec: GridSpec, **kw) -> GridSpec:
    return replace(spec, **kw)
