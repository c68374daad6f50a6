"""Mini-batch training for the recurrent models.

Randomness comes from independent streams of ``TrainConfig.seed``: one for
the recurrent block, one per head, one for the validation split and one for
batch order. Training from scratch and fine-tuning a pretrained network
therefore see the same task-head initialisation and the same batches; only
the recurrent weights they start from differ.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..logistic import expit
from .rnn import (
    PRETRAIN_HEAD,
    RECURRENT,
    TASK_HEAD,
    RecurrentParams,
    init_pretrain_head,
    init_recurrent,
    init_task_head,
    loss_and_output_grad,
    rnn_backward,
    rnn_forward,
)

log = logging.getLogger(__name__)

_STREAMS = {"recurrent": 0, "pretrain_head": 1, "task_head": 2, "split": 3, "batches": 4}


@dataclass(frozen=True)
class TrainConfig:
    hidden_dim: int = 32
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    seed: int = 0
    patience: int = 10
    momentum: float = 0.9
    val_fraction: float = 0.1
    freeze_recurrent: bool = False

    def __post_init__(self):
        if self.hidden_dim < 1 or self.batch_size < 1:
            raise ValueError("hidden_dim and batch_size must be >= 1")
        if not self.learning_rate > 0 or self.epochs < 0 or self.patience < 1:
            raise ValueError("learning_rate must be > 0, epochs >= 0, patience >= 1")
        if self.weight_decay < 0 or not self.clip_norm > 0:
            raise ValueError("weight_decay must be >= 0 and clip_norm > 0")
        if not 0 <= self.momentum < 1 or not 0 <= self.val_fraction < 1:
            raise ValueError("momentum and val_fraction must be in [0, 1)")

    def to_dict(self):
        return asdict(self)


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[name]]))


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        flat = np.asarray(x, dtype=np.float64).reshape(-1, x.shape[-1])
        mean = flat.mean(axis=0)
        scale = flat.std(axis=0)
        return cls(mean, np.where(scale > 1e-12, scale, 1.0))

    def __call__(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


@dataclass
class RecurrentModel:
    params: RecurrentParams
    standardizer: Standardizer
    task_loss: str | None = None
    history: dict = field(default_factory=dict)
    provenance: str = "scratch"

    def forward(self, x):
        return rnn_forward(self.params, self.standardizer(x))

    def predict(self, x):
        """Task-head probability (cross-entropy models) or value (MSE models)."""
        out = self.forward(x).output
        return expit(out) if self.task_loss == "bce" else out

    def predict_delta(self, x):
        return self.forward(x).delta_hat


def _split(n: int, cfg: TrainConfig):
    idx = np.arange(n)
    n_val = int(round(cfg.val_fraction * n))
    if n_val == 0 or n - n_val < 1:
        return idx, idx[:0]
    perm = stream(cfg.seed, "split").permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _loss_only(params, x, target, head, loss):
    if len(x) == 0:
        return float("nan")
    return loss_and_output_grad(rnn_forward(params, x), target, head, loss)[0]


def _fit(params: RecurrentParams, x, target, head: str, loss: str, cfg: TrainConfig, trainable):
    """Momentum SGD with global-norm clipping and early stopping; returns the best iterate."""
    tr, va = _split(len(x), cfg)
    rng = stream(cfg.seed, "batches")
    vel = {k: np.zeros_like(params.tensors[k]) for k in trainable}
    best = params.copy()
    best_val = _loss_only(params, x[va], target[va], head, loss) if len(va) else float("inf")
    history = {"train": [], "val": [], "best_epoch": 0}
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = tr[rng.permutation(len(tr))]
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            fwd = rnn_forward(params, x[b])
            value, grads = rnn_backward(params, fwd, target[b], head, loss, clip=cfg.clip_norm)
            total += value * len(b)
            for k in trainable:
                g = grads[k]
                if cfg.weight_decay and k not in ("b", "bp", "bt"):
                    g = g + cfg.weight_decay * params.tensors[k]
                vel[k] = cfg.momentum * vel[k] - cfg.learning_rate * g
                params.tensors[k] += vel[k]
        history["train"].append(total / max(len(tr), 1))
        if len(va):
            v = _loss_only(params, x[va], target[va], head, loss)
            history["val"].append(v)
            if v < best_val:
                best_val, best, stale = v, params.copy(), 0
                history["best_epoch"] = epoch
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        else:
            best = params.copy()
            history["best_epoch"] = epoch
    history["epochs_run"] = len(history["train"])
    return best, history


def pretrain(x, delta_targets, cell: str, config: TrainConfig = TrainConfig(), params: RecurrentParams | None = None) -> RecurrentModel:
    """Fit the recurrent block and pretrain head to predict Δ at every window.

    Labels are never read. ``x`` is ``[n, K, d]``; ``delta_targets`` is
    ``[n, K, |L|]``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(delta_targets, dtype=np.float64)
    if y.ndim != 3 or y.shape[:2] != x.shape[:2]:
        raise ValueError(f"delta targets {y.shape} do not align with inputs {x.shape}")
    std = Standardizer.fit(x)
    if params is None:
        t = init_recurrent(cell, x.shape[2], config.hidden_dim, stream(config.seed, "recurrent"))
        t.update(init_pretrain_head(config.hidden_dim, y.shape[2], stream(config.seed, "pretrain_head")))
        params = RecurrentParams(cell, x.shape[2], config.hidden_dim, t)
    else:
        params = params.copy()
    trainable = RECURRENT + PRETRAIN_HEAD
    best, history = _fit(params, std(x), y, "pretrain", "mse", config, trainable)
    return RecurrentModel(best, std, None, {"pretrain": history}, "pretrain")


def finetune(pretrained: RecurrentModel, x, y, config: TrainConfig = TrainConfig(), loss: str = "bce") -> RecurrentModel:
    """Drop the pretrain head, attach a fresh task head and train on labels.

    The pretrained model object is left untouched. Inputs are standardised
    with the pretrained model's statistics.
    """
    src = pretrained.params
    if src.hidden_dim != config.hidden_dim:
        raise ValueError(f"pretrained hidden dim {src.hidden_dim} != config hidden dim {config.hidden_dim}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[2] != src.input_dim:
        raise ValueError(f"pretrained input dim {src.input_dim} != data input dim {x.shape[2]}")
    t = {k: src.tensors[k].copy() for k in RECURRENT}
    t.update(init_task_head(config.hidden_dim, stream(config.seed, "task_head")))
    params = RecurrentParams(src.cell, src.input_dim, src.hidden_dim, t)
    trainable = TASK_HEAD if config.freeze_recurrent else RECURRENT + TASK_HEAD
    std = pretrained.standardizer
    best, history = _fit(params, std(x), np.asarray(y, dtype=np.float64), "task", loss, config, trainable)
    hist = dict(pretrained.history)
    hist["task"] = history
    return RecurrentModel(best, std, loss, hist, "finetune")


def fit_scratch(x, y, cell: str, config: TrainConfig = TrainConfig(), loss: str = "bce") -> RecurrentModel:
    """Task model from a fresh initialisation (the no-Δ baseline)."""
    x = np.asarray(x, dtype=np.float64)
    t = init_recurrent(cell, x.shape[2], config.hidden_dim, stream(config.seed, "recurrent"))
    base = RecurrentModel(RecurrentParams(cell, x.shape[2], config.hidden_dim, t), Standardizer.fit(x))
    model = finetune(base, x, y, replace(config, freeze_recurrent=False), loss)
    model.provenance = "scratch"
    return model
