"""Training, scoring and the experiment grid.

Work is cut into units of ``(model, method, time step, run)``; a unit
trains one model per outcome and, for pretraining, shares one pretrained
network across its outcomes (pretraining never reads labels). Units are
pure functions of the cohort, the prepared run data and the config, so
results do not depend on how many worker processes run them.
"""
from __future__ import annotations

import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..logistic import DataError, DegenerateFitError
from ..seqmodels.data import align_deltas, augment, flatten_windows
from ..seqmodels.linear import fit_glm, fit_lm, fit_random_intercept, wald_pvalues
from ..seqmodels.train import finetune, fit_scratch, pretrain
from .config import LINEAR, ConfigError, ExperimentConfig, GridSpec
from .dataset import RunData, assemble_dataset, input_windows, prepare_run
from .metrics import UndefinedMetricError, compute_auc, compute_mse

log = logging.getLogger(__name__)


class AllRunsInvalidError(RuntimeError):
    pass


@dataclass
class RunOutcome:
    outcome: str
    model: str
    method: str
    time_step: int
    run: int
    value: float | None
    reason: str = ""
    delta_pvalues: np.ndarray | None = None
    n_train: int = 0
    n_test: int = 0
    test_prevalence: float = float("nan")


@dataclass
class ResultRow:
    config: ExperimentConfig
    metric_name: str
    values: list                      # per run; None marks an invalid run
    reasons: list = field(default_factory=list)
    delta_pvalues: list = field(default_factory=list)

    @property
    def valid(self):
        return [v for v in self.values if v is not None]

    @property
    def mean(self):
        v = self.valid
        return float(np.mean(v)) if v else float("nan")


@dataclass
class GridResult:
    spec: GridSpec
    rows: list
    failures: list = field(default_factory=list)   # (cell key, message)

    def pvalues_by(self):
        """Δ p-values of linear augmented fits keyed by ``(model, time_step)``."""
        out = {}
        for r in self.rows:
            for p in r.delta_pvalues:
                out.setdefault((r.config.model, r.config.time_step), []).append(p)
        return {k: np.concatenate(v) if v else np.zeros(0) for k, v in out.items()}


def cell_key(cfg: ExperimentConfig):
    return (cfg.outcome, cfg.model, cfg.method, cfg.time_step)


# --------------------------------------------------------------------------
# one unit
# --------------------------------------------------------------------------


def _features(sample, method):
    if method == "augment":
        return augment(sample.inputs, sample.delta_targets, sample.unmatched)
    return sample.inputs


def _delta_columns(sample, method):
    """Δ columns of the flattened augmented design (flag columns excluded)."""
    if method != "augment":
        return np.zeros(0, dtype=np.int64)
    K, d = sample.inputs.shape[1], sample.inputs.shape[2]
    L = sample.delta_targets.shape[2]
    width = d + L + 1
    return np.array([w * width + d + j for w in range(K) for j in range(L)], dtype=np.int64)


def _score(cfg, y_true, scores):
    if cfg.task == "dx":
        return compute_auc(scores, y_true)
    return compute_mse(scores, y_true)


def _split_sample(sample, cohort, run: RunData):
    pos = {p: i for i, p in enumerate(cohort.patient_ids)}
    member = np.array([pos[p] for p in sample.patient_ids], dtype=np.int64)
    is_train = np.isin(member, run.train)
    return sample.subset(np.flatnonzero(is_train)), sample.subset(np.flatnonzero(~is_train))


def _fit_linear(cfg, tr):
    X = flatten_windows(_features(tr, cfg.method))
    if cfg.task == "dx":
        if cfg.model == "glm":
            return fit_glm(X, tr.labels, ridge=cfg.glm_ridge)
        return fit_random_intercept(X, tr.labels, tr.patient_ids, "binomial", ridge=cfg.glm_ridge, max_outer=cfg.glmer_max_outer)
    if cfg.model == "glmer":
        return fit_random_intercept(X, tr.labels, tr.patient_ids, "gaussian", ridge=cfg.glm_ridge, max_outer=cfg.glmer_max_outer)
    return fit_lm(X, tr.labels, ridge=cfg.glm_ridge)


def _delta_pvalues(cfg, model, tr):
    cols = _delta_columns(tr, cfg.method)
    if not cols.size:
        return None
    X = flatten_windows(_features(tr, cfg.method))
    live = cols[np.std(X[:, cols], axis=0) > 0]
    return wald_pvalues(model, live)


def _loss(cfg):
    return "bce" if cfg.task == "dx" else "mse"


@dataclass
class CellFit:
    model: object
    train: object                 # SequenceSample
    test: object
    scores: np.ndarray
    value: float
    delta_pvalues: np.ndarray | None
    pretrained: object = None


def fit_cell(cohort, run: RunData, cfg: ExperimentConfig, pretrained=None) -> CellFit:
    """Train ``cfg`` on the run's training patients and score its test patients.

    ``pretrained`` reuses a network from an earlier call with the same run,
    model and time step. Raises the metric/fit errors that make a run invalid.
    """
    tcfg = replace(cfg.train, seed=run.seed)
    sample = assemble_dataset(cohort, run.deltas, cfg, features=run.features)
    tr, te = _split_sample(sample, cohort, run)
    if len(tr) == 0 or len(te) == 0:
        raise UndefinedMetricError("empty training or test set")
    if cfg.task == "dx" and te.labels.min() == te.labels.max():
        raise UndefinedMetricError("test labels contain a single class")
    pv = None
    if cfg.model in LINEAR:
        model = _fit_linear(cfg, tr)
        pv = _delta_pvalues(cfg, model, tr)
    elif cfg.method == "pretrain":
        if pretrained is None:
            pretrained = _pretrain_unit(cohort, run, cfg, tcfg)
        model = finetune(pretrained, tr.inputs, tr.labels, tcfg, _loss(cfg))
    else:
        model = fit_scratch(_features(tr, cfg.method), tr.labels, cfg.model, tcfg, _loss(cfg))
    scores = model.predict(flatten_windows(_features(te, cfg.method)) if cfg.model in LINEAR else _features(te, cfg.method))
    return CellFit(model, tr, te, scores, float(_score(cfg, te.labels, scores)), pv, pretrained)


INVALID_RUN_ERRORS = (UndefinedMetricError, DegenerateFitError, DataError, ArithmeticError, np.linalg.LinAlgError)


def run_unit(cohort, run: RunData, cfgs: list[ExperimentConfig]) -> list[RunOutcome]:
    """Train and score every config of one ``(model, method, K, run)`` unit."""
    pre = None
    out = []
    for cfg in cfgs:
        res = RunOutcome(cfg.outcome, cfg.model, cfg.method, cfg.time_step, run.run, None)
        try:
            fit = fit_cell(cohort, run, cfg, pre)
            pre = fit.pretrained
            res.value, res.delta_pvalues = fit.value, fit.delta_pvalues
            res.n_train, res.n_test = len(fit.train), len(fit.test)
            if cfg.task == "dx":
                res.test_prevalence = float(fit.test.labels.mean())
        except INVALID_RUN_ERRORS as exc:
            res.reason = f"{type(exc).__name__}: {exc}"
            log.warning("%s run %d invalid: %s", cell_key(cfg), run.run, exc)
        out.append(res)
    return out


def _pretrain_unit(cohort, run: RunData, cfg, tcfg):
    """Pretrain on every training-split patient, labelled or not."""
    if run.deltas is None:
        raise ConfigError("pretraining needs Δ sequences")
    windows = input_windows(cohort.n_windows, cfg.time_step, cfg.horizon)
    ids = [cohort.patient_ids[i] for i in run.train]
    x = run.features[run.train][:, windows]
    targets, _ = align_deltas(ids, windows, run.deltas.patient_ids, run.deltas.delta, run.deltas.unmatched)
    return pretrain(x, targets, cfg.model, tcfg)


# --------------------------------------------------------------------------
# experiments and grids
# --------------------------------------------------------------------------


def _collect(cfgs, outcomes: list[RunOutcome]):
    by = {cell_key(c): ResultRow(c, c.metric_name, [None] * c.runs, [""] * c.runs) for c in cfgs}
    for o in outcomes:
        row = by[(o.outcome, o.model, o.method, o.time_step)]
        row.values[o.run] = o.value
        row.reasons[o.run] = o.reason
        if o.delta_pvalues is not None and o.value is not None:
            row.delta_pvalues.append(o.delta_pvalues)
    return [by[cell_key(c)] for c in cfgs]


def run_experiment(config: ExperimentConfig, cohort, deltas=None) -> ResultRow:
    runs = [
        prepare_run(cohort, r, config.base_seed, config.train_fraction, deltas, config.uses_delta, config.delta)
        for r in range(config.runs)
    ]
    outcomes = [o for rd in runs for o in run_unit(cohort, rd, [config])]
    row = _collect([config], outcomes)[0]
    if not row.valid:
        raise AllRunsInvalidError(f"all {config.runs} runs invalid for {cell_key(config)}: {row.reasons}")
    return row


_STATE = {}


def _unit_worker(args):
    cfg_idx, run_idx = args
    cohort, runs, cfgs = _STATE["cohort"], _STATE["runs"], _STATE["cfgs"]
    return run_unit(cohort, runs[run_idx], [cfgs[i] for i in cfg_idx])


def _units(cfgs, n_runs):
    groups = {}
    for i, c in enumerate(cfgs):
        groups.setdefault((c.model, c.method, c.time_step), []).append(i)
    return [(tuple(idx), r) for idx in groups.values() for r in range(n_runs)]


def run_grid(spec: GridSpec, cohort, deltas=None, workers: int | None = None) -> GridResult:
    """Every cell of ``spec`` over ``spec.runs`` patient splits.

    Cells whose runs are all invalid are listed in ``failures``; the grid
    goes on.
    """
    outcome_ids = [c for c in cohort.dx_codes if cohort.structure is None or c in cohort.structure.outcome_ids]
    if spec.task == "lab" and spec.outcomes == "auto":
        outcome_ids = list(cohort.lab_ids)
    cfgs = spec.cells(outcome_ids)
    if not cfgs:
        return GridResult(spec, [], [])
    for c in cfgs:
        input_windows(cohort.n_windows, c.time_step, c.horizon)
    need_delta = any(c.uses_delta for c in cfgs)
    runs = [
        prepare_run(cohort, r, spec.base_seed, spec.train_fraction, deltas, need_delta, spec.delta)
        for r in range(spec.runs)
    ]
    units = _units(cfgs, spec.runs)
    workers = spec.workers if workers is None else workers
    _STATE.update(cohort=cohort, runs=runs, cfgs=cfgs)
    try:
        if workers <= 1 or len(units) == 1:
            parts = [_unit_worker(u) for u in units]
        else:
            with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as pool:
                parts = list(pool.map(_unit_worker, units))
    finally:
        _STATE.clear()
    rows = _collect(cfgs, [o for part in parts for o in part])
    failures = [(cell_key(r.config), "; ".join(x for x in r.reasons if x)) for r in rows if not r.valid]
    return GridResult(spec, rows, failures)
