"""``kgite`` command line.

Subcommands: ``simulate``, ``validate-structure``, ``estimate-ite``,
``train`` and ``report``. Exit codes: 0 success, 2 configuration error,
3 data error, 4 when every run of a cell was invalid.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVALID = 0, 2, 3, 4

log = logging.getLogger("kgite")


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _config_error(msg):
    return _Fail(EXIT_CONFIG, msg)


def _data_error(msg):
    return _Fail(EXIT_DATA, msg)


# --------------------------------------------------------------------------
# loaders with exit-code mapping
# --------------------------------------------------------------------------


def _load_structure(path):
    from .synth_ehr import StructureError, load_structure

    try:
        return load_structure(path)
    except OSError as exc:
        raise _config_error(f"cannot read structure: {exc}")
    except json.JSONDecodeError as exc:
        raise _config_error(f"{path}: not valid JSON ({exc})")
    except (StructureError, ValueError, KeyError, TypeError) as exc:
        raise _config_error(f"{path}: {exc}")


def _load_cohort(path):
    from .synth_ehr import CohortFormatError, read_cohort

    try:
        return read_cohort(path)
    except OSError as exc:
        raise _data_error(f"cannot read cohort: {exc}")
    except CohortFormatError as exc:
        raise _data_error(str(exc))


def _load_deltas(path, cohort):
    from .ite_psm import DeltaFormatError, read_deltas

    if path is None:
        return None
    try:
        ds = read_deltas(path)
    except OSError as exc:
        raise _data_error(f"cannot read Δ file: {exc}")
    except DeltaFormatError as exc:
        raise _data_error(str(exc))
    if list(ds.patient_ids) != list(cohort.patient_ids):
        raise _data_error(f"{path}: patients differ from the cohort's")
    if ds.unmatched.shape[1] != cohort.n_windows:
        raise _data_error(f"{path}: {ds.unmatched.shape[1]} windows, cohort has {cohort.n_windows}")
    return ds


def _load_grid(path):
    from .harness import ConfigError, load_grid

    try:
        return load_grid(path)
    except OSError as exc:
        raise _config_error(f"cannot read grid: {exc}")
    except ConfigError as exc:
        raise _config_error(f"{path}: {exc}")


def _relevant_labs(text):
    if text == "auto":
        return "auto"
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise _config_error(f"--relevant-labs must be 'auto' or comma-separated lab indices, got {text!r}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_validate_structure(args):
    s = _load_structure(args.structure)
    print(f"ok: {len(s.diseases)} diseases, {len(s.labs)} labs, {len(s.outcomes)} outcomes, {s.n_digits} medication digits")
    return EXIT_OK


def cmd_simulate(args):
    from .synth_ehr import SimulationConfig, random_structure, simulate_cohort, write_cohort

    if (args.structure is None) == (args.random_structure is None):
        raise _config_error("give exactly one of --structure and --random-structure")
    if args.structure is not None:
        s = _load_structure(args.structure)
    else:
        try:
            s = random_structure(seed=args.random_structure, n_windows=args.windows or 60)
        except ValueError as exc:
            raise _config_error(str(exc))
    if args.write_structure:
        s.save(args.write_structure)
    try:
        cfg = SimulationConfig(s, n_patients=args.patients, observation_rate=args.obs_rate, rng_seed=args.seed, n_windows=args.windows)
    except ValueError as exc:
        raise _config_error(str(exc))
    withhold = True if args.counterfactual_untreated else None
    cohort = simulate_cohort(cfg, withhold=withhold)
    write_cohort(cohort, args.out, emit_ground_truth=args.emit_ground_truth)
    frac = float(np.mean(cohort.observed_mask)) if len(cohort) else float("nan")
    print(f"wrote {len(cohort)} patients x {cohort.n_windows} windows to {args.out} (observed fraction {frac:.4f})")
    return EXIT_OK


def cmd_estimate_ite(args):
    from .ite_psm import CaliperError, build_delta_sequences, write_deltas, write_match_report
    from .harness import impute

    cohort = _load_cohort(args.cohort)
    labs = _relevant_labs(args.relevant_labs)
    if args.min_group_size < 1:
        raise _config_error("--min-group-size must be >= 1")
    try:
        ds = build_delta_sequences(
            cohort.meds, impute(cohort), cohort.patient_ids, caliper=args.caliper,
            caliper_factor=args.caliper_factor, min_group_size=args.min_group_size, relevant_labs=labs,
            structure=cohort.structure, propensity_ridge=args.propensity_ridge,
        )
    except (CaliperError, IndexError) as exc:
        raise _config_error(str(exc))
    write_deltas(ds, args.out, cohort.lab_ids)
    if args.report:
        write_match_report(ds.report, args.report)
    matched = int((ds.control_patient >= 0).sum())
    print(f"{len(ds.report)} group pairs, {matched} matched transitions, {int(ds.unmatched.sum())} unmatched; wrote {args.out}")
    return EXIT_OK


def _train_config(args):
    from .seqmodels import TrainConfig

    kw = {}
    for name in ("hidden_dim", "learning_rate", "epochs", "batch_size", "weight_decay", "clip_norm", "patience"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    if args.freeze_recurrent:
        kw["freeze_recurrent"] = True
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise _config_error(str(exc))


def cmd_train(args):
    from .harness import INVALID_RUN_ERRORS, ConfigError, DeltaOptions, ExperimentConfig, fit_cell, prepare_run
    from .seqmodels import save_checkpoint

    cohort = _load_cohort(args.cohort)
    outcome = args.outcome
    if outcome is None:
        if args.task == "lab":
            outcome = cohort.lab_ids[0]
        elif cohort.structure is not None and cohort.structure.outcome_ids:
            outcome = cohort.structure.outcome_ids[0]
        else:
            raise _config_error("--outcome is required when the cohort carries no structure")
    try:
        cfg = ExperimentConfig(
            outcome=outcome, model=args.model, method=args.method, time_step=args.time_step, horizon=args.horizon,
            task=args.task, runs=1, train_fraction=args.train_fraction, base_seed=args.seed,
            glm_ridge=args.glm_ridge, train=_train_config(args),
            delta=DeltaOptions(relevant_labs=_relevant_labs(args.relevant_labs)),
        )
        deltas = _load_deltas(args.deltas, cohort)
        run = prepare_run(cohort, 0, cfg.base_seed, cfg.train_fraction, deltas, cfg.uses_delta, cfg.delta)
        fit = fit_cell(cohort, run, cfg)
    except ConfigError as exc:
        raise _config_error(str(exc))
    except INVALID_RUN_ERRORS as exc:
        raise _Fail(EXIT_INVALID, f"run invalid: {type(exc).__name__}: {exc}")
    meta = {"outcome": outcome, "task": cfg.task, "model": cfg.model, "method": cfg.method,
            "time_step": cfg.time_step, "horizon": cfg.horizon, "seed": cfg.base_seed}
    save_checkpoint(fit.model, args.out, metadata=meta)
    metrics = dict(meta, metric_name=cfg.metric_name, value=fit.value, n_train=len(fit.train), n_test=len(fit.test))
    if fit.delta_pvalues is not None:
        p = fit.delta_pvalues
        metrics["delta_pvalue_count"] = int(p.size)
        metrics["delta_pvalue_frac_below_0.05"] = float(np.mean(p < 0.05)) if p.size else None
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(f"{cfg.metric_name} {fit.value:.6f} on {len(fit.test)} test patients; wrote {args.out}")
    return EXIT_OK


def cmd_report(args):
    from .harness import ConfigError, run_grid, write_pvalues, write_results, write_series

    spec = _load_grid(args.grid)
    if args.workers is not None:
        if args.workers < 1:
            raise _config_error("--workers must be >= 1")
        spec = replace(spec, workers=args.workers)
    cohort = _load_cohort(args.cohort)
    deltas = _load_deltas(args.deltas, cohort)
    try:
        res = run_grid(spec, cohort, deltas=deltas)
    except ConfigError as exc:
        raise _config_error(str(exc))
    write_results(res.rows, args.out)
    if args.pvalues:
        write_pvalues(res.pvalues_by(), args.pvalues)
    if args.series:
        write_series(res.rows, args.series)
    print(f"{len(res.rows)} cells written to {args.out}")
    if res.failures:
        for key, msg in res.failures:
            print(f"all runs invalid for {key}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="kgite", description="Simulated cohorts, matched treatment effects and outcome models.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-structure", help="check a structure file against the schema")
    p.add_argument("structure")
    p.set_defaults(func=cmd_validate_structure)

    p = sub.add_parser("simulate", help="simulate a cohort")
    p.add_argument("--structure")
    p.add_argument("--random-structure", type=int, metavar="SEED", help="generate a random structure instead of reading one")
    p.add_argument("--write-structure", metavar="PATH", help="also save the structure used")
    p.add_argument("--patients", type=int, default=2000)
    p.add_argument("--windows", type=int)
    p.add_argument("--obs-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-ground-truth", action="store_true")
    p.add_argument("--counterfactual-untreated", action="store_true", help="withhold every medication line")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-ite", help="match transitions and write Δ sequences")
    p.add_argument("--cohort", required=True)
    p.add_argument("--caliper", type=float, help="absolute caliper; default is --caliper-factor x sd of propensities")
    p.add_argument("--caliper-factor", type=float, default=0.2)
    p.add_argument("--min-group-size", type=int, default=5)
    p.add_argument("--relevant-labs", default="auto")
    p.add_argument("--propensity-ridge", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_estimate_ite)

    p = sub.add_parser("train", help="train and score one model on one split")
    p.add_argument("--task", choices=["dx", "lab"], default="dx")
    p.add_argument("--model", choices=["glm", "glmer", "lstm", "gru"], required=True)
    p.add_argument("--method", choices=["none", "augment", "pretrain"], default="none")
    p.add_argument("--time-step", type=int, required=True)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--outcome", help="diagnosis code (dx) or lab id (lab); default: first outcome")
    p.add_argument("--cohort", required=True)
    p.add_argument("--deltas", help="precomputed Δ file; default recomputes Δ with train-only propensities")
    p.add_argument("--relevant-labs", default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--glm-ridge", type=float, default=1.0)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--freeze-recurrent", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="run an experiment grid and write result CSVs")
    p.add_argument("--grid", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--deltas", help="precomputed Δ file; default recomputes Δ per split")
    p.add_argument("--out", required=True)
    p.add_argument("--pvalues")
    p.add_argument("--series")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"kgite {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"kgite {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
