"""CSV outputs of a grid.

``results.csv``: ``outcome, model, method, time_step, run, metric_name,
value, mean_flag``; one row per run (``mean_flag`` 0, empty value for an
invalid run) and one mean row per cell (``run`` = ``mean``, ``mean_flag`` 1).

``pvalues.csv``: quantile summary of Δ Wald p-values per ``(model,
time_step)``.

``series.csv``: mean and spread of the metric per ``(outcome, time_step,
model, method)``, one line per point of a metric-versus-time-step plot.
"""
from __future__ import annotations

import csv

import numpy as np

RESULT_COLUMNS = ["outcome", "model", "method", "time_step", "run", "metric_name", "value", "mean_flag"]
PVALUE_COLUMNS = ["model", "time_step", "count", "frac_below_0.05", "min", "q1", "median", "q3", "max"]
SERIES_COLUMNS = ["outcome", "time_step", "model", "method", "metric_name", "mean", "std", "n_valid_runs"]


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.10g}"


def result_lines(rows):
    out = []
    for r in rows:
        c = r.config
        for i, v in enumerate(r.values):
            out.append([c.outcome, c.model, c.method, c.time_step, i, r.metric_name, _fmt(v), 0])
        out.append([c.outcome, c.model, c.method, c.time_step, "mean", r.metric_name, _fmt(r.mean), 1])
    return out


def write_results(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(result_lines(rows))


def pvalue_summary(pvalues_by: dict):
    out = []
    for (model, k) in sorted(pvalues_by):
        p = np.asarray(pvalues_by[(model, k)], dtype=np.float64)
        if p.size == 0:
            out.append([model, k, 0, "", "", "", "", "", ""])
            continue
        q = np.quantile(p, [0.0, 0.25, 0.5, 0.75, 1.0])
        out.append([model, k, p.size, _fmt(float(np.mean(p < 0.05)))] + [_fmt(float(v)) for v in q])
    return out


def write_pvalues(pvalues_by: dict, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PVALUE_COLUMNS)
        w.writerows(pvalue_summary(pvalues_by))


def series_lines(rows):
    out = []
    for r in sorted(rows, key=lambda r: (r.config.outcome, r.config.time_step, r.config.model, r.config.method)):
        v = r.valid
        c = r.config
        out.append([c.outcome, c.time_step, c.model, c.method, r.metric_name, _fmt(r.mean),
                    _fmt(float(np.std(v)) if v else None), len(v)])
    return out


def write_series(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        w.writerows(series_lines(rows))
