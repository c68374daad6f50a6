import numpy as np
import pytest
from hypothesis import given, strategies as st

from kgite.harness import (
    ConfigError,
    ExperimentConfig,
    UndefinedMetricError,
    assemble_dataset,
    compute_auc,
    compute_mse,
    grid_from_dict,
    impute,
    input_windows,
    run_experiment,
    run_grid,
    split_patients,
    write_pvalues,
    write_results,
    write_series,
)


def exhaustive_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    total = 0.0
    for a in pos:
        total += np.sum(a > neg) + 0.5 * np.sum(a == neg)
    return total / (len(pos) * len(neg))


def test_auc_equals_exhaustive_pairwise_on_100_instances():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(2, 2001))
        y = (rng.random(n) < rng.uniform(0.05, 0.95)).astype(int)
        y[:2] = [0, 1]
        s = rng.integers(0, 30, n) / 7.0 if rng.random() < 0.5 else rng.normal(size=n)
        assert compute_auc(s, y) == pytest.approx(exhaustive_auc(s, y), abs=1e-12)


def test_auc_hand_case():
    assert compute_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


@given(st.lists(st.tuples(st.floats(-5, 5), st.booleans()), min_size=2, max_size=60))
def test_auc_properties(pairs):
    s = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs], dtype=int)
    if y.min() == y.max():
        with pytest.raises(UndefinedMetricError):
            compute_auc(s, y)
        return
    a = compute_auc(s, y)
    assert 0.0 <= a <= 1.0
    assert compute_auc(-s, y) == pytest.approx(1 - a)
    assert compute_auc(4 * s, y) == a  # exact scaling keeps every order and tie
    assert compute_auc(s, 1 - y) == pytest.approx(1 - a)


def test_auc_input_checks():
    with pytest.raises(ValueError):
        compute_auc([0.1, np.nan], [0, 1])
    with pytest.raises(ValueError):
        compute_auc([0.1, 0.2], [0, 2])
    with pytest.raises(ValueError):
        compute_auc([0.1], [0, 1])


def test_mse_two_pass():
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=500), rng.normal(size=500)
    assert compute_mse(p, t) == pytest.approx(sum((a - b) ** 2 for a, b in zip(p, t)) / 500, rel=1e-12)
    with pytest.raises(ValueError):
        compute_mse([], [])


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


def test_input_windows():
    np.testing.assert_array_equal(input_windows(60, 10, 5), np.arange(45, 55))
    np.testing.assert_array_equal(input_windows(60, 54, 5), np.arange(1, 55))
    with pytest.raises(ConfigError):
        input_windows(60, 56, 5)
    with pytest.raises(ConfigError):
        input_windows(5, 1, 5)


@given(st.integers(2, 500), st.floats(0.01, 0.99), st.integers(0, 1000))
def test_split_is_a_partition(n, frac, seed):
    tr, te = split_patients(n, frac, seed)
    assert len(tr) and len(te)
    assert not np.intersect1d(tr, te).size
    np.testing.assert_array_equal(np.sort(np.concatenate([tr, te])), np.arange(n))


def test_assembled_samples(cohort):
    out = cohort.structure.outcome_ids[0]
    cfg = ExperimentConfig(out, "glm", "none", 10)
    s = assemble_dataset(cohort, None, cfg)
    code = cohort.dx_codes.index(out)
    last = s.windows[-1]
    assert last == cohort.n_windows - 1 - 5
    rows = [cohort.patient_ids.index(p) for p in s.patient_ids]
    assert not cohort.dx[rows, : last + 1, code].any(), "already diagnosed patients leak in"
    dropped = set(cohort.patient_ids) - set(s.patient_ids)
    assert all(cohort.dx[cohort.patient_ids.index(p), : last + 1, code].any() for p in dropped)
    np.testing.assert_array_equal(s.labels, cohort.dx[rows, last + 5, code])
    np.testing.assert_array_equal(s.inputs, impute(cohort)[rows][:, s.windows])
    lab = assemble_dataset(cohort, None, ExperimentConfig(cohort.lab_ids[2], "glm", "none", 3, task="lab"))
    assert len(lab) == len(cohort)
    with pytest.raises(ConfigError):
        assemble_dataset(cohort, None, ExperimentConfig("nope", "glm", "none", 3))


def test_config_rules():
    with pytest.raises(ConfigError):
        ExperimentConfig("Y1", "glm", "pretrain", 10)
    with pytest.raises(ConfigError):
        ExperimentConfig("Y1", "svm", "none", 10)
    with pytest.raises(ConfigError):
        grid_from_dict({"models": ["glm"], "colour": 1})
    with pytest.raises(ConfigError):
        grid_from_dict({"train": {"hidden": 3}})
    with pytest.raises(ConfigError):
        grid_from_dict({"workers": 0})
    spec = grid_from_dict({"models": ["glm", "lstm"], "methods": ["none", "augment", "pretrain"], "time_steps": [5]})
    cells = spec.cells(["A"])
    assert [(c.model, c.method) for c in cells] == [("glm", "none"), ("glm", "augment"), ("lstm", "none"), ("lstm", "pretrain")]
    cells = grid_from_dict({"models": ["lstm"], "rnn_augment": True, "time_steps": [5]}).cells(["A"])
    assert [c.method for c in cells] == ["none", "augment", "pretrain"]


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


SMALL = {
    "models": ["glm", "gru"], "methods": ["none", "augment", "pretrain"], "time_steps": [4, 8],
    "runs": 2, "train": {"hidden_dim": 4, "epochs": 3, "learning_rate": 0.01},
}


@pytest.fixture(scope="module")
def small_grid(cohort):
    return run_grid(grid_from_dict(SMALL), cohort, workers=1)


def test_grid_is_independent_of_worker_count(cohort, small_grid, tmp_path):
    again = run_grid(grid_from_dict(SMALL), cohort, workers=2)
    for name, g in (("a", small_grid), ("b", again)):
        write_results(g.rows, tmp_path / f"{name}.csv")
        write_pvalues(g.pvalues_by(), tmp_path / f"{name}.p.csv")
        write_series(g.rows, tmp_path / f"{name}.s.csv")
    for suffix in (".csv", ".p.csv", ".s.csv"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()


def test_grid_layout(cohort, small_grid, tmp_path):
    n_out = len(cohort.structure.outcome_ids)
    assert len(small_grid.rows) == n_out * 2 * 2 * 2
    write_results(small_grid.rows, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "outcome,model,method,time_step,run,metric_name,value,mean_flag"
    assert len(lines) == 1 + len(small_grid.rows) * 3
    pv = small_grid.pvalues_by()
    assert set(pv) == {("glm", 4), ("glm", 8)}
    assert all(np.all((p >= 0) & (p <= 1)) for p in pv.values())
    for r in small_grid.rows:
        if r.valid:
            assert all(0 <= v <= 1 for v in r.valid)


def test_single_experiment_matches_grid_cell(cohort, small_grid):
    row = small_grid.rows[1]
    c = row.config
    again = run_experiment(c, cohort)
    assert again.values == row.values


def test_lab_task_uses_mse(cohort):
    g = run_grid(grid_from_dict({"task": "lab", "outcomes": [cohort.lab_ids[0]], "models": ["glm", "glmer"],
                                 "methods": ["none"], "time_steps": [3], "runs": 1}), cohort)
    assert [r.metric_name for r in g.rows] == ["MSE", "MSE"]
    assert all(v >= 0 for r in g.rows for v in r.valid)


def test_invalid_runs_are_reported(cohort):
    # a two-patient cohort leaves at most one test patient, so no AUC exists
    tiny = cohort.subset(np.arange(2))
    g = run_grid(grid_from_dict({"models": ["glm"], "methods": ["none"], "time_steps": [3], "runs": 2}), tiny)
    assert g.failures and all(not r.valid for r in g.rows)
    assert g.failures[0][1].startswith("UndefinedMetricError")
