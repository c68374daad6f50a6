import csv
import json
import shutil
import subprocess

import pytest

from kgite.cli import main
from kgite.seqmodels import load_checkpoint
from kgite.synth_ehr import read_cohort


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--random-structure", "3", "--write-structure", str(d / "s.json"), "--patients", "150",
                 "--windows", "30", "--seed", "2", "--out", str(d / "c.jsonl"), "--emit-ground-truth"]) == 0
    assert main(["estimate-ite", "--cohort", str(d / "c.jsonl"), "--out", str(d / "d.jsonl"), "--report", str(d / "m.csv")]) == 0
    return d


def test_simulate_outputs(work):
    c = read_cohort(work / "c.jsonl")
    assert len(c) == 150 and c.n_windows == 30 and c.has_ground_truth
    assert main(["validate-structure", str(work / "s.json")]) == 0
    # the saved structure reproduces the cohort
    assert main(["simulate", "--structure", str(work / "s.json"), "--patients", "150", "--windows", "30", "--seed", "2",
                 "--out", str(work / "c2.jsonl"), "--emit-ground-truth"]) == 0
    assert (work / "c.jsonl").read_bytes() == (work / "c2.jsonl").read_bytes()


def test_counterfactual_untreated(work):
    assert main(["simulate", "--structure", str(work / "s.json"), "--patients", "20", "--windows", "30",
                 "--out", str(work / "u.jsonl"), "--counterfactual-untreated"]) == 0
    assert not read_cohort(work / "u.jsonl").meds.any()


def test_estimate_ite_report(work):
    with open(work / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {"ok"} <= {r["status"] for r in rows}


@pytest.mark.parametrize("model,method", [("glm", "augment"), ("glmer", "none"), ("gru", "pretrain")])
def test_train(work, model, method):
    ck, met = work / f"{model}-{method}.json", work / f"{model}-{method}.metrics.json"
    args = ["train", "--model", model, "--method", method, "--time-step", "5", "--cohort", str(work / "c.jsonl"),
            "--out", str(ck), "--metrics", str(met), "--epochs", "2", "--hidden-dim", "4"]
    if method == "augment":
        args += ["--deltas", str(work / "d.jsonl")]
    code = main(args)
    assert code in (0, 4)
    if code == 0:
        m = json.loads(met.read_text())
        assert m["metric_name"] == "AUC" and 0 <= m["value"] <= 1
        load_checkpoint(ck)
        if method == "augment":
            assert m["delta_pvalue_count"] > 0


def test_train_lab_task(work):
    c = read_cohort(work / "c.jsonl")
    assert main(["train", "--task", "lab", "--model", "glm", "--time-step", "4", "--outcome", c.lab_ids[0],
                 "--cohort", str(work / "c.jsonl"), "--out", str(work / "lab.json"), "--metrics", str(work / "lab.m.json")]) == 0
    assert json.loads((work / "lab.m.json").read_text())["metric_name"] == "MSE"


def test_report(work):
    grid = work / "g.json"
    grid.write_text(json.dumps({"models": ["glm"], "methods": ["none", "augment"], "time_steps": [4, 6], "runs": 2}))
    out = work / "r.csv"
    code = main(["report", "--grid", str(grid), "--cohort", str(work / "c.jsonl"), "--out", str(out),
                 "--pvalues", str(work / "p.csv"), "--series", str(work / "ser.csv")])
    assert code in (0, 4)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("outcome,model,method")
    assert (work / "p.csv").exists() and (work / "ser.csv").exists()


def test_config_errors_exit_2(work, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"diseases": [{"id": "D1", "parents": ["D1"]}]}')
    assert main(["validate-structure", str(bad)]) == 2
    assert main(["validate-structure", str(tmp_path / "missing.json")]) == 2
    assert main(["simulate", "--out", str(tmp_path / "x")]) == 2
    assert main(["nope"]) == 2
    grid = tmp_path / "g.json"
    grid.write_text('{"models": ["svm"]}')
    assert main(["report", "--grid", str(grid), "--cohort", str(work / "c.jsonl"), "--out", str(tmp_path / "r.csv")]) == 2
    assert main(["train", "--model", "glm", "--method", "pretrain", "--time-step", "5", "--cohort", str(work / "c.jsonl"),
                 "--out", str(tmp_path / "m.json")]) == 2
    assert main(["train", "--model", "glm", "--time-step", "40", "--cohort", str(work / "c.jsonl"),
                 "--out", str(tmp_path / "m.json")]) == 2


def test_data_errors_exit_3(work, tmp_path):
    junk = tmp_path / "c.jsonl"
    junk.write_text("not a cohort\n")
    assert main(["estimate-ite", "--cohort", str(junk), "--out", str(tmp_path / "d")]) == 3
    # Δ file from a different cohort
    assert main(["simulate", "--structure", str(work / "s.json"), "--patients", "10", "--windows", "30",
                 "--seed", "9", "--out", str(tmp_path / "other.jsonl")]) == 0
    assert main(["train", "--model", "glm", "--method", "augment", "--time-step", "5", "--cohort", str(tmp_path / "other.jsonl"),
                 "--deltas", str(work / "d.jsonl"), "--out", str(tmp_path / "m.json")]) == 3


def test_all_runs_invalid_exit_4(work, tmp_path):
    assert main(["simulate", "--structure", str(work / "s.json"), "--patients", "3", "--windows", "30",
                 "--out", str(tmp_path / "tiny.jsonl")]) == 0
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps({"models": ["glm"], "methods": ["none"], "time_steps": [4], "runs": 1}))
    assert main(["report", "--grid", str(grid), "--cohort", str(tmp_path / "tiny.jsonl"), "--out", str(tmp_path / "r.csv")]) == 4
    assert (tmp_path / "r.csv").exists()
    assert main(["train", "--model", "glm", "--time-step", "4", "--cohort", str(tmp_path / "tiny.jsonl"),
                 "--out", str(tmp_path / "m.json")]) == 4


@pytest.mark.skipif(shutil.which("kgite") is None, reason="console script not installed")
def test_console_script(work):
    r = subprocess.run(["kgite", "validate-structure", str(work / "s.json")], capture_output=True, text=True)
    assert r.returncode == 0
    r = subprocess.run(["kgite", "simulate", "--patients", "5", "--out", "/nonexistent/dir/c.jsonl", "--random-structure", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 3 and "Traceback" not in r.stderr
