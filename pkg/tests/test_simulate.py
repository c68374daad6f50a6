import hashlib
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from kgite import kernels
from kgite.synth_ehr import (
    CohortFormatError,
    SimulationConfig,
    random_structure,
    read_cohort,
    simulate_cohort,
    step_patient,
    write_cohort,
)
from kgite.synth_ehr.structure import MAX_LINES


def _capture(structure, n, seed, **kw):
    box = {}
    real = kernels.simulate

    def grab(*args):
        box["args"] = args
        return real(*args)

    kernels.simulate = grab
    try:
        simulate_cohort(SimulationConfig(structure, n_patients=n, rng_seed=seed), **kw)
    finally:
        kernels.simulate = real
    return box["args"]


def _assert_invariants(c, structure):
    D = len(structure.diseases)
    assert np.all(np.diff(c.dx.astype(int), axis=1) >= 0), "a diagnosis switched off"
    assert np.all(np.diff(c.meds.astype(int), axis=1) >= 0), "a medication line stopped"
    assert np.all(c.severity >= 0)
    # a later line never starts before an earlier one of the same disease
    for d, spec in enumerate(structure.diseases):
        s = c.line_start[:, d, : len(spec.lines)]
        for k in range(1, s.shape[1]):
            later = s[:, k] >= 0
            assert np.all(s[later, k - 1] >= 0)
            assert np.all(s[later, k - 1] <= s[later, k])
    onset = [structure.onset(o) for o in structure.outcomes]
    for y, t0 in enumerate(onset):
        assert not c.dx[:, :t0, D + y].any()


def test_kernel_flavours_agree_bitwise(structure):
    args = _capture(structure, 150, 4)
    a = kernels.simulate_loop(*args)
    b = kernels.simulate_numpy(*args)
    for x, y in zip(a, b):
        assert x.dtype == y.dtype
        np.testing.assert_array_equal(x, y)


def test_kernel_flavours_agree_with_interventions(structure):
    P, D = 60, len(structure.diseases)
    rng = np.random.default_rng(0)
    withhold = rng.random((P, D, MAX_LINES)) < 0.3
    force = np.where(rng.random((P, D, MAX_LINES)) < 0.2, rng.integers(0, 60, (P, D, MAX_LINES)), -1)
    args = _capture(structure, P, 9, withhold=withhold, force_start=force)
    for x, y in zip(kernels.simulate_loop(*args), kernels.simulate_numpy(*args)):
        np.testing.assert_array_equal(x, y)


def _digest(c):
    h = hashlib.sha256()
    for a in (c.labs_observed, c.meds, c.dx, c.severity):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def test_numpy_fallback_flag_gives_identical_cohort(structure, tmp_path):
    path = tmp_path / "s.json"
    structure.save(path)
    code = (
        "import hashlib,numpy as np,sys\n"
        "from kgite import kernels\n"
        "from kgite.synth_ehr import SimulationConfig, load_structure, simulate_cohort\n"
        f"c=simulate_cohort(SimulationConfig(load_structure({str(path)!r}),n_patients=80,rng_seed=2))\n"
        "h=hashlib.sha256()\n"
        "[h.update(np.ascontiguousarray(a).tobytes()) for a in (c.labs_observed,c.meds,c.dx,c.severity)]\n"
        "print(kernels.USE_NUMBA, h.hexdigest())\n"
    )
    env = dict(os.environ, KGITE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out[0] == "False"
    local = simulate_cohort(SimulationConfig(structure, n_patients=80, rng_seed=2))
    assert out[1] == _digest(local)


def test_single_patient_reference_replays_the_kernel(structure):
    c = simulate_cohort(SimulationConfig(structure, n_patients=40, rng_seed=5))
    for i in range(len(c)):
        ref = c.patient(i)
        p = replace(
            ref,
            severity=ref.severity.copy(), labs_true=ref.labs_true.copy(),
            labs_observed=np.full_like(ref.labs_observed, np.nan), meds=ref.meds.copy(), dx=ref.dx.copy(),
        )
        p.labs_observed[0] = ref.labs_observed[0]
        p.severity[1:] = p.labs_true[1:] = 0
        p.meds[1:] = p.dx[1:] = 0
        for t in range(1, c.n_windows):
            step_patient(p, structure, t)
        np.testing.assert_allclose(p.severity, ref.severity, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(p.labs_true, ref.labs_true, rtol=1e-12)
        np.testing.assert_array_equal(np.isnan(p.labs_observed), np.isnan(ref.labs_observed))
        np.testing.assert_array_equal(p.meds, ref.meds)
        np.testing.assert_array_equal(p.dx, ref.dx)


def test_labs_are_linear_in_severity(cohort, structure):
    a = structure.arrays
    expect = a["lab_baseline"] + np.einsum("ptd,ld->ptl", cohort.severity, a["lab_weight"])
    np.testing.assert_allclose(cohort.labs_true, expect, rtol=1e-12)


def test_measurement_noise_is_gaussian(cohort, structure):
    noise = structure.arrays["lab_noise"]
    m = cohort.observed_mask
    z = ((cohort.labs_observed - cohort.labs_true) / noise)[m]
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_invariants_on_fixture(cohort, structure):
    _assert_invariants(cohort, structure)


@given(seed=st.integers(0, 10_000), rate=st.floats(0.05, 1.0))
def test_invariants_hold_for_any_seed_and_rate(structure, seed, rate):
    c = simulate_cohort(SimulationConfig(structure, n_patients=20, rng_seed=seed, observation_rate=rate))
    _assert_invariants(c, structure)


@pytest.mark.parametrize("rate", [0.2, 0.5, 0.9])
def test_observed_fraction_matches_rate(structure, rate):
    c = simulate_cohort(SimulationConfig(structure, n_patients=100, rng_seed=1, observation_rate=rate))
    cells = c.labs_observed.size
    assert cells >= 100_000
    assert abs(c.observed_mask.mean() - rate) <= 0.01


def test_patients_do_not_depend_on_cohort_size(structure):
    big = simulate_cohort(SimulationConfig(structure, n_patients=50, rng_seed=3))
    part = simulate_cohort(SimulationConfig(structure, n_patients=50, rng_seed=3), patient_indices=[7, 31, 2])
    np.testing.assert_array_equal(part.labs_observed, big.labs_observed[[7, 31, 2]], strict=True)
    assert part.patient_ids == [big.patient_ids[i] for i in (7, 31, 2)]


def test_withholding_everything_gives_untreated_cohort(structure):
    cfg = SimulationConfig(structure, n_patients=60, rng_seed=3)
    untreated = simulate_cohort(cfg, withhold=True)
    treated = simulate_cohort(cfg)
    assert not untreated.meds.any()
    assert treated.meds.any()
    # same draws: identical until the first prescription takes effect
    first = treated.line_start.copy()
    first[first < 0] = 10**6
    t0 = first.reshape(len(first), -1).min(axis=1)
    for p in range(len(treated)):
        upto = min(t0[p] + 1, treated.n_windows)
        np.testing.assert_array_equal(untreated.severity[p, :upto], treated.severity[p, :upto])
    # lines lower severity (effects are negative), so untreated patients are never better off
    assert np.all(untreated.severity.sum(axis=(1, 2)) >= treated.severity.sum(axis=(1, 2)) - 1e-9)


def test_forced_start(structure):
    D = len(structure.diseases)
    force = np.full((5, D, MAX_LINES), -1)
    force[:, 0, 0] = 3
    c = simulate_cohort(SimulationConfig(structure, n_patients=5, rng_seed=0), force_start=force)
    assert np.all(c.line_start[:, 0, 0] <= 3)
    off = structure.digit_offsets[0]
    assert np.all(c.meds[:, 3, off] == 1)


def test_individual_effects_log_normal():
    s = random_structure(seed=1, pilot_patients=100, individual_effect_sigma=0.4, individual_effect_correlation=0.6)
    c = simulate_cohort(SimulationConfig(s, n_patients=3000, rng_seed=0, n_windows=2))
    n_lines = [len(d.lines) for d in s.diseases]
    logs = np.log(c.individual_effects[:, 0, : n_lines[0]])
    assert stats.kstest(logs[:, 0] / 0.4, "norm").pvalue > 0.001
    r = np.corrcoef(logs[:, 0], logs[:, 1])[0, 1]
    assert abs(r - 0.6) < 0.06
    for d, k in enumerate(n_lines):
        assert np.all(c.individual_effects[:, d, k:] == 0)


def test_config_validation(structure):
    with pytest.raises(ValueError):
        SimulationConfig(structure, observation_rate=0.0)
    with pytest.raises(ValueError):
        SimulationConfig(structure, n_patients=-1)


@pytest.mark.parametrize("gt", [False, True])
def test_cohort_file_round_trip(tmp_path, cohort, gt):
    path = tmp_path / "c.jsonl"
    small = cohort.subset(np.arange(12))
    write_cohort(small, path, emit_ground_truth=gt)
    back = read_cohort(path)
    assert back.patient_ids == small.patient_ids
    np.testing.assert_array_equal(back.labs_observed, small.labs_observed)
    np.testing.assert_array_equal(back.meds, small.meds)
    np.testing.assert_array_equal(back.dx, small.dx)
    assert back.structure.to_dict() == small.structure.to_dict()
    assert back.has_ground_truth == gt
    if gt:
        np.testing.assert_array_equal(back.severity, small.severity)
        np.testing.assert_array_equal(back.individual_effects, small.individual_effects)


@pytest.mark.parametrize("content", ["", "not json\n", '{"kind": "header"}\n', '{"kind":"header","schema":"kgite/cohort/v1"}\n'])
def test_bad_cohort_files(tmp_path, content):
    path = tmp_path / "bad.jsonl"
    path.write_text(content)
    with pytest.raises(CohortFormatError):
        read_cohort(path)
