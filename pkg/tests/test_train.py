import json

import numpy as np
import pytest

from kgite.seqmodels import (
    AlignmentError,
    CheckpointError,
    SequenceSample,
    Standardizer,
    TrainConfig,
    align_deltas,
    augment,
    finetune,
    fit_glm,
    fit_random_intercept,
    fit_scratch,
    flatten_windows,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)


def _seq(rng, n=300, K=4, d=3):
    return rng.normal(size=(n, K, d)) * [1.0, 3.0, 0.5] + [0.0, 5.0, -2.0]


def test_pretraining_recovers_a_linear_map():
    rng = np.random.default_rng(0)
    x = _seq(rng)
    A = rng.normal(size=(3, 2))
    target = Standardizer.fit(x)(x) @ A
    cfg = TrainConfig(hidden_dim=8, learning_rate=0.03, epochs=300, batch_size=32, patience=300)
    m = pretrain(x, target, "lstm", cfg)
    mse = np.mean((m.predict_delta(x) - target) ** 2)
    assert mse < 0.05 * target.var()
    h = m.history["pretrain"]
    assert h["val"][h["best_epoch"] - 1] == min(h["val"])


def test_finetune_leaves_pretrained_model_untouched():
    rng = np.random.default_rng(1)
    x = _seq(rng, n=80)
    m = pretrain(x, rng.normal(size=(80, 4, 2)), "gru", TrainConfig(hidden_dim=4, epochs=3))
    before = {k: v.copy() for k, v in m.params.tensors.items()}
    y = (x[:, -1, 0] > 0).astype(float)
    ft = finetune(m, x, y, TrainConfig(hidden_dim=4, epochs=3))
    for k, v in before.items():
        np.testing.assert_array_equal(m.params.tensors[k], v)
    assert "Wp" not in ft.params.tensors and "Wt" in ft.params.tensors
    assert ft.provenance == "finetune" and set(ft.history) == {"pretrain", "task"}
    frozen = finetune(m, x, y, TrainConfig(hidden_dim=4, epochs=3, freeze_recurrent=True))
    for k in ("W", "U", "b"):
        np.testing.assert_array_equal(frozen.params.tensors[k], before[k])
    with pytest.raises(ValueError):
        finetune(m, x, y, TrainConfig(hidden_dim=5))


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(2)
    x = _seq(rng, n=100)
    y = (x[:, :, 1].mean(1) > 5).astype(float)
    cfg = TrainConfig(hidden_dim=4, epochs=5, seed=7)
    a, b = fit_scratch(x, y, "lstm", cfg), fit_scratch(x, y, "lstm", cfg)
    for k in a.params.tensors:
        np.testing.assert_array_equal(a.params.tensors[k], b.params.tensors[k])
    c = fit_scratch(x, y, "lstm", TrainConfig(hidden_dim=4, epochs=5, seed=8))
    assert not np.array_equal(a.params.tensors["W"], c.params.tensors["W"])


def test_scratch_and_finetune_share_task_head_initialisation():
    rng = np.random.default_rng(3)
    x = _seq(rng, n=40)
    y = (rng.random(40) < 0.5).astype(float)
    cfg = TrainConfig(hidden_dim=4, epochs=0)
    s = fit_scratch(x, y, "gru", cfg)
    f = finetune(pretrain(x, rng.normal(size=(40, 4, 1)), "gru", cfg), x, y, cfg)
    np.testing.assert_array_equal(s.params.tensors["Wt"], f.params.tensors["Wt"])


def test_scratch_model_learns_a_separable_task():
    rng = np.random.default_rng(4)
    x = _seq(rng, n=400)
    y = (x[:, 1, 0] + x[:, 3, 2] > -2).astype(float)
    m = fit_scratch(x, y, "lstm", TrainConfig(hidden_dim=8, learning_rate=0.03, epochs=200, batch_size=32, patience=50))
    acc = np.mean((m.predict(x) > 0.5) == y)
    assert acc > 0.9
    assert np.all((m.predict(x) > 0) & (m.predict(x) < 1))


def test_early_stopping_keeps_best_iterate():
    rng = np.random.default_rng(5)
    x = _seq(rng, n=60)
    y = rng.normal(size=60)  # pure noise: validation loss soon rises
    m = fit_scratch(x, y, "gru", TrainConfig(hidden_dim=16, learning_rate=0.05, epochs=200, patience=3, batch_size=8), loss="mse")
    h = m.history["task"]
    assert h["epochs_run"] < 200
    assert h["epochs_run"] == h["best_epoch"] + 3
    from kgite.seqmodels.train import _split

    _, va = _split(60, TrainConfig(seed=0))
    xs = m.standardizer(x)[va]
    from kgite.seqmodels.rnn import loss_and_output_grad, rnn_forward

    val = loss_and_output_grad(rnn_forward(m.params, xs), y[va], "task", "mse")[0]
    assert val == pytest.approx(min(h["val"]))


def test_standardizer():
    x = np.array([[[1.0, 7.0]], [[3.0, 7.0]]])
    s = Standardizer.fit(x)
    np.testing.assert_array_equal(s.mean, [2.0, 7.0])
    np.testing.assert_array_equal(s.scale, [1.0, 1.0])
    np.testing.assert_array_equal(s(x)[:, 0, 0], [-1, 1])


def test_config_validation():
    for bad in (dict(hidden_dim=0), dict(learning_rate=0), dict(momentum=1.0), dict(clip_norm=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def test_rnn_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    x = _seq(rng, n=30)
    m = fit_scratch(x, (rng.random(30) < 0.5).astype(float), "lstm", TrainConfig(hidden_dim=3, epochs=2))
    save_checkpoint(m, tmp_path / "m.json", {"note": "x"})
    back = load_checkpoint(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict(x), m.predict(x))
    assert back.task_loss == "bce" and back.params.cell == "lstm"
    assert json.loads((tmp_path / "m.json").read_text())["metadata"] == {"note": "x"}


def test_linear_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 3))
    y = (rng.random(200) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
    for model in (fit_glm(X, y), fit_random_intercept(X, y, np.arange(200) % 20)):
        save_checkpoint(model, tmp_path / "l.json")
        back = load_checkpoint(tmp_path / "l.json")
        assert type(back) is type(model)
        np.testing.assert_array_equal(back.predict(X), model.predict(X))
        np.testing.assert_array_equal(back.cov, model.cov)


@pytest.mark.parametrize("text", ["nope", '{"schema": "other"}', '{"schema": "kgite/checkpoint/v1", "kind": "tree", "tensors": {}}',
                                  '{"schema": "kgite/checkpoint/v1", "kind": "linear", "tensors": {"coef": {"shape": [3], "dtype": "<f8", "data": ""}}}'])
def test_bad_checkpoints(tmp_path, text):
    (tmp_path / "c.json").write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.json")


# --------------------------------------------------------------------------
# sequence helpers
# --------------------------------------------------------------------------


def test_augment_width_and_flag():
    x = np.zeros((2, 3, 4))
    dl = np.ones((2, 3, 2))
    out = augment(x, dl)
    assert out.shape == (2, 3, 4 + 2 + 1)
    assert not out[..., -1].any()
    flags = np.array([[0, 1, 0], [1, 0, 0]])
    np.testing.assert_array_equal(augment(x, dl, flags)[..., -1], flags)
    with pytest.raises(AlignmentError):
        augment(x, np.ones((2, 2, 2)))
    with pytest.raises(AlignmentError):
        augment(x, dl, np.zeros((2, 2)))


def test_align_deltas_picks_patient_rows_and_windows():
    delta = np.arange(3 * 5 * 1, dtype=float).reshape(3, 5, 1)
    un = np.zeros((3, 5), np.int8)
    un[2, 4] = 1
    d, u = align_deltas(["c", "a"], [3, 4], ["a", "b", "c"], delta, un)
    np.testing.assert_array_equal(d[..., 0], [[13, 14], [3, 4]])
    np.testing.assert_array_equal(u, [[0, 1], [0, 0]])
    with pytest.raises(AlignmentError):
        align_deltas(["z"], [0], ["a"], delta[:1], un[:1])
    with pytest.raises(AlignmentError):
        align_deltas(["a"], [5], ["a"], delta[:1], un[:1])


def test_flatten_keeps_window_order():
    x = np.arange(2 * 3 * 2).reshape(2, 3, 2)
    np.testing.assert_array_equal(flatten_windows(x)[0], [0, 1, 2, 3, 4, 5])


def test_sample_subset():
    s = SequenceSample(["a", "b", "c"], np.arange(2), np.zeros((3, 2, 1)), np.array([0, 1, 0.0]), np.zeros((3, 2, 1)), None)
    sub = s.subset([2, 0])
    assert sub.patient_ids == ["c", "a"] and sub.unmatched is None and len(sub) == 2 and sub.time_step == 2
