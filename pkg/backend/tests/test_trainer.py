import math

import numpy as np
import pytest

from src.dataio import EncodedDataset, one_hot
from src.errors import EmptyDatasetError, NonFiniteError
from src.models.base import Mode, TrainConfig
from src.nncore import init_params
from src.trainer import (
    AdamState,
    EarlyStopping,
    Model,
    adam_step,
    batch_slices,
    evaluate,
    fit,
    history_to_csv,
    run_epoch,
)


def make_dataset(rng, n=40, width=12, classes=4):
    labels = np.arange(n) % classes
    features = rng.normal(size=(n, width)) + labels[:, None] * 0.5
    return EncodedDataset(features, labels, one_hot(labels, classes))


def scripted_runner(losses):
    """Epoch runner replaying ``losses`` and stamping weights with the epoch number."""
    calls = {"epoch": 0}

    def runner(model, data, cfg, rng, mode, dropout_rng=None):
        calls["epoch"] += 1
        for value in model.params.values():
            value[...] = calls["epoch"]
        return losses[calls["epoch"] - 1], 0.5

    return runner


def test_adam_first_step_closed_form():
    params = {"theta": np.zeros(1)}
    state = AdamState.zeros_like(params)
    cfg = TrainConfig()
    adam_step(params, {"theta": np.array([0.1])}, state, cfg)
    expected = -6.5e-5 * 0.1 / (0.1 + 1e-8)
    assert abs(params["theta"][0] - expected) < 1e-12
    assert state.t == 1


def test_adam_zero_gradient_is_identity(rng):
    params = {"w": rng.normal(size=(3, 2))}
    original = params["w"].copy()
    state = AdamState.zeros_like(params)
    cfg = TrainConfig()
    for _ in range(1000):
        adam_step(params, {"w": np.zeros((3, 2))}, state, cfg)
    np.testing.assert_array_equal(params["w"], original)
    assert state.t == 1000


def test_adam_constant_gradient_step_tends_to_lr():
    params = {"theta": np.zeros(1)}
    state = AdamState.zeros_like(params)
    cfg = TrainConfig()
    for _ in range(2000):
        before = params["theta"][0]
        adam_step(params, {"theta": np.array([-0.3])}, state, cfg)
    step = params["theta"][0] - before
    assert step == pytest.approx(cfg.learning_rate, rel=1e-6)


def test_adam_rejects_non_finite_gradient():
    params = {"conv2.weight": np.zeros(2)}
    state = AdamState.zeros_like(params)
    with pytest.raises(NonFiniteError) as exc:
        adam_step(params, {"conv2.weight": np.array([np.nan, 0.0])}, state, TrainConfig())
    assert "conv2" in str(exc.value)


def test_batch_slices():
    sizes = [s.stop - s.start for s in batch_slices(100, 32)]
    assert sizes == [32, 32, 32, 4]


def test_run_epoch_eval_uniform_model(tiny_model_cfg, rng):
    data = make_dataset(rng, n=30)
    model = Model.create(tiny_model_cfg, 0)
    model.params["dense_out.weight"][:] = 0.0
    loss, accuracy = run_epoch(model, data, TrainConfig(), None, mode="eval")
    assert loss == pytest.approx(math.log(4), abs=1e-9)
    # ties resolve to class 0
    assert accuracy == pytest.approx(np.mean(data.labels == 0))


def test_run_epoch_is_deterministic(tiny_model_cfg, rng):
    data = make_dataset(rng)
    results = []
    for _ in range(2):
        model = Model.create(tiny_model_cfg, 5)
        results.append(run_epoch(model, data, TrainConfig(batch_size=8),
                                 np.random.default_rng(1), Mode.TRAIN))
    assert results[0] == results[1]


def test_run_epoch_empty(tiny_model_cfg):
    empty = EncodedDataset(np.zeros((0, 12)), np.zeros(0, dtype=int), np.zeros((0, 4)))
    with pytest.raises(EmptyDatasetError):
        run_epoch(Model.create(tiny_model_cfg, 0), empty, TrainConfig(), None)


def test_fit_early_stop_restores_best(tiny_model_cfg, rng):
    losses = [1.0, 0.8, 0.9, 0.85] + [0.85] * 36
    ckpt, history = fit(tiny_model_cfg, TrainConfig(), make_dataset(rng),
                        epoch_runner=scripted_runner(losses))
    assert len(history.records) == 12
    assert history.best_epoch == 2
    assert history.stopped_early
    for value in ckpt.params.values():
        assert np.all(value == 2.0)


def test_fit_strictly_decreasing_runs_all_epochs(tiny_model_cfg, rng):
    losses = [1.0 - 0.01 * i for i in range(40)]
    ckpt, history = fit(tiny_model_cfg, TrainConfig(), make_dataset(rng),
                        epoch_runner=scripted_runner(losses))
    assert len(history.records) == 40
    assert history.best_epoch == 40
    assert not history.stopped_early
    assert np.all(ckpt.params["dense1.weight"] == 40.0)


def test_fit_patience_one(tiny_model_cfg, rng):
    ckpt, history = fit(tiny_model_cfg, TrainConfig(patience=1), make_dataset(rng),
                        epoch_runner=scripted_runner([1.0, 0.9, 0.95] + [0.5] * 37))
    assert len(history.records) == 3
    assert history.best_epoch == 2
    assert np.all(ckpt.params["conv1.bias"] == 2.0)


def test_early_stopping_counts_equal_loss_as_no_improvement():
    stopper = EarlyStopping(patience=2)
    params = {"w": np.zeros(1)}
    assert not stopper.update(1, 1.0, params)
    assert not stopper.update(2, 1.0, params)
    assert stopper.update(3, 1.0, params)
    assert stopper.state.best_epoch == 1


def test_fit_tiny_learning_rate_keeps_loss_constant(tiny_model_cfg, rng):
    cfg = tiny_model_cfg.model_copy(update={"drop1": 0.0, "drop2": 0.0, "drop3": 0.0})
    data = make_dataset(rng, n=16)
    _, history = fit(cfg, TrainConfig(learning_rate=1e-30, epochs=4, batch_size=32), data)
    losses = [r.loss for r in history.records]
    assert losses == pytest.approx([losses[0]] * 4, rel=1e-12)


def test_fit_is_deterministic(tiny_model_cfg, rng):
    data = make_dataset(rng)
    cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=1e-3, seed=4)
    ckpt_a, hist_a = fit(tiny_model_cfg, cfg, data)
    ckpt_b, hist_b = fit(tiny_model_cfg, cfg, data)
    assert [(r.loss, r.accuracy) for r in hist_a.records] == [(r.loss, r.accuracy) for r in hist_b.records]
    for name in ckpt_a.params:
        np.testing.assert_array_equal(ckpt_a.params[name], ckpt_b.params[name])


def test_fit_learns_separable_data(tiny_model_cfg, rng):
    data = make_dataset(rng, n=80)
    shifted = data.features + data.labels[:, None] * 3.0
    standardized = (shifted - shifted.mean(axis=0)) / shifted.std(axis=0)
    data = EncodedDataset(standardized, data.labels, data.one_hot)
    cfg = tiny_model_cfg.model_copy(update={"drop1": 0.0, "drop2": 0.0, "drop3": 0.0})
    ckpt, history = fit(cfg, TrainConfig(epochs=80, batch_size=16, learning_rate=1e-2,
                                         patience=80, seed=1), data)
    assert history.records[-1].loss < history.records[0].loss
    _, accuracy, _ = evaluate(ckpt.model_config, ckpt.params, data)
    assert accuracy > 0.75


def test_fit_with_held_out_monitor(tmp_path, tiny_model_cfg, rng):
    data = make_dataset(rng, n=40)
    _, history = fit(tiny_model_cfg, TrainConfig(epochs=3, monitor="val_loss", seed=2), data)
    assert history.has_validation
    assert all(r.val_loss is not None for r in history.records)

    path = history_to_csv(history, tmp_path / "history.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,loss,accuracy,val_loss,val_accuracy"
    assert len(lines) == 4


def test_history_csv_columns(tmp_path, tiny_model_cfg, rng):
    _, history = fit(tiny_model_cfg, TrainConfig(epochs=2), make_dataset(rng),
                     epoch_runner=scripted_runner([0.7, 0.6]))
    lines = history_to_csv(history, tmp_path / "h.csv").read_text(encoding="utf-8").splitlines()
    assert lines == ["epoch,loss,accuracy", "1,0.69999999999999996,0.5", "2,0.59999999999999998,0.5"]


def test_fit_empty_dataset(tiny_model_cfg):
    empty = EncodedDataset(np.zeros((0, 12)), np.zeros(0, dtype=int), np.zeros((0, 4)))
    with pytest.raises(EmptyDatasetError):
        fit(tiny_model_cfg, TrainConfig(), empty)


def test_init_matches_seeded_init(tiny_model_cfg):
    model = Model.create(tiny_model_cfg, 8)
    reference = init_params(tiny_model_cfg, 8)
    for name in reference:
        np.testing.assert_array_equal(model.params[name], reference[name])
