from __future__ import annotations

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

from swincd.autograd.tensor import Tensor
from swincd.errors import CheckpointError, ConfigError, DataError
from swincd.metrics import merge_scores
from swincd.nn.network import ChangeDetector
from swincd.pipeline.data import synth_dataset
from swincd.pipeline.inference import export_predictions, predict, score_pair
from swincd.pipeline.optim import SGD, ParamGroup
from swincd.pipeline.training import Trainer, build_optimizer
from swincd.settings import LossConfig, ModelConfig, TrainConfig


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------
def test_sgd_momentum_and_decoupled_decay():
    w = Tensor(np.array([1.0]), requires_grad=True)
    sgd = SGD([ParamGroup("g", [("w", w)], lr_mult=2.0)], momentum=0.5, weight_decay=0.1)
    w.grad = np.array([3.0])
    sgd.step(0.1)
    # rate 0.2: v = 3, w = 1 - 0.2 * 3 - 0.2 * 0.1 * 1
    assert_allclose(w.data, [0.38])
    w.grad = np.array([1.0])
    sgd.step(0.1)
    # v = 0.5 * 3 + 1 = 2.5
    assert_allclose(w.data, [0.38 - 0.2 * 2.5 - 0.02 * 0.38])
    assert_allclose(sgd.state_dict()["w"], [2.5])


def test_sgd_skips_parameters_without_gradients():
    w = Tensor(np.array([1.0]), requires_grad=True)
    SGD([ParamGroup("g", [("w", w)])]).step(1.0)
    assert_array_equal(w.data, [1.0])


def test_sgd_validation():
    w = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ConfigError):
        SGD([ParamGroup("g", [("w", w)])], momentum=1.0)
    with pytest.raises(ConfigError, match="more than one group"):
        SGD([ParamGroup("a", [("w", w)]), ParamGroup("b", [("w", w)])])
    sgd = SGD([ParamGroup("g", [("w", w)])])
    with pytest.raises(CheckpointError, match="shape"):
        sgd.load_state_dict({"w": np.zeros(3)})
    with pytest.raises(CheckpointError, match="unexpected"):
        sgd.load_state_dict({"w": np.zeros(2), "v": np.zeros(1)})


def test_head_group_runs_ten_times_faster():
    model = ChangeDetector(ModelConfig.toy())
    optimizer = build_optimizer(model, TrainConfig())
    assert [(g.name, g.lr_mult) for g in optimizer.groups] == [("encoder", 1.0), ("head", 10.0)]


# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------
def test_step_decay_schedules():
    multiplicative = TrainConfig(lr0=1.0, lr_step=2, lr_factor=0.1)
    assert [multiplicative.lr_at(e) for e in (1, 2, 3, 5)] == pytest.approx([1.0, 1.0, 0.1, 0.01])
    relative = TrainConfig(lr0=1.0, lr_step=2, lr_factor=0.1, lr_decay="initial_relative")
    assert [relative.lr_at(e) for e in (1, 3, 5)] == pytest.approx([1.0, 0.1, 0.1])
    with pytest.raises(ConfigError):
        multiplicative.lr_at(0)


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------
def test_batch_too_small_for_the_coarsest_level():
    with pytest.raises(ConfigError, match="at least 2"):
        Trainer(ChangeDetector(ModelConfig.toy()), TrainConfig(batch=1))


def test_empty_dataset():
    with pytest.raises(DataError):
        Trainer(ChangeDetector(ModelConfig.toy()), TrainConfig()).fit([])


def _short_run(pairs, seed: int = 0):
    cfg = TrainConfig(lr0=0.01, batch=2, epochs=2, max_steps=3, seed=seed)
    model = ChangeDetector(ModelConfig.toy())
    return Trainer(model, cfg).fit(pairs), model


def test_identical_runs_are_bit_identical():
    pairs = synth_dataset(4, 64, seed=1)
    first, model_a = _short_run(pairs)
    second, model_b = _short_run(pairs)
    assert first.step_losses == second.step_losses
    assert len(first.step_losses) == 3
    for name, values in first.checkpoint.parameters.items():
        assert_array_equal(values, second.checkpoint.parameters[name])
    assert first.checkpoint.step == 3


def test_max_steps_stops_mid_epoch_and_logs():
    pairs = synth_dataset(4, 64, seed=1)
    seen = []
    cfg = TrainConfig(lr0=0.01, batch=2, epochs=3, max_steps=3)
    result = Trainer(ChangeDetector(ModelConfig.toy()), cfg).fit(pairs, on_epoch=seen.append)
    assert [log.steps for log in result.history] == [2, 1]
    assert seen == result.history
    assert set(result.history[0].terms) == {"wbce", "ssim", "siou"}
    assert "epoch 1 steps=2" in result.history[0].line()


def test_partial_trailing_batch_is_dropped():
    pairs = synth_dataset(5, 64, seed=2)
    cfg = TrainConfig(lr0=0.01, batch=2, epochs=1)
    result = Trainer(ChangeDetector(ModelConfig.toy()), cfg).fit(pairs)
    assert result.history[0].steps == 2


def test_dataset_frequency_mode_trains():
    pairs = synth_dataset(2, 64, seed=3)
    cfg = TrainConfig(lr0=0.01, batch=2, epochs=1)
    result = Trainer(ChangeDetector(ModelConfig.toy()), cfg, LossConfig(frequency_mode="dataset")).fit(pairs)
    assert np.isfinite(result.step_losses[0])


def test_resume_at_the_step_cap_takes_no_step():
    pairs = synth_dataset(4, 64, seed=1)
    model = ChangeDetector(ModelConfig.toy())
    before = {name: t.numpy().copy() for name, t in model.named_parameters()}
    cfg = TrainConfig(lr0=0.01, batch=2, max_steps=3)
    result = Trainer(model, cfg, start_step=3).fit(pairs)
    assert result.step_losses == [] and result.history == []
    assert result.checkpoint.step == 3
    for name, tensor in model.named_parameters():
        assert_array_equal(tensor.numpy(), before[name])


@pytest.mark.slow
def test_overfits_a_small_synthetic_set(tmp_path):
    pairs = synth_dataset(8, 64, seed=0)
    # lr0 above the 1e-3 default for a 200-step run; momentum and decay stay at their defaults
    cfg = TrainConfig(lr0=0.01, batch=2, epochs=50, lr_step=100, augment=False, max_steps=200)
    model = ChangeDetector(ModelConfig.toy())
    result = Trainer(model, cfg).fit(pairs)
    assert result.checkpoint.step == 200
    assert result.history[-1].f1 > 0.95
    final = float(np.mean(result.step_losses[-4:]))
    assert result.step_losses[0] >= 10 * final

    # the same pairs again in eval mode, through running batch-norm statistics
    predictions = predict(model, pairs)
    assert all(p.probability.shape == (64, 64) for p in predictions)
    pred_dir = export_predictions(predictions, tmp_path / "preds")
    report = merge_scores(score_pair(pred_dir, pair).score for pair in pairs)
    assert report.images == 8
    assert report.f1 > 0.95
