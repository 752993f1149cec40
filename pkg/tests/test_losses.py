from __future__ import annotations

import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

from swincd.autograd import ops
from swincd.autograd.tensor import Tensor, backward
from swincd.errors import ConfigError, DataError, ShapeError
from swincd.losses import (
    boundary_map,
    class_frequencies,
    compute_weights,
    hybrid_loss,
    siou_loss,
    ssim_loss,
    wbce,
)
from swincd.nn.network import SideOutputs
from swincd.settings import LossConfig


def _outputs(rng, shape=(2, 1, 16, 16), requires_grad=False) -> SideOutputs:
    maps = [Tensor(rng.normal(size=shape), requires_grad=requires_grad) for _ in range(6)]
    return SideOutputs(tuple(maps[1:]), maps[0])


def _mask(rng, shape=(2, 16, 16)) -> np.ndarray:
    return (rng.uniform(size=shape) > 0.7).astype(np.float64)


# ---------------------------------------------------------------------------
# Closed-form values
# ---------------------------------------------------------------------------
def test_siou_at_half_probability():
    loss = siou_loss(Tensor(np.full((1, 1, 8, 8), 0.5)), np.ones((1, 8, 8)))
    assert abs(loss.item() - 0.5) <= 1e-9


def test_ssim_of_identical_maps():
    gt = np.zeros((1, 16, 16))
    gt[0, 4:12, 3:9] = 1.0
    assert ssim_loss(Tensor(gt[:, None]), gt).item() <= 1e-9


def test_wbce_uniform_weights_at_half_probability():
    loss = wbce(Tensor(np.zeros((2, 1, 8, 8))), (np.arange(128).reshape(2, 8, 8) % 2), np.ones((2, 8, 8)))
    assert abs(loss.item() - math.log(2.0)) <= 1e-9


def test_median_frequency_weights():
    weights = compute_weights(np.zeros((4, 4)), w0=0.0, frequencies=[0.75, 0.25])
    assert_allclose(weights.class_weights, [2 / 3, 2.0], rtol=0, atol=1e-12)


def test_weights_from_mask_frequencies():
    gt = np.zeros((4, 4))
    gt[:, :1] = 1.0
    weights = compute_weights(gt, w0=0.0)
    assert weights.frequencies == (0.75, 0.25)
    assert_allclose(weights.values[0], [2.0, 2 / 3, 2 / 3, 2 / 3])


def test_single_class_mask_gets_unit_weights():
    weights = compute_weights(np.zeros((3, 3)), w0=2.0)
    assert weights.class_weights == (1.0, 0.0)
    assert_array_equal(weights.values, np.ones((3, 3)))


def test_boundary_weight_on_label_transitions():
    gt = np.zeros((3, 4))
    gt[:, 2:] = 1.0
    edge = boundary_map(gt)
    assert_array_equal(edge, [[False, True, True, False]] * 3)
    weights = compute_weights(gt, w0=2.0)
    assert_allclose(weights.values[0], [1.0, 3.0, 3.0, 1.0])


def test_boundaries_do_not_cross_batch_items():
    gt = np.zeros((2, 2, 2))
    gt[1] = 1.0
    assert not boundary_map(gt).any()


def test_class_frequencies_over_a_dataset():
    assert class_frequencies([np.zeros((2, 2)), np.ones((2, 2))]) == (0.5, 0.5)
    with pytest.raises(DataError):
        class_frequencies([])


def test_masks_must_be_binary():
    with pytest.raises(DataError, match="0 and 1"):
        compute_weights(np.full((2, 2), 2.0))


def test_mask_shape_must_match():
    with pytest.raises(ShapeError):
        siou_loss(Tensor(np.zeros((1, 1, 4, 4))), np.zeros((1, 5, 5)))


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------
def test_siou_is_averaged_per_sample():
    prob = Tensor(np.stack([np.full((1, 4, 4), 0.5), np.ones((1, 4, 4))]))
    gt = np.ones((2, 4, 4))
    # per-sample IoU 0.5 and 1.0
    assert siou_loss(prob, gt).item() == pytest.approx(1 - 0.75, abs=1e-9)


def test_wbce_saturated_logits_stay_finite():
    logits = Tensor(np.array([[[[80.0, -80.0]]]]), requires_grad=True)
    loss = wbce(logits, np.array([[[0.0, 1.0]]]))
    assert np.isfinite(loss.item())
    backward(loss)
    assert np.all(np.isfinite(logits.grad))


def test_ssim_gradient_reaches_probabilities(rng):
    logits = Tensor(rng.normal(size=(1, 1, 12, 12)), requires_grad=True)
    backward(ssim_loss(ops.sigmoid(logits), _mask(rng, (1, 12, 12))))
    assert logits.grad is not None and np.any(logits.grad != 0)


# ---------------------------------------------------------------------------
# Hybrid objective
# ---------------------------------------------------------------------------
def test_hybrid_total_matches_breakdown(rng):
    outputs, gt = _outputs(rng), _mask(rng)
    cfg = LossConfig(alpha=(1.0, 0.5, 0.25, 0.0, 2.0))
    total, breakdown = hybrid_loss(outputs, gt, cfg)
    assert total.item() == breakdown.total
    assert set(breakdown.per_output) == {"fused", "side1", "side2", "side3", "side4", "side5"}
    expected = sum(breakdown.per_output["fused"].values())
    for name, alpha in zip(["side1", "side2", "side3", "side4", "side5"], cfg.alpha):
        expected += alpha * sum(breakdown.per_output[name].values())
    assert total.item() == pytest.approx(expected, rel=1e-12)
    assert sum(breakdown.per_term.values()) == pytest.approx(expected, rel=1e-12)
    assert "wbce=" in breakdown.summary() and "ssim=" in breakdown.summary() and "siou=" in breakdown.summary()


def test_zero_alpha_cuts_the_side_gradient(rng):
    outputs, gt = _outputs(rng, requires_grad=True), _mask(rng)
    total, _ = hybrid_loss(outputs, gt, LossConfig(alpha=(1.0, 1.0, 1.0, 1.0, 0.0)))
    backward(total)
    assert outputs.sides[-1].grad is None
    assert outputs.sides[0].grad is not None


def test_term_subsets(rng):
    outputs, gt = _outputs(rng), _mask(rng)
    _, breakdown = hybrid_loss(outputs, gt, LossConfig(terms=("bce", "siou")))
    assert set(breakdown.per_term) == {"bce", "siou"}
    with pytest.raises(ConfigError):
        LossConfig(terms=("bce", "wbce"))
    with pytest.raises(ConfigError):
        LossConfig(terms=("dice",))


def test_dataset_frequency_mode(rng):
    outputs, gt = _outputs(rng), _mask(rng)
    cfg = LossConfig(frequency_mode="dataset")
    with pytest.raises(DataError, match="frequencies"):
        hybrid_loss(outputs, gt, cfg)
    fixed, _ = hybrid_loss(outputs, gt, cfg, frequencies=(0.5, 0.5))
    batch, _ = hybrid_loss(outputs, gt, LossConfig())
    assert fixed.item() != batch.item()


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------
def _perfect_logits(gt: np.ndarray) -> np.ndarray:
    return np.where(gt[:, None] > 0, 30.0, -30.0)


def test_perfect_maps_give_near_zero_total():
    gt = np.zeros((2, 32, 32))
    gt[:, 8:24, 8:24] = 1.0
    maps = [Tensor(_perfect_logits(gt)) for _ in range(6)]
    total, breakdown = hybrid_loss(SideOutputs(tuple(maps[1:]), maps[0]), gt)
    assert 0.0 <= total.item() <= 1e-6
    assert all(value <= 2e-7 for value in breakdown.per_output["fused"].values())


def test_total_is_monotone_in_each_level_weight(rng):
    outputs, gt = _outputs(rng), _mask(rng)
    base = hybrid_loss(outputs, gt)[0].item()
    for level in range(5):
        alpha = [1.0] * 5
        alpha[level] = 2.0
        raised = hybrid_loss(outputs, gt, LossConfig(alpha=tuple(alpha)))[0].item()
        assert raised >= base


def test_flipping_one_pixel_raises_every_term(rng):
    for _ in range(5):
        gt = _mask(rng)
        logits = _perfect_logits(gt)
        flipped = logits.copy()
        n, y, x = (int(v) for v in rng.integers(0, (2, 16, 16)))
        flipped[n, 0, y, x] *= -1.0
        for term in (
            lambda t: wbce(t, gt),
            lambda t: ssim_loss(ops.sigmoid(t), gt),
            lambda t: siou_loss(ops.sigmoid(t), gt),
        ):
            assert term(Tensor(flipped)).item() > term(Tensor(logits)).item()


def test_term_ranges_on_random_inputs(rng):
    for _ in range(20):
        gt = _mask(rng)
        logits = Tensor(rng.normal(scale=3.0, size=(2, 1, 16, 16)))
        prob = ops.sigmoid(logits)
        assert 0.0 <= siou_loss(prob, gt).item() <= 1.0
        assert 0.0 <= ssim_loss(prob, gt).item() <= 2.0
        assert wbce(logits, gt, compute_weights(gt).values).item() >= 0.0


def test_weights_are_symmetric_under_complement(rng):
    gt = _mask(rng)
    direct = compute_weights(gt)
    complement = compute_weights(1.0 - gt)
    assert_allclose(complement.values, direct.values)
    assert complement.class_weights == pytest.approx(direct.class_weights[::-1])
    given = compute_weights(1.0 - gt, frequencies=direct.frequencies[::-1])
    assert_array_equal(given.values, direct.values)
