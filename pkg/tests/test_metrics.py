from __future__ import annotations

import json

import numpy as np
from numpy.testing import assert_array_equal
import pytest

from swincd.errors import DataError, ShapeError
from swincd.metrics import (
    ConfusionCounts,
    MetricsReport,
    band_accuracies,
    binarize,
    boundary_band,
    confusion,
    default_thresholds,
    evaluate,
    mba,
    merge_scores,
    roc_counts,
    roc_curve,
    score_image,
)


def _brute_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    tp = fp = tn = fn = 0
    for p, g in zip(pred.reshape(-1).tolist(), gt.reshape(-1).tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def _brute_band(gt: np.ndarray, radius: int) -> np.ndarray:
    h, w = gt.shape
    edges = [
        (i, j)
        for i in range(h)
        for j in range(w)
        if any(
            0 <= i + di < h and 0 <= j + dj < w and gt[i + di, j + dj] != gt[i, j]
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
        )
    ]
    band = np.zeros((h, w), dtype=bool)
    for i, j in edges:
        band[max(i - radius, 0):i + radius + 1, max(j - radius, 0):j + radius + 1] = True
    return band


def test_counts_and_scores_match_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pred = (rng.uniform(size=(32, 32)) > rng.uniform()).astype(np.uint8)
        gt = (rng.uniform(size=(32, 32)) > rng.uniform()).astype(np.uint8)
        counts = confusion(pred, gt)
        tp, fp, tn, fn = _brute_counts(pred, gt)
        assert (counts.tp, counts.fp, counts.tn, counts.fn) == (tp, fp, tn, fn)
        assert counts.total == 32 * 32
        if tp:
            p, r = tp / (tp + fp), tp / (tp + fn)
            assert counts.f1 == pytest.approx(2 * p * r / (p + r), rel=1e-12)
            assert counts.f1 == pytest.approx(2 * counts.iou / (1 + counts.iou), rel=1e-12)
        assert counts.oa == pytest.approx((tp + tn) / (32 * 32), rel=1e-12)


def test_degenerate_ratios_are_zero():
    counts = confusion(np.zeros((4, 4)), np.zeros((4, 4)))
    assert counts.precision == counts.recall == counts.f1 == counts.iou == 0.0
    assert counts.oa == 1.0


def test_perfect_prediction():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[2:5, 3:7] = 1
    report = evaluate(gt.astype(np.float64), gt)
    assert report.f1 == report.iou == report.oa == report.mba == 1.0


def test_binarize_uses_greater_or_equal():
    assert_array_equal(binarize(np.array([0.49, 0.5, 0.51])), [0, 1, 1])


def test_rejects_non_binary_and_mismatched_masks():
    with pytest.raises(DataError):
        confusion(np.full((2, 2), 0.5), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))


def test_counts_add():
    total = ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(10, 20, 30, 40)
    assert total == ConfusionCounts(11, 22, 33, 44)


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------
def test_roc_counts_match_thresholding(rng):
    prob = np.round(rng.uniform(size=(16, 16)), 2)
    gt = (rng.uniform(size=(16, 16)) > 0.6).astype(np.uint8)
    counts = roc_counts(prob, gt)
    thresholds = default_thresholds()
    assert counts.shape == (101, 2)
    for (tp, fp), t in zip(counts, thresholds):
        assert tp == np.count_nonzero((prob >= t) & (gt == 1))
        assert fp == np.count_nonzero((prob >= t) & (gt == 0))


def test_roc_curve_runs_from_origin_to_one(rng):
    prob = rng.uniform(size=(16, 16)) * 0.99
    gt = (rng.uniform(size=(16, 16)) > 0.5).astype(np.uint8)
    curve = roc_curve(prob, gt)
    assert curve[0] == (0.0, 0.0)
    assert curve[-1] == (1.0, 1.0)
    fprs, tprs = zip(*curve)
    assert list(fprs) == sorted(fprs) and list(tprs) == sorted(tprs)


# ---------------------------------------------------------------------------
# Boundary accuracy
# ---------------------------------------------------------------------------
def test_boundary_bands_match_chebyshev_distance():
    rng = np.random.default_rng(11)
    for _ in range(20):
        gt = np.zeros((16, 16), dtype=np.uint8)
        top, left = rng.integers(0, 10, size=2)
        gt[top:top + rng.integers(2, 7), left:left + rng.integers(2, 7)] = 1
        for radius in (1, 3, 5, 7):
            assert_array_equal(boundary_band(gt, radius), _brute_band(gt, radius))


def test_mba_against_brute_force():
    rng = np.random.default_rng(3)
    gt = np.zeros((24, 24), dtype=np.uint8)
    gt[5:15, 8:20] = 1
    pred = np.where(rng.uniform(size=gt.shape) < 0.1, 1 - gt, gt)
    expected = np.mean([np.mean((pred == gt)[_brute_band(gt, r)]) for r in (1, 3, 5, 7)])
    assert mba(pred, gt) == pytest.approx(expected, rel=1e-12)


def test_mba_without_boundary_falls_back_to_accuracy():
    gt = np.zeros((4, 4), dtype=np.uint8)
    pred = gt.copy()
    pred[0, 0] = 1
    assert band_accuracies(pred, gt) == [15 / 16] * 4
    assert mba(pred, gt) == 15 / 16


def test_mba_needs_2d_masks():
    with pytest.raises(ShapeError):
        mba(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)))


# ---------------------------------------------------------------------------
# Merging and reports
# ---------------------------------------------------------------------------
def test_merged_counts_equal_whole_dataset(rng):
    probs = [rng.uniform(size=(8, 8)) for _ in range(4)]
    gts = [(rng.uniform(size=(8, 8)) > 0.5).astype(np.uint8) for _ in range(4)]
    report = merge_scores(score_image(p, g) for p, g in zip(probs, gts))
    whole = confusion(binarize(np.concatenate(probs)), np.concatenate(gts))
    assert (report.tp, report.fp, report.tn, report.fn) == (whole.tp, whole.fp, whole.tn, whole.fn)
    assert report.images == 4
    assert report.roc == roc_curve(np.concatenate(probs), np.concatenate(gts))
    assert report.mba == pytest.approx(np.mean([mba(binarize(p), g) for p, g in zip(probs, gts)]))


def test_nothing_to_merge():
    with pytest.raises(DataError):
        merge_scores([])


def test_report_serialisations(rng):
    gt = (rng.uniform(size=(8, 8)) > 0.5).astype(np.uint8)
    report = evaluate(rng.uniform(size=(8, 8)), gt)
    text = report.to_text()
    assert f"f1 = {report.f1}" in text
    assert "roc.0 = 0.0,0.0" in text and "roc.100 = 1.0,1.0" in text
    decoded = json.loads(report.model_dump_json())
    assert MetricsReport.model_validate(decoded) == report


def test_report_rejects_unknown_fields():
    with pytest.raises(ValueError):
        MetricsReport(tp=0, fp=0, tn=0, fn=0, precision=0, recall=0, f1=0, iou=0, oa=0, mba=0, extra=1)


def test_mba_is_symmetric_under_complement(rng):
    for _ in range(10):
        gt = (rng.uniform(size=(24, 24)) > 0.6).astype(np.uint8)
        pred = (rng.uniform(size=(24, 24)) > 0.5).astype(np.uint8)
        assert mba(1 - pred, 1 - gt) == mba(pred, gt)
