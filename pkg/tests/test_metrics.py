import numpy as np
import pytest

from app.annotations import AnnotationMask
from app.metrics import evaluate_explanations, iou, prf1


def test_iou_conventions():
    a = np.array([[1, 1], [0, 0]])
    assert iou(a, a) == 1.0
    assert iou(a, 1 - a) == 0.0
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_iou_counts():
    pred = np.zeros(10, dtype=np.uint8)
    truth = np.zeros(10, dtype=np.uint8)
    pred[:4] = 1
    truth[2:6] = 1
    # intersection 2, union 6
    assert iou(pred, truth) == pytest.approx(1 / 3)


def test_prf1_counts():
    f = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    c = np.array([0, 0, 0, 0, 1, 1, 0, 0])
    pred = np.array([1, 1, 1, 0, 1, 0, 1, 1])  # TP=3 FN=1 FP=1, last two unlabeled
    p, r, f1 = prf1(pred, AnnotationMask(f, c))
    assert (p, r, f1) == pytest.approx((0.75, 0.75, 0.75))


def test_prf1_ignores_unlabeled_pixels(rng):
    f = (rng.random((8, 8)) < 0.3).astype(np.uint8)
    c = ((rng.random((8, 8)) < 0.3) & (f == 0)).astype(np.uint8)
    mask = AnnotationMask(f, c)
    pred = (rng.random((8, 8)) < 0.5).astype(np.uint8)
    flipped = pred.copy()
    unlabeled = ~mask.labeled
    flipped[unlabeled] = 1 - flipped[unlabeled]
    assert prf1(pred, mask) == prf1(flipped, mask)


def test_prf1_empty_prediction():
    f = np.array([[1, 0]])
    p, r, f1 = prf1(np.zeros((1, 2)), AnnotationMask(f, np.zeros_like(f)))
    assert (p, r, f1) == (0.0, 0.0, 0.0)


def _oracle(pred, f, c):
    pred, f, c = pred.astype(bool).ravel(), f.astype(bool).ravel(), c.astype(bool).ravel()
    inter = sum(1 for x, y in zip(pred, f) if x and y)
    union = sum(1 for x, y in zip(pred, f) if x or y)
    tp, fp, fn = inter, sum(1 for x, y in zip(pred, c) if x and y), sum(1 for x, y in zip(pred, f) if y and not x)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return (inter / union if union else 1.0), p, r, (2 * p * r / (p + r) if p + r else 0.0)


def test_metrics_match_pixel_counting(rng):
    for _ in range(500):
        f = (rng.random((6, 6)) < rng.random()).astype(np.uint8)
        c = ((rng.random((6, 6)) < rng.random()) & (f == 0)).astype(np.uint8)
        pred = (rng.random((6, 6)) < rng.random()).astype(np.uint8)
        expected = _oracle(pred, f, c)
        p, r, f1 = prf1(pred, AnnotationMask(f, c))
        assert iou(pred, f) == pytest.approx(expected[0], abs=1e-15)
        assert (p, r, f1) == pytest.approx(expected[1:], abs=1e-15)


def test_evaluate_explanations_averages_samples():
    f = np.zeros((2, 2, 2), dtype=np.uint8)
    f[:, 0, 0] = 1
    mask = AnnotationMask(f, np.zeros_like(f))
    maps = np.zeros((2, 1, 2, 2))
    maps[0, 0, 0, 0] = 0.9  # perfect on the first sample, nothing on the second
    score = evaluate_explanations(maps, mask)
    assert score.iou == pytest.approx(0.5)
    assert score.recall == pytest.approx(0.5)
    assert score.f1 == pytest.approx(0.5)


def test_evaluate_single_sample():
    f = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    mask = AnnotationMask(f, np.zeros_like(f))
    score = evaluate_explanations(f.astype(float), mask)
    assert (score.iou, score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0, 1.0)
