"""Explanation quality: IoU against F, and precision/recall/F1 over labeled pixels."""
from __future__ import annotations

from typing import Tuple, Union

import numpy as np

from .annotations import AnnotationMask
from .saliency import SaliencyMap, binarize
from .schemas import ExplanationScore
from .tensor import Tensor


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def iou(map_binary: np.ndarray, f: np.ndarray) -> float:
    """|map & F| / |map | F|, 1.0 when both are empty."""
    pred = np.asarray(map_binary).astype(bool)
    truth = np.asarray(f).astype(bool)
    union = np.logical_or(pred, truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, truth).sum()) / float(union)


def prf1(map_binary: np.ndarray, mask: AnnotationMask) -> Tuple[float, float, float]:
    """F pixels are the positives, C pixels the negatives; unlabeled pixels are ignored."""
    pred = np.asarray(map_binary).astype(bool).reshape(mask.shape)
    pos = mask.F.astype(bool)
    neg = mask.C.astype(bool)
    tp = np.logical_and(pred, pos).sum()
    fp = np.logical_and(pred, neg).sum()
    fn = np.logical_and(~pred, pos).sum()
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    return precision, recall, f1


def score_sample(map_binary: np.ndarray, mask: AnnotationMask) -> ExplanationScore:
    precision, recall, f1 = prf1(map_binary, mask)
    return ExplanationScore(iou=iou(map_binary, mask.F), precision=precision, recall=recall, f1=f1)


def evaluate_explanations(
    maps: Union[SaliencyMap, Tensor, np.ndarray],
    masks: AnnotationMask,
    threshold: float = 0.5,
) -> ExplanationScore:
    """Binarize each map at `threshold` and average the per-sample scores."""
    binary = binarize(maps, threshold)
    if masks.F.ndim == 2:
        return score_sample(binary.reshape(masks.shape), masks)
    n = masks.shape[0]
    binary = binary.reshape(masks.shape)
    scores = [score_sample(binary[i], masks[i]) for i in range(n)]
    if not scores:
        return ExplanationScore()
    return ExplanationScore(
        iou=float(np.mean([s.iou for s in scores])),
        precision=float(np.mean([s.precision for s in scores])),
        recall=float(np.mean([s.recall for s in scores])),
        f1=float(np.mean([s.f1 for s in scores])),
    )
