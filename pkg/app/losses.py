"""Explanation supervision losses.

res        - hinge on the tanh-surrogate binarization mismatch with slack alpha
             at input resolution, plus L1 distance to the imputed target,
             both restricted to labeled pixels (F or C) and averaged per
             sample. Learnable imputation takes the distance at native
             resolution.
gradia     - mean L1 between the map and the positive mask over all pixels.
haics      - BCE over labeled pixels, target 1 on F and 0 on C.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from . import functional as F
from .annotations import AnnotationMask, downsample_mask
from .saliency import SaliencyMap
from .schemas import RobustLossConfig
from .tensor import ShapeError, Tensor

BCE_EPS = 1e-7


@dataclass
class ResLossTerms:
    total: Tensor
    hinge: float
    distance: float


def comparison_map(saliency: SaliencyMap, variant: str) -> Tensor:
    """Map the distance term is taken on: native for learnable imputation, full otherwise."""
    return saliency.native if variant == "res-l" else saliency.full


def _align(m: Tensor, mask: AnnotationMask) -> AnnotationMask:
    h, w = m.shape[-2:]
    if mask.shape[-2:] != (h, w):
        mask = downsample_mask(mask, h, w)
    if mask.F.ndim == 2:
        mask = AnnotationMask(mask.F[None], mask.C[None])
    if (m.shape[0], 1, h, w) != (mask.shape[0], 1) + mask.shape[-2:]:
        raise ShapeError(f"map shape {m.shape} does not align with mask shape {mask.shape}")
    return mask


def _per_sample_threshold(a: Union[float, np.ndarray], n: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = np.full(n, float(a))
    if a.shape != (n,):
        raise ShapeError(f"threshold must be a scalar or one value per sample, got shape {a.shape}")
    return a.reshape(n, 1, 1, 1)


def _labeled(mask: AnnotationMask) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(H as N x 1 x h x w, labeled indicator, per-sample label count)."""
    h_vals = mask.H.astype(np.float64)[:, None]
    labeled = (h_vals != 0).astype(np.float64)
    return h_vals, labeled, labeled.reshape(mask.shape[0], -1).sum(axis=1)


def res_loss_terms(
    m: Tensor,
    mask: AnnotationMask,
    a: Union[float, np.ndarray],
    imputed: Union[Tensor, np.ndarray],
    cfg: RobustLossConfig,
    distance_map: Optional[Tensor] = None,
) -> ResLossTerms:
    """Per-sample hinge on `m` plus L1 distance of `distance_map` (default `m`) to `imputed`.

    Each term averages over the labeled pixels of the mask at its own resolution.
    """
    d_map = m if distance_map is None else distance_map
    hinge_mask = _align(m, mask)
    d_mask = _align(d_map, mask)
    n = m.shape[0]
    target = imputed if isinstance(imputed, Tensor) else Tensor(imputed)
    if target.shape != d_map.shape:
        target = F.reshape(target, d_map.shape) if target.size == d_map.size else target
    if target.shape != d_map.shape:
        raise ShapeError(f"imputed target shape {target.shape} != map shape {d_map.shape}")

    h_vals, labeled, counts = _labeled(hinge_mask)
    projected = F.tanh((m - _per_sample_threshold(a, n)) * cfg.gamma)
    mismatch = F.sum(F.abs(projected - h_vals) * labeled, axis=(1, 2, 3)) / np.maximum(counts, 1.0)
    hinge = F.relu(mismatch - cfg.alpha) * (counts > 0).astype(np.float64)

    _, d_labeled, d_counts = _labeled(d_mask)
    distance = F.sum(F.abs(d_map - target) * d_labeled, axis=(1, 2, 3)) / np.maximum(d_counts, 1.0)
    total = F.mean(hinge + distance)
    return ResLossTerms(total=total, hinge=float(hinge.data.mean()), distance=float(distance.data.mean()))


def res_loss(
    saliency: Union[SaliencyMap, Tensor],
    mask: AnnotationMask,
    a: Union[float, np.ndarray],
    imputed: Union[Tensor, np.ndarray],
    cfg: RobustLossConfig,
) -> Tensor:
    """The hinge always uses the full-resolution map; see `comparison_map` for the distance."""
    if isinstance(saliency, SaliencyMap):
        return res_loss_terms(saliency.full, mask, a, imputed, cfg, comparison_map(saliency, cfg.variant)).total
    return res_loss_terms(saliency, mask, a, imputed, cfg).total


def indicator_hinge(
    values: np.ndarray,
    mask: AnnotationMask,
    a: Union[float, np.ndarray],
    alpha: float,
) -> np.ndarray:
    """Per-sample hinge with the exact binary projection (1 if M >= a else -1)."""
    values = np.asarray(values, dtype=np.float64)
    if mask.F.ndim == 2:
        values, f, c = values.reshape((1,) + mask.shape), mask.F[None], mask.C[None]
    else:
        values, f, c = values.reshape(mask.shape), mask.F, mask.C
    n = values.shape[0]
    a = np.asarray(a, dtype=np.float64)
    a = np.full(n, float(a)) if a.ndim == 0 else a
    projected = np.where(values >= a.reshape(n, 1, 1), 1.0, -1.0)
    h_vals = f.astype(np.float64) - c.astype(np.float64)
    labeled = h_vals != 0
    counts = labeled.reshape(n, -1).sum(axis=1)
    mismatch = (np.abs(projected - h_vals) * labeled).reshape(n, -1).sum(axis=1) / np.maximum(counts, 1)
    return np.where(counts > 0, np.maximum(0.0, mismatch - alpha), 0.0)


def gradia_loss(saliency: Union[SaliencyMap, Tensor], mask: AnnotationMask) -> Tensor:
    """Mean over all pixels of |M - F|."""
    m = saliency.full if isinstance(saliency, SaliencyMap) else saliency
    mask = _align(m, mask)
    return F.mean(F.abs(m - mask.F.astype(np.float64)[:, None]))


def haics_loss(saliency: Union[SaliencyMap, Tensor], mask: AnnotationMask) -> Tensor:
    """BCE over labeled pixels; unlabeled pixels are excluded."""
    m = saliency.full if isinstance(saliency, SaliencyMap) else saliency
    mask = _align(m, mask)
    f = mask.F.astype(np.float64)[:, None]
    labeled = (mask.labeled.astype(np.float64))[:, None]
    count = labeled.sum()
    if count == 0:
        return F.sum(m * 0.0)
    p = F.clamp(m, BCE_EPS, 1.0 - BCE_EPS)
    per_pixel = -(F.log(p) * f + F.log(1.0 - p) * (1.0 - f))
    return F.sum(per_pixel * labeled) / count


def total_objective(pred_loss: Tensor, exp_loss: Union[Tensor, float], lambda_exp: float) -> Tensor:
    """Prediction loss plus weighted explanation loss."""
    return pred_loss + exp_loss * lambda_exp
