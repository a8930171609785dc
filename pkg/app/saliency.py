"""CAM saliency for the GAP-headed backbone, plus heatmap export.

raw = relu(sum_k w[k, class] * A_k), divided by its per-sample maximum. By
default the maximum is taken from the forward values and enters the backward
pass as a constant; training can keep it in the graph instead. Maps are
normalized at native resolution, then upsampled.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from . import functional as F
from .model import ModelParams, one_hot
from .tensor import Tensor
from .utils.images import to_uint8

logger = logging.getLogger(__name__)


@dataclass
class SaliencyMap:
    native: Tensor  # N x 1 x h x w
    full: Tensor  # N x 1 x H x W
    target_class: np.ndarray
    normalizer: Optional[np.ndarray] = None  # per-sample max used for scaling

    def __len__(self) -> int:
        return self.native.shape[0]


def compute_saliency(
    params: ModelParams,
    activations: Tensor,
    target_class: np.ndarray,
    out_hw: Optional[tuple] = None,
    normalizer: Optional[np.ndarray] = None,
    max_gradient: bool = False,
) -> SaliencyMap:
    """CAM map for each sample's target class.

    `normalizer` overrides the per-sample max (shape N); used to hold the
    scale fixed when comparing against finite differences. With
    `max_gradient` the per-sample max stays in the graph instead, so a
    uniform rescaling of the raw map has zero gradient.
    """
    head = params["fc.weight"]  # K x classes
    n, k, h, w = activations.shape
    target_class = np.asarray(target_class, dtype=np.int64)
    selector = one_hot(target_class, head.shape[1])
    class_weights = F.matmul(selector, F.transpose(head))  # N x K
    weighted = activations * F.reshape(class_weights, (n, k, 1, 1))
    raw = F.relu(F.sum(weighted, axis=1, keepdims=True))

    if normalizer is None and max_gradient:
        peak = F.sample_max(raw)
        native = raw / (peak + (peak.data <= 0).astype(np.float64))  # all-zero maps stay zero
        normalizer = peak.data.reshape(n)
    else:
        if normalizer is None:
            normalizer = raw.data.reshape(n, -1).max(axis=1)
        scale = np.where(normalizer > 0, normalizer, 1.0).reshape(n, 1, 1, 1)
        native = raw / scale

    if out_hw is None:
        full = native
    else:
        full = F.upsample_bilinear(native, out_hw[0], out_hw[1])
    return SaliencyMap(native=native, full=full, target_class=target_class, normalizer=np.asarray(normalizer))


def binarize(saliency: Union[SaliencyMap, np.ndarray, Tensor], threshold: float = 0.5) -> np.ndarray:
    """1 where the (full-resolution) value is >= threshold, else 0."""
    if isinstance(saliency, SaliencyMap):
        values = saliency.full.data
    elif isinstance(saliency, Tensor):
        values = saliency.data
    else:
        values = np.asarray(saliency, dtype=np.float64)
    return (values >= threshold).astype(np.uint8)


def save_heatmap(values: np.ndarray, path: Union[str, Path]) -> None:
    """8-bit grayscale PNG with pixel = round(255 * M)."""
    Image.fromarray(to_uint8(np.asarray(values).reshape(values.shape[-2:]))).save(path, format="PNG")


def annotation_panel(f: np.ndarray, c: np.ndarray) -> np.ndarray:
    panel = np.zeros(f.shape, dtype=np.uint8)
    panel[c.astype(bool)] = 96
    panel[f.astype(bool)] = 255
    return panel


def save_panel_grid(image: np.ndarray, f: np.ndarray, c: np.ndarray, saliency: np.ndarray, path: Union[str, Path]) -> None:
    """Side-by-side grayscale panels: input | annotation (F=255, C=96) | saliency."""
    gray = image.mean(axis=0) if image.ndim == 3 else image
    panels = [to_uint8(gray), annotation_panel(f, c), to_uint8(saliency)]
    h = panels[0].shape[0]
    gap = np.full((h, 2), 255, dtype=np.uint8)
    grid = np.concatenate([panels[0], gap, panels[1], gap, panels[2]], axis=1)
    Image.fromarray(grid).save(path, format="PNG")
