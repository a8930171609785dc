"""Imputation h(F, C): binary annotation masks -> continuous target in [0, 1].

Two families:
  * gaussian  - fixed k x k normalized Gaussian blur, clamp(G*F - G*C, 0, 1),
                at mask (input) resolution.
  * learnable - convolution stack over the 2-channel (F, C) image, sigmoid
                output, landing on the saliency native resolution. The shallow
                form is one layer (kernel 2s, stride s, padding s/2 for a
                downscale factor s); the deep form is five layers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import ndimage

from . import functional as F
from .annotations import AnnotationMask
from .schemas import ImputationConfig
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

PREFIX = "imp."


@dataclass(frozen=True)
class ConvLayer:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int


@dataclass
class ImputationParams:
    variant: str  # gaussian | learnable-shallow | learnable-deep
    kernel_size: int = 5
    sigma: float = 1.5
    phi: Dict[str, Tensor] = field(default_factory=dict)


def gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    if k % 2 == 0 or k < 1:
        raise ValueError(f"gaussian kernel size must be odd, got {k}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(k) - k // 2
    g = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def gaussian_impute(mask: AnnotationMask, k: int, sigma: float) -> np.ndarray:
    """clamp(G*F - G*C, 0, 1) with same-size zero-padded convolution."""
    kernel = gaussian_kernel(k, sigma)
    if mask.F.ndim == 3:
        kernel = kernel[None]
    blur_f = ndimage.correlate(mask.F.astype(np.float64), kernel, mode="constant", cval=0.0)
    blur_c = ndimage.correlate(mask.C.astype(np.float64), kernel, mode="constant", cval=0.0)
    return np.clip(blur_f - blur_c, 0.0, 1.0)


def _downscale_factor(in_hw: Tuple[int, int], out_hw: Tuple[int, int]) -> int:
    (h, w), (oh, ow) = in_hw, out_hw
    if h % oh or w % ow or h // oh != w // ow:
        raise ShapeError(f"mask {h}x{w} does not reduce to {oh}x{ow} by one integer factor")
    return h // oh


def imputation_layers(depth: str, in_hw: Tuple[int, int], out_hw: Tuple[int, int], width: int = 8) -> List[ConvLayer]:
    """Layer geometry that maps in_hw onto out_hw exactly."""
    s = _downscale_factor(in_hw, out_hw)
    if depth == "shallow":
        if s % 2:
            raise ShapeError(f"shallow imputation needs an even downscale factor, got {s}")
        return [ConvLayer(2, 1, 2 * s, s, s // 2)]
    if depth != "deep":
        raise ValueError(f"unknown imputation depth {depth!r}")
    halvings = int(round(np.log2(s)))
    if 2 ** halvings != s or halvings > 4:
        raise ShapeError(f"deep imputation needs a downscale factor in {{1, 2, 4, 8, 16}}, got {s}")
    layers = [ConvLayer(2, width, 7, 1, 3)]
    for idx in range(4):
        out_ch = 1 if idx == 3 else width
        if idx < halvings:
            layers.append(ConvLayer(width, out_ch, 4, 2, 1))
        else:
            layers.append(ConvLayer(width, out_ch, 3, 1, 1))
    return layers


def init_imputation_params(
    config: ImputationConfig,
    in_hw: Tuple[int, int],
    out_hw: Tuple[int, int],
    seed: int,
) -> Dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    phi: Dict[str, Tensor] = {}
    for idx, layer in enumerate(imputation_layers(config.learnable_depth, in_hw, out_hw, config.deep_width)):
        fan_in = layer.in_channels * layer.kernel * layer.kernel
        bound = np.sqrt(6.0 / fan_in)
        shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        phi[f"{PREFIX}conv{idx}.weight"] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
        phi[f"{PREFIX}conv{idx}.bias"] = Tensor(np.zeros(layer.out_channels), requires_grad=True)
    return phi


def make_imputation(
    loss_variant: str,
    config: ImputationConfig,
    in_hw: Tuple[int, int],
    out_hw: Tuple[int, int],
    seed: int,
) -> Optional[ImputationParams]:
    """Imputation settings for a supervision variant (None for variants without one)."""
    if loss_variant == "res-g":
        return ImputationParams("gaussian", config.gaussian_kernel, config.gaussian_sigma)
    if loss_variant == "res-l":
        phi = init_imputation_params(config, in_hw, out_hw, seed)
        return ImputationParams(f"learnable-{config.learnable_depth}", phi=phi)
    return None


def _stack_channels(mask: AnnotationMask) -> np.ndarray:
    f, c = mask.F, mask.C
    if f.ndim == 2:
        f, c = f[None], c[None]
    return np.stack([f, c], axis=1).astype(np.float64)


def learnable_impute(
    mask: AnnotationMask,
    phi: Mapping[str, Tensor],
    out_hw: Tuple[int, int],
    depth: Optional[str] = None,
) -> Tensor:
    """h_phi(F, C) as an N x 1 x h x w tensor, differentiable w.r.t. phi."""
    count = 0
    while f"{PREFIX}conv{count}.weight" in phi:
        count += 1
    if depth is None:
        depth = {1: "shallow", 5: "deep"}.get(count)
        if depth is None:
            raise ShapeError(f"imputation parameters hold {count} layers; expected 1 or 5")
    width = phi[f"{PREFIX}conv0.weight"].shape[0]
    layers = imputation_layers(depth, mask.shape[-2:], out_hw, width)
    if len(layers) != count:
        raise ShapeError(f"{depth} imputation needs {len(layers)} layers, parameters hold {count}")

    x = Tensor(_stack_channels(mask))
    for idx, layer in enumerate(layers):
        weight = phi[f"{PREFIX}conv{idx}.weight"]
        expected = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
        if weight.shape != expected:
            raise ShapeError(f"imputation layer {idx} kernel {weight.shape} != expected {expected}")
        x = F.conv2d(x, weight, phi[f"{PREFIX}conv{idx}.bias"], stride=layer.stride, padding=layer.padding)
        if idx < len(layers) - 1:
            x = F.relu(x)
    if x.shape[-2:] != tuple(out_hw):
        raise ShapeError(f"imputation output {x.shape[-2:]} does not match saliency resolution {tuple(out_hw)}")
    return F.sigmoid(x)
