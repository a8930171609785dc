"""Binary positive/negative annotation masks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


def _as_binary(mask: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be {{0,1}}-valued")
    return arr.astype(np.uint8)


@dataclass
class AnnotationMask:
    """F marks pixels that should be important, C pixels that should not.

    Arrays are H x W for one sample or N x H x W for a batch. `F_clean` and
    `C_clean` hold the exact masks when they are known (synthetic data).
    """

    F: np.ndarray
    C: np.ndarray
    F_clean: Optional[np.ndarray] = None
    C_clean: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.F = _as_binary(self.F, "F")
        self.C = _as_binary(self.C, "C")
        if self.F.shape != self.C.shape:
            raise ValueError(f"F shape {self.F.shape} != C shape {self.C.shape}")
        if (self.F & self.C).any():
            raise ValueError("F and C must be disjoint")
        if self.F_clean is not None:
            self.F_clean = _as_binary(self.F_clean, "F_clean")
            self.C_clean = _as_binary(
                self.C_clean if self.C_clean is not None else np.zeros_like(self.F_clean), "C_clean"
            )
            if (self.F_clean & self.C_clean).any():
                raise ValueError("clean F and C must be disjoint")

    @property
    def H(self) -> np.ndarray:
        """F - C, valued in {-1, 0, 1}."""
        return self.F.astype(np.int8) - self.C.astype(np.int8)

    @property
    def labeled(self) -> np.ndarray:
        return (self.F | self.C).astype(bool)

    @property
    def shape(self) -> tuple:
        return self.F.shape

    @property
    def has_clean(self) -> bool:
        return self.F_clean is not None

    def clean(self) -> "AnnotationMask":
        """The exact masks when known, otherwise the annotation itself."""
        if self.F_clean is None:
            return AnnotationMask(self.F, self.C)
        return AnnotationMask(self.F_clean, self.C_clean)

    def __getitem__(self, index: int) -> "AnnotationMask":
        if self.F.ndim != 3:
            raise TypeError("only batched masks can be indexed")
        return AnnotationMask(
            self.F[index],
            self.C[index],
            None if self.F_clean is None else self.F_clean[index],
            None if self.C_clean is None else self.C_clean[index],
        )

    def __len__(self) -> int:
        return self.F.shape[0] if self.F.ndim == 3 else 1

    @classmethod
    def stack(cls, masks: Sequence["AnnotationMask"]) -> "AnnotationMask":
        all_clean = all(m.has_clean for m in masks)
        return cls(
            np.stack([m.F for m in masks]),
            np.stack([m.C for m in masks]),
            np.stack([m.F_clean for m in masks]) if all_clean else None,
            np.stack([m.C_clean for m in masks]) if all_clean else None,
        )


def _block_majority(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape[-2:]
    if h % out_h or w % out_w:
        raise ValueError(f"mask {h}x{w} cannot be reduced to {out_h}x{out_w} blocks")
    bh, bw = h // out_h, w // out_w
    lead = mask.shape[:-2]
    blocks = mask.reshape(*lead, out_h, bh, out_w, bw).astype(np.float64)
    return (blocks.mean(axis=(-3, -1)) >= 0.5).astype(np.uint8)


def downsample_mask(mask: AnnotationMask, out_h: int, out_w: int) -> AnnotationMask:
    """Block-majority reduction of F and C; F wins where both reach a majority."""
    if mask.shape[-2:] == (out_h, out_w):
        return mask
    f = _block_majority(mask.F, out_h, out_w)
    c = _block_majority(mask.C, out_h, out_w) & (1 - f)
    fc = cc = None
    if mask.has_clean:
        fc = _block_majority(mask.F_clean, out_h, out_w)
        cc = _block_majority(mask.C_clean, out_h, out_w) & (1 - fc)
    return AnnotationMask(f, c, fc, cc)
