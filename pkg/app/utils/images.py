"""PNG helpers shared by dataset storage and heatmap export."""
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

PathLike = Union[str, Path]


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(values, 0.0, 1.0)).astype(np.uint8)


def write_image(path: PathLike, image: np.ndarray) -> None:
    """Write a C x H x W image in [0, 1] as 8-bit gray (C=1) or RGB (C=3)."""
    if image.ndim == 3 and image.shape[0] == 1:
        pixels = to_uint8(image[0])
    elif image.ndim == 3 and image.shape[0] == 3:
        pixels = to_uint8(np.transpose(image, (1, 2, 0)))
    elif image.ndim == 2:
        pixels = to_uint8(image)
    else:
        raise ValueError(f"cannot write image with shape {image.shape}")
    Image.fromarray(pixels).save(path, format="PNG")


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask).astype(np.uint8) * 255)).save(path, format="PNG")


def read_image(path: PathLike) -> np.ndarray:
    """Read an 8-bit PNG as C x H x W float64 in [0, 1]; gray stays one channel."""
    with Image.open(path) as img:
        img.load()
        if img.mode in ("L", "1", "P", "I", "I;16"):
            img = img.convert("L")
            arr = np.asarray(img, dtype=np.float64)[None]
        else:
            arr = np.transpose(np.asarray(img.convert("RGB"), dtype=np.float64), (2, 0, 1))
    return arr / 255.0


def read_mask(path: PathLike) -> np.ndarray:
    """8-bit gray mask, >= 128 means set."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr >= 128).astype(np.uint8)


__all__ = ["read_image", "read_mask", "write_image", "write_mask", "to_uint8", "UnidentifiedImageError"]
