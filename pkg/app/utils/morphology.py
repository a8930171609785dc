import numpy as np
from scipy import ndimage


def square(radius: int) -> np.ndarray:
    size = 2 * abs(radius) + 1
    return np.ones((size, size), dtype=bool)


def grow_or_shrink(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilate by `radius` when positive, erode by `-radius` when negative.

    Square structuring element. Pixels outside the image count as 0, so
    erosion also eats in from the image border.
    """
    mask = np.asarray(mask).astype(bool)
    if radius == 0 or not mask.any():
        return mask.astype(np.uint8)
    if radius > 0:
        out = ndimage.binary_dilation(mask, structure=square(radius))
    else:
        out = ndimage.binary_erosion(mask, structure=square(radius), border_value=0)
    return out.astype(np.uint8)


def connected_regions(mask: np.ndarray):
    """Label 8-connected regions; returns (labels, count)."""
    return ndimage.label(np.asarray(mask).astype(bool), structure=np.ones((3, 3), dtype=bool))


def drop_regions(mask: np.ndarray, probability: float, rng: np.random.Generator) -> np.ndarray:
    """Remove each connected region independently with `probability`.

    One draw per region, in label order.
    """
    labels, count = connected_regions(mask)
    keep = np.asarray(mask).astype(bool).copy()
    for region in range(1, count + 1):
        if rng.random() < probability:
            keep[labels == region] = False
    return keep.astype(np.uint8)
