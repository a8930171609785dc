"""Image datasets with explanation annotations.

Synthetic data: every image holds one class-specific shape (F) and a few
distractor squares shared by all classes (C), over low-amplitude noise. The
exact masks are kept next to the noisy annotations produced by
`corrupt_annotations`.

On disk a dataset is a directory:
  images/<id>.png            8-bit gray or RGB
  masks_pos/<id>.png         8-bit gray, >= 128 means set
  masks_neg/<id>.png         optional
  masks_pos_clean/<id>.png   optional, synthetic data only
  masks_neg_clean/<id>.png   optional
  labels.csv                 header `id,label`
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .annotations import AnnotationMask
from .schemas import DatasetRecipe, NoiseSpec, SplitSizes
from .utils import images as png
from .utils.morphology import drop_regions, grow_or_shrink

logger = logging.getLogger(__name__)

SHAPES = ("disk", "cross", "triangle", "ring")
LABELS_FILE = "labels.csv"
IMAGES_DIR = "images"
POS_DIR = "masks_pos"
NEG_DIR = "masks_neg"
POS_CLEAN_DIR = "masks_pos_clean"
NEG_CLEAN_DIR = "masks_neg_clean"


class DatasetError(ValueError):
    """A dataset file is missing, unreadable or inconsistent."""


@dataclass
class Sample:
    image: np.ndarray  # C x H x W in [0, 1]
    label: int
    mask: AnnotationMask  # H x W
    id: str


@dataclass
class Dataset:
    samples: List[Sample] = field(default_factory=list)
    source: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    def __iter__(self):
        return iter(self.samples)

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        if not self.samples:
            raise DatasetError("dataset is empty")
        return tuple(self.samples[0].image.shape)

    @property
    def has_clean(self) -> bool:
        return bool(self.samples) and all(s.mask.has_clean for s in self.samples)

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, AnnotationMask]:
        chosen = [self.samples[i] for i in indices]
        images = np.stack([s.image for s in chosen])
        labels = np.array([s.label for s in chosen], dtype=np.int64)
        return images, labels, AnnotationMask.stack([s.mask for s in chosen])

    def subset(self, indices: Sequence[int], source: Optional[str] = None) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], source or self.source)


# ---------------------------------------------------------------- synthetic
def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, cx: int, cy: int, r: int) -> None:
    if shape == "disk":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=255)
    elif shape == "cross":
        t = max(2, r // 3)
        draw.rectangle([cx - r, cy - t, cx + r, cy + t], fill=255)
        draw.rectangle([cx - t, cy - r, cx + t, cy + r], fill=255)
    elif shape == "triangle":
        draw.polygon([(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)], fill=255)
    elif shape == "ring":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=255)
        inner = max(1, r // 2)
        draw.ellipse([cx - inner, cy - inner, cx + inner, cy + inner], fill=0)
    else:
        raise ValueError(f"unknown shape {shape!r}")


def _layer(size: int, paint) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    paint(ImageDraw.Draw(canvas))
    return (np.asarray(canvas) >= 128).astype(np.uint8)


def _synthetic_sample(index: int, label: int, size: int, distractors: int, rng: np.random.Generator) -> Sample:
    r = int(rng.integers(size // 10, size // 6 + 1))
    cx = int(rng.integers(r + 1, size - r - 1))
    cy = int(rng.integers(r + 1, size - r - 1))
    shape = SHAPES[label]
    f_clean = _layer(size, lambda d: _draw_shape(d, shape, cx, cy, r))

    c_clean = np.zeros_like(f_clean)
    for _ in range(distractors):
        side = int(rng.integers(size // 16 + 2, size // 8 + 3))
        x0 = int(rng.integers(0, size - side))
        y0 = int(rng.integers(0, size - side))
        c_clean |= _layer(size, lambda d: d.rectangle([x0, y0, x0 + side - 1, y0 + side - 1], fill=255))
    c_clean &= 1 - f_clean

    image = rng.uniform(0.0, 0.2, size=(size, size))
    image[c_clean.astype(bool)] = rng.uniform(0.6, 1.0)
    image[f_clean.astype(bool)] = rng.uniform(0.6, 1.0)
    image = np.round(image * 255.0) / 255.0  # exactly representable as 8-bit

    mask = AnnotationMask(f_clean, c_clean, f_clean.copy(), c_clean.copy())
    return Sample(image=image[None], label=label, mask=mask, id=f"{index:05d}")


def generate_synthetic(
    n: int,
    image_size: int = 64,
    class_count: int = 2,
    seed: int = 0,
    distractors: int = 2,
) -> Dataset:
    """Balanced synthetic dataset; bit-identical for the same arguments."""
    if image_size < 32:
        raise ValueError(f"image_size must be at least 32, got {image_size}")
    if not 2 <= class_count <= len(SHAPES):
        raise ValueError(f"class_count must lie in [2, {len(SHAPES)}], got {class_count}")
    children = np.random.SeedSequence(seed).spawn(n)
    samples = [
        _synthetic_sample(i, i % class_count, image_size, distractors, np.random.default_rng(children[i]))
        for i in range(n)
    ]
    logger.info(f"Generated {n} synthetic samples ({image_size}x{image_size}, {class_count} classes, seed {seed})")
    return Dataset(samples, source=f"synthetic(seed={seed})")


# ------------------------------------------------------------------- noise
def _corrupt(clean: AnnotationMask, spec: NoiseSpec, rng: np.random.Generator) -> AnnotationMask:
    f_true = clean.F_clean if clean.has_clean else clean.F
    c_true = clean.C_clean if clean.has_clean else clean.C
    f = drop_regions(grow_or_shrink(f_true, spec.boundary_radius), spec.drop_probability, rng)
    c = drop_regions(grow_or_shrink(c_true, spec.boundary_radius), spec.drop_probability, rng)
    c &= 1 - f
    return AnnotationMask(f, c, f_true, c_true)


def corrupt_annotations(clean: AnnotationMask, spec: NoiseSpec) -> AnnotationMask:
    """Boundary dilation/erosion then connected-region dropout, for F and C.

    The result keeps the exact masks as its clean pair. Overlap created by
    the boundary change is removed from C.
    """
    return _corrupt(clean, spec, np.random.default_rng(spec.seed))


def corrupt_dataset(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """Corrupt every sample with its own seed derived from `spec.seed`."""
    children = np.random.SeedSequence(spec.seed).spawn(len(dataset))
    samples = [
        Sample(s.image, s.label, _corrupt(s.mask, spec, np.random.default_rng(child)), s.id)
        for s, child in zip(dataset.samples, children)
    ]
    logger.info(
        f"Corrupted {len(samples)} annotations (boundary {spec.boundary_radius}, drop {spec.drop_probability})"
    )
    return Dataset(samples, source=dataset.source)


def build_dataset(recipe: DatasetRecipe) -> Dataset:
    data = generate_synthetic(recipe.n, recipe.image_size, recipe.class_count, recipe.seed, recipe.distractors)
    return corrupt_dataset(data, recipe.noise)


# ------------------------------------------------------------------ splits
def _interleaved(dataset: Dataset, rng: Optional[np.random.Generator]) -> List[int]:
    by_class: Dict[int, List[int]] = {}
    for idx, sample in enumerate(dataset.samples):
        by_class.setdefault(sample.label, []).append(idx)
    queues = []
    for label in sorted(by_class):
        members = np.array(by_class[label])
        if rng is not None:
            members = rng.permutation(members)
        queues.append(list(members))
    order: List[int] = []
    depth = max((len(q) for q in queues), default=0)
    for pos in range(depth):
        for queue in queues:
            if pos < len(queue):
                order.append(int(queue[pos]))
    return order


def split(dataset: Dataset, sizes: Union[SplitSizes, Tuple[int, int, int]], seed: int = 0) -> Tuple[Dataset, Dataset, Dataset]:
    """Disjoint class-stratified train/val/test parts, reproducible per seed."""
    if not isinstance(sizes, SplitSizes):
        sizes = SplitSizes(train=sizes[0], val=sizes[1], test=sizes[2])
    total = sizes.train + sizes.val + sizes.test
    if total > len(dataset):
        raise ValueError(f"split sizes {sizes.train}/{sizes.val}/{sizes.test} exceed dataset size {len(dataset)}")
    order = _interleaved(dataset, np.random.default_rng(seed))
    cuts = [0, sizes.train, sizes.train + sizes.val, total]
    names = ("train", "val", "test")
    return tuple(
        dataset.subset(order[cuts[i]:cuts[i + 1]], f"{dataset.source}:{names[i]}") for i in range(3)
    )


def subsample(dataset: Dataset, n: int) -> Dataset:
    """First `n` samples in class-interleaved order (stratified, no randomness)."""
    if n > len(dataset):
        raise ValueError(f"cannot take {n} samples from a dataset of {len(dataset)}")
    return dataset.subset(_interleaved(dataset, None)[:n])


# ----------------------------------------------------------------- storage
def save_dataset(dataset: Dataset, directory: Union[str, Path]) -> Path:
    root = Path(directory)
    dirs = [IMAGES_DIR, POS_DIR, NEG_DIR]
    if dataset.has_clean:
        dirs += [POS_CLEAN_DIR, NEG_CLEAN_DIR]
    for name in dirs:
        (root / name).mkdir(parents=True, exist_ok=True)

    for sample in dataset.samples:
        png.write_image(root / IMAGES_DIR / f"{sample.id}.png", sample.image)
        png.write_mask(root / POS_DIR / f"{sample.id}.png", sample.mask.F)
        png.write_mask(root / NEG_DIR / f"{sample.id}.png", sample.mask.C)
        if dataset.has_clean:
            png.write_mask(root / POS_CLEAN_DIR / f"{sample.id}.png", sample.mask.F_clean)
            png.write_mask(root / NEG_CLEAN_DIR / f"{sample.id}.png", sample.mask.C_clean)

    with open(root / LABELS_FILE, "w", encoding="utf8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        for sample in dataset.samples:
            writer.writerow([sample.id, sample.label])
    logger.info(f"Saved {len(dataset)} samples to {root}")
    return root


def _read_labels(path: Path) -> Dict[str, int]:
    if not path.exists():
        raise DatasetError(f"{path}: labels file not found")
    labels: Dict[str, int] = {}
    with open(path, encoding="utf8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "label"]:
            raise DatasetError(f"{path}: expected header 'id,label', got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DatasetError(f"{path}:{line_no}: expected 2 fields, got {len(row)}")
            try:
                labels[row[0].strip()] = int(row[1])
            except ValueError as exc:
                raise DatasetError(f"{path}:{line_no}: label {row[1]!r} is not an integer") from exc
    return labels


def _load_mask(path: Path, shape: Tuple[int, int], required: bool) -> Optional[np.ndarray]:
    if not path.exists():
        if required:
            raise DatasetError(f"{path}: mask file not found")
        return None
    try:
        mask = png.read_mask(path)
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"{path}: unreadable mask ({exc})") from exc
    if mask.shape != shape:
        raise DatasetError(f"{path}: mask size {mask.shape} does not match image size {shape}")
    return mask


def load_dataset(directory: Union[str, Path]) -> Dataset:
    """Read a dataset directory; samples are ordered lexicographically by id."""
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    labels = _read_labels(root / LABELS_FILE)
    has_clean = (root / POS_CLEAN_DIR).is_dir()

    samples: List[Sample] = []
    channels = None
    for sample_id in sorted(labels):
        image_path = root / IMAGES_DIR / f"{sample_id}.png"
        if not image_path.exists():
            logger.error(f"Missing image for sample {sample_id}")
            raise DatasetError(f"{image_path}: image file not found")
        try:
            image = png.read_image(image_path)
        except (OSError, UnidentifiedImageError) as exc:
            raise DatasetError(f"{image_path}: unreadable image ({exc})") from exc
        if channels is None:
            channels = image.shape[0]
        elif image.shape[0] != channels:
            raise DatasetError(f"{image_path}: {image.shape[0]} channels, earlier images have {channels}")

        hw = image.shape[1:]
        f = _load_mask(root / POS_DIR / f"{sample_id}.png", hw, required=True)
        c = _load_mask(root / NEG_DIR / f"{sample_id}.png", hw, required=False)
        c = np.zeros_like(f) if c is None else c
        f_clean = c_clean = None
        if has_clean:
            f_clean = _load_mask(root / POS_CLEAN_DIR / f"{sample_id}.png", hw, required=True)
            c_clean = _load_mask(root / NEG_CLEAN_DIR / f"{sample_id}.png", hw, required=False)
        try:
            mask = AnnotationMask(f, c, f_clean, c_clean)
        except ValueError as exc:
            raise DatasetError(f"{root / POS_DIR / sample_id}.png: {exc}") from exc
        samples.append(Sample(image=image, label=labels[sample_id], mask=mask, id=sample_id))

    logger.info(f"Loaded {len(samples)} samples from {root}")
    return Dataset(samples, source=str(root))
