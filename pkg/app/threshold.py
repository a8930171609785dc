"""Adaptive binarization threshold.

Each labeled pixel gives one constraint on the threshold a:
  F-pixel with value v is satisfied when v >= a   (le_values)
  C-pixel with value v is satisfied when v <  a   (ge_values)
`optimal_threshold` returns an a that satisfies the most constraints. The
satisfied count only changes at constraint values, so an optimum is always
one of: an F value itself, or the next float above a C value. Candidates are
scored with binary searches over the two sorted lists, O(m log m) overall.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .annotations import AnnotationMask

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
BRUTE_FORCE_LIMIT = 10_000


@dataclass
class ConstraintSet:
    ge_values: np.ndarray = field(default_factory=lambda: np.zeros(0))  # C pixels, need a > v
    le_values: np.ndarray = field(default_factory=lambda: np.zeros(0))  # F pixels, need a <= v

    def __post_init__(self) -> None:
        self.ge_values = np.asarray(self.ge_values, dtype=np.float64).reshape(-1)
        self.le_values = np.asarray(self.le_values, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.ge_values.size + self.le_values.size

    def satisfied(self, a: float) -> int:
        return int((self.le_values >= a).sum() + (self.ge_values < a).sum())


def constraints_from_maps(values: np.ndarray, mask: AnnotationMask) -> ConstraintSet:
    """Pool the constraints of every labeled pixel in `values` (same shape as the masks)."""
    values = np.asarray(values, dtype=np.float64).reshape(mask.shape)
    return ConstraintSet(ge_values=values[mask.C.astype(bool)], le_values=values[mask.F.astype(bool)])


def per_sample_constraints(values: np.ndarray, mask: AnnotationMask) -> List[ConstraintSet]:
    values = np.asarray(values, dtype=np.float64).reshape(mask.shape)
    return [constraints_from_maps(values[i], mask[i]) for i in range(mask.shape[0])]


def _counts(candidates: np.ndarray, ge_sorted: np.ndarray, le_sorted: np.ndarray) -> np.ndarray:
    satisfied_le = le_sorted.size - np.searchsorted(le_sorted, candidates, side="left")
    satisfied_ge = np.searchsorted(ge_sorted, candidates, side="left")
    return satisfied_le + satisfied_ge


def optimal_threshold(constraints: ConstraintSet) -> float:
    """Threshold maximizing the satisfied-constraint count (0.5 when empty)."""
    if len(constraints) == 0:
        return DEFAULT_THRESHOLD
    ge_sorted = np.sort(constraints.ge_values)  # ascending
    le_sorted = np.sort(constraints.le_values)
    # F values scanned descending, then C values (shifted up one ulp) ascending
    candidates = np.concatenate([le_sorted[::-1], np.nextafter(ge_sorted, np.inf)])
    counts = _counts(candidates, ge_sorted, le_sorted)
    best = int(np.argmax(counts))  # first maximizer
    return float(candidates[best])


def brute_force_threshold(constraints: ConstraintSet) -> Tuple[float, int]:
    """Reference solver: score every candidate directly."""
    if len(constraints) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} constraints, got {len(constraints)}")
    values = np.concatenate([constraints.ge_values, constraints.le_values])
    candidates = np.concatenate([[DEFAULT_THRESHOLD], values, np.nextafter(values, np.inf)])
    best_a, best_count = DEFAULT_THRESHOLD, -1
    for a in candidates:
        count = constraints.satisfied(float(a))
        if count > best_count:
            best_a, best_count = float(a), count
    return best_a, best_count
