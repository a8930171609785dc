"""End-to-end directional checks on synthetic data (RES_RUN_SLOW=1)."""
import time

import numpy as np
import pytest

from app.dataset import build_dataset, split
from app.schemas import DatasetRecipe, NoiseSpec, RobustLossConfig, TrainConfig
from app.threshold import ConstraintSet, optimal_threshold
from app.trainer import evaluate, train

SEEDS = [0, 1, 2, 3, 4]
EVAL_EVERY = 5


def _median_scores(variant, parts, **loss):
    train_set, val_set, test_set = parts
    accuracy, ious, f1s = [], [], []
    for seed in SEEDS:
        config = TrainConfig(
            epochs=50,
            learning_rate=1e-3,
            loss=RobustLossConfig(variant=variant, **loss),
            seed=seed,
            eval_every=EVAL_EVERY,
        )
        params, _ = train(config, train_set, val_set)
        result = evaluate(params, test_set)
        accuracy.append(result.accuracy)
        ious.append(result.explanation.iou)
        f1s.append(result.explanation.f1)
    return float(np.median(accuracy)), float(np.median(ious)), float(np.median(f1s))


def _parts(drop):
    recipe = DatasetRecipe(n=500, image_size=64, noise=NoiseSpec(boundary_radius=2, drop_probability=drop, seed=0))
    return split(build_dataset(recipe), (100, 200, 200), seed=0)


@pytest.mark.slow
def test_robust_variants_beat_baseline():
    parts = _parts(0.3)
    base_acc, base_iou, base_f1 = _median_scores("none", parts)
    assert base_acc > 0.9
    for variant in ("res-g", "res-l"):
        acc, iou, f1 = _median_scores(variant, parts)
        assert iou >= 1.2 * base_iou
        assert f1 >= 1.2 * base_f1
        if variant == "res-g":
            assert acc >= base_acc


@pytest.mark.slow
def test_heavy_noise_ordering():
    parts = _parts(0.5)
    _, res_iou, _ = _median_scores("res-g", parts)
    for variant in ("gradia", "haics"):
        assert res_iou >= _median_scores(variant, parts)[1]


@pytest.mark.slow
def test_learnable_variant_is_robust_to_slack():
    parts = _parts(0.3)
    _, base_iou, _ = _median_scores("none", parts)
    wins = sum(_median_scores("res-l", parts, alpha=alpha)[1] > base_iou for alpha in (1e-3, 1e-2, 1e-1))
    assert wins >= 2


@pytest.mark.slow
def test_threshold_search_scales_log_linearly():
    rng = np.random.default_rng(0)

    def timed(m):
        values = rng.uniform(size=m)
        constraints = ConstraintSet(ge_values=values[: m // 2], le_values=values[m // 2:])
        start = time.perf_counter()
        for _ in range(5):
            optimal_threshold(constraints)
        return time.perf_counter() - start

    for m in (10 ** 3, 10 ** 4, 10 ** 5):
        timed(m)  # warm up
        assert timed(2 * m) / timed(m) < 3
