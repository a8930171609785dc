import os

import numpy as np
import pytest

from app.dataset import corrupt_dataset, generate_synthetic
from app.schemas import BackboneConfig, NoiseSpec, RobustLossConfig, TrainConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs, enabled with RES_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("RES_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RES_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_backbone():
    # 32x32 input, two blocks -> 8x8 native saliency
    return BackboneConfig(in_channels=1, height=32, width=32, widths=[4, 8], kernel_sizes=[3, 3], seed=0)


@pytest.fixture
def tiny_dataset():
    data = generate_synthetic(24, image_size=32, class_count=2, seed=3, distractors=2)
    return corrupt_dataset(data, NoiseSpec(boundary_radius=1, drop_probability=0.2, seed=5))


@pytest.fixture
def tiny_config(tiny_backbone):
    def make(variant="none", **loss):
        return TrainConfig(
            epochs=2,
            learning_rate=1e-3,
            batch_size=8,
            backbone=tiny_backbone,
            loss=RobustLossConfig(variant=variant, **loss),
            seed=0,
        )

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
