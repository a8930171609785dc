import numpy as np
import pytest

from app.annotations import AnnotationMask
from app.dataset import Dataset, Sample, generate_synthetic, split
from app.imputation import init_imputation_params, learnable_impute
from app.model import init_params, load_checkpoint, save_checkpoint
from app.optim import AdamState, adam_step
from app.schemas import BackboneConfig, ImputationConfig, TrainConfig
from app.tensor import ShapeError, Tensor
from app.trainer import TrainingDiverged, _imputation_seed, evaluate, train


def test_adam_zero_gradient_is_fixed_point():
    params = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    state = AdamState.for_params(params)
    adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)}
    state = AdamState.for_params(params)
    adam_step(params, {"w": np.array([3.0, -0.2, 1e-3])}, state, lr=0.01)
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(params["w"].data, [0.99, -1.99, 0.49], atol=1e-6)
    assert state.step == 1


def test_adam_is_deterministic():
    results = []
    for _ in range(2):
        params = {"w": Tensor(np.array([0.3, 0.7]), requires_grad=True)}
        state = AdamState.for_params(params)
        for _ in range(3):
            adam_step(params, {"w": np.array([0.1, -0.4])}, state, lr=0.05)
        results.append(params["w"].data.copy())
    np.testing.assert_array_equal(results[0], results[1])


def test_adam_shape_mismatch_raises():
    params = {"w": Tensor(np.zeros(2), requires_grad=True)}
    state = AdamState.for_params(params)
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, state, lr=0.1)


def test_evaluate_constant_dataset_and_model():
    # head that always prefers class 1
    backbone = BackboneConfig(height=32, width=32, widths=[2, 2], kernel_sizes=[3, 3])
    params = init_params(backbone, seed=0)
    params["fc.weight"].data[:] = 0.0
    params["fc.bias"].data[:] = [0.0, 1.0]
    f = np.zeros((32, 32), dtype=np.uint8)
    samples = [
        Sample(np.full((1, 32, 32), 0.5), 1, AnnotationMask(f, f), f"{i:05d}") for i in range(5)
    ]
    result = evaluate(params, Dataset(samples))
    assert result.accuracy == 1.0
    assert evaluate(params, Dataset(samples)) == result


def _parts(dataset):
    return split(dataset, (12, 6, 6), seed=0)


def test_training_is_reproducible(tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    config = tiny_config("res-g")
    first, report_a = train(config, train_set, val_set)
    second, report_b = train(config, train_set, val_set)
    for name in first:
        np.testing.assert_array_equal(first[name].data, second[name].data)
    assert [r.model_dump() for r in report_a.epochs] == [r.model_dump() for r in report_b.epochs]
    assert len(report_a.epochs) == 2
    assert 1 <= report_a.best_epoch <= 2


def test_zero_lambda_gates_every_variant(tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    reference, _ = train(tiny_config("none", lambda_exp=0.0), train_set, val_set)
    for variant in ("gradia", "haics", "res-g", "res-l"):
        params, report = train(tiny_config(variant, lambda_exp=0.0), train_set, val_set)
        for name in reference:
            np.testing.assert_array_equal(params[name].data, reference[name].data)
        assert all(r.exp_loss == 0.0 for r in report.epochs)


@pytest.mark.parametrize("variant", ["gradia", "haics", "res-g", "res-l"])
def test_explanation_variants_record_losses(variant, tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    _, report = train(tiny_config(variant), train_set, val_set)
    record = report.epochs[-1]
    assert np.isfinite(record.exp_loss) and record.exp_loss > 0.0
    assert 0.0 <= record.val_iou <= 1.0
    if variant.startswith("res"):
        assert 0.0 <= record.threshold <= 1.0 + 1e-12
        assert record.hinge >= 0.0 and record.exact_hinge >= 0.0


def test_sample_threshold_scope(tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    _, report = train(tiny_config("res-g", threshold_scope="sample"), train_set, val_set)
    assert len(report.epochs) == 2


def test_divergence_is_reported(tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    poisoned = Dataset(
        [Sample(np.full_like(s.image, np.nan), s.label, s.mask, s.id) for s in train_set], train_set.source
    )
    with pytest.raises(TrainingDiverged) as info:
        train(tiny_config("none"), poisoned, val_set)
    assert info.value.report.diverged
    assert info.value.report.epochs == []


def test_empty_training_set_is_rejected(tiny_config, tiny_dataset):
    with pytest.raises(ValueError):
        train(tiny_config("none"), Dataset([]), tiny_dataset)


def test_learnable_run_returns_imputation_weights(tiny_config, tiny_dataset, tmp_path):
    train_set, val_set, _ = _parts(tiny_dataset)
    params, _ = train(tiny_config("res-l"), train_set, val_set)
    assert {"imp.conv0.weight", "imp.conv0.bias"} <= set(params)
    initial = init_imputation_params(ImputationConfig(), (32, 32), (8, 8), _imputation_seed(0))
    assert not np.array_equal(params["imp.conv0.weight"].data, initial["imp.conv0.weight"].data)

    path = tmp_path / "res-l.ckpt"
    save_checkpoint(path, params, {"variant": "res-l"})
    loaded, _ = load_checkpoint(path)
    masks = AnnotationMask.stack([s.mask for s in val_set])
    np.testing.assert_array_equal(
        learnable_impute(masks, loaded, (8, 8)).data, learnable_impute(masks, params, (8, 8)).data
    )
    assert evaluate(loaded, val_set) == evaluate(params, val_set)


def test_prediction_loss_falls_on_separable_data(tiny_backbone):
    data = generate_synthetic(48, image_size=32, class_count=2, seed=2)
    train_set, val_set, _ = split(data, (32, 16, 0), seed=0)
    config = TrainConfig(epochs=10, learning_rate=1e-3, batch_size=8, backbone=tiny_backbone, seed=0)
    _, report = train(config, train_set, val_set)
    losses = [r.pred_loss for r in report.epochs]
    assert len(losses) == 10
    assert losses[-1] < losses[0]


def test_validation_cadence(tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    config = tiny_config("res-g").model_copy(update={"epochs": 5, "eval_every": 2})
    _, report = train(config, train_set, val_set)
    validated = [r.epoch for r in report.epochs if r.val_accuracy is not None]
    assert validated == [2, 4, 5]
    assert report.best_epoch in validated
    assert all(r.val_iou is None for r in report.epochs if r.epoch not in validated)


def test_explanation_loss_uses_through_max_by_default(tiny_config, tiny_dataset):
    train_set, val_set, _ = _parts(tiny_dataset)
    assert tiny_config("res-g").loss.normalizer_gradient == "through-max"
    through, _ = train(tiny_config("res-g"), train_set, val_set)
    frozen, _ = train(tiny_config("res-g", normalizer_gradient="frozen"), train_set, val_set)
    assert not np.array_equal(through["fc.weight"].data, frozen["fc.weight"].data)
