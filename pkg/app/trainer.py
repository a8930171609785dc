"""Joint training of the classifier and its explanations.

Each mini-batch alternates two steps: with the current parameters fixed, pick
the binarization threshold that satisfies the most annotation constraints;
then take one Adam step on prediction loss + lambda * explanation loss.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .annotations import AnnotationMask
from .dataset import Dataset
from .imputation import ImputationParams, gaussian_impute, learnable_impute, make_imputation
from .losses import comparison_map, gradia_loss, haics_loss, indicator_hinge, res_loss_terms, total_objective
from .metrics import score_sample
from .model import ModelParams, copy_params, forward, init_params, prediction_loss
from .optim import AdamState, adam_step
from .saliency import binarize, compute_saliency
from .schemas import BackboneConfig, EpochRecord, EvalResult, ExplanationScore, TrainConfig, TrainReport
from .tensor import Tape, Tensor, no_grad
from .threshold import DEFAULT_THRESHOLD, constraints_from_maps, optimal_threshold, per_sample_constraints

logger = logging.getLogger(__name__)

RES_VARIANTS = ("res-g", "res-l")


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; `report` holds the epochs completed so far."""

    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


@dataclass
class StepStats:
    pred_loss: float
    exp_loss: float = 0.0
    hinge: float = 0.0
    distance: float = 0.0
    exact_hinge: float = 0.0
    threshold: float = DEFAULT_THRESHOLD


def fit_backbone(backbone: BackboneConfig, dataset: Dataset) -> BackboneConfig:
    """Backbone config with input geometry taken from the data (re-validated)."""
    channels, height, width = dataset.image_shape
    return BackboneConfig(**{**backbone.model_dump(), "in_channels": channels, "height": height, "width": width})


def _imputation_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 1]).generate_state(1)[0])


def _threshold(values: np.ndarray, mask: AnnotationMask, scope: str):
    if scope == "sample":
        return np.array([optimal_threshold(c) for c in per_sample_constraints(values, mask)])
    return optimal_threshold(constraints_from_maps(values, mask))


def _explanation_loss(
    config: TrainConfig,
    params: ModelParams,
    activations: Tensor,
    labels: np.ndarray,
    masks: AnnotationMask,
    full_hw: Tuple[int, int],
    imputation: Optional[ImputationParams],
    gaussian_targets: Optional[np.ndarray],
) -> Tuple[Tensor, StepStats]:
    cfg = config.loss
    saliency = compute_saliency(
        params, activations, labels, out_hw=full_hw, max_gradient=cfg.normalizer_gradient == "through-max"
    )
    if cfg.variant == "gradia":
        loss = gradia_loss(saliency, masks)
        return loss, StepStats(pred_loss=0.0, exp_loss=loss.item())
    if cfg.variant == "haics":
        loss = haics_loss(saliency, masks)
        return loss, StepStats(pred_loss=0.0, exp_loss=loss.item())

    # threshold and hinge at input resolution; the distance term may compare at native
    m = saliency.full
    values = m.data[:, 0]
    a = _threshold(values, masks, cfg.threshold_scope)
    d_map = comparison_map(saliency, cfg.variant)
    if cfg.variant == "res-l":
        imputed = learnable_impute(masks, imputation.phi, d_map.shape[-2:])
    else:
        imputed = gaussian_targets[:, None]
    terms = res_loss_terms(m, masks, a, imputed, cfg, distance_map=d_map)
    exact = float(indicator_hinge(values, masks, a, cfg.alpha).mean())
    stats = StepStats(
        pred_loss=0.0,
        exp_loss=terms.total.item(),
        hinge=terms.hinge,
        distance=terms.distance,
        exact_hinge=exact,
        threshold=float(np.mean(a)),
    )
    return terms.total, stats


def _epoch_record(epoch: int, totals: StepStats, n: int) -> EpochRecord:
    return EpochRecord(
        epoch=epoch,
        pred_loss=totals.pred_loss / n,
        exp_loss=totals.exp_loss / n,
        hinge=totals.hinge / n,
        distance=totals.distance / n,
        exact_hinge=totals.exact_hinge / n,
        threshold=totals.threshold / n,
    )


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    batch_size: int = 64,
    threshold: float = 0.5,
    use_clean_masks: bool = True,
) -> EvalResult:
    """Accuracy, and explanation scores of the true-class saliency at `threshold`.

    Scores are computed against the exact masks when the dataset has them.
    """
    if len(dataset) == 0:
        return EvalResult(accuracy=0.0, explanation=ExplanationScore())
    _, height, width = dataset.image_shape
    correct = 0
    scores: List[ExplanationScore] = []
    with no_grad():
        for start in range(0, len(dataset), batch_size):
            indices = list(range(start, min(start + batch_size, len(dataset))))
            images, labels, masks = dataset.batch(indices)
            logits, activations = forward(params, images)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            saliency = compute_saliency(params, activations, labels, out_hw=(height, width))
            binary = binarize(saliency, threshold)[:, 0]
            reference = masks.clean() if use_clean_masks else masks
            scores.extend(score_sample(binary[i], reference[i]) for i in range(len(indices)))
    explanation = ExplanationScore(
        iou=float(np.mean([s.iou for s in scores])),
        precision=float(np.mean([s.precision for s in scores])),
        recall=float(np.mean([s.recall for s in scores])),
        f1=float(np.mean([s.f1 for s in scores])),
    )
    return EvalResult(accuracy=correct / len(dataset), explanation=explanation)


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset) -> Tuple[ModelParams, TrainReport]:
    """Train one model; returns the best-validation-accuracy parameters.

    For res-l the returned mapping also holds the imputation weights (`imp.*`)
    from the same epoch, so a checkpoint of it restores the whole run.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    started = time.perf_counter()
    backbone = fit_backbone(config.backbone, train_set)
    config = config.model_copy(update={"backbone": backbone})
    cfg = config.loss
    full_hw = (backbone.height, backbone.width)
    native_hw = backbone.feature_size
    explain = cfg.variant != "none" and cfg.lambda_exp > 0

    params = init_params(backbone, seed=config.seed)
    imputation = make_imputation(cfg.variant, cfg.imputation, full_hw, native_hw, _imputation_seed(config.seed))
    trainable: Dict[str, Tensor] = dict(params)
    if imputation is not None and imputation.phi:
        trainable.update(imputation.phi)
    state = AdamState.for_params(trainable)

    gaussian_targets = None
    if explain and cfg.variant == "res-g":
        all_masks = AnnotationMask.stack([s.mask for s in train_set])
        gaussian_targets = gaussian_impute(all_masks, cfg.imputation.gaussian_kernel, cfg.imputation.gaussian_sigma)

    report = TrainReport(config=config, seed=config.seed)
    shuffle_rng = np.random.default_rng(config.seed)
    best_params = copy_params(trainable)
    best_accuracy = -1.0
    n = len(train_set)
    logger.info(f"Training variant={cfg.variant} seed={config.seed} on {n} samples for {config.epochs} epochs")

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        totals = StepStats(pred_loss=0.0, threshold=0.0)
        for start in range(0, n, config.batch_size):
            indices = order[start:start + config.batch_size]
            images, labels, masks = train_set.batch(indices)
            with Tape() as tape:
                logits, activations = forward(params, images)
                pred = prediction_loss(logits, labels)
                stats = StepStats(pred_loss=pred.item())
                objective = pred
                if explain:
                    targets = None if gaussian_targets is None else gaussian_targets[indices]
                    exp_loss, exp_stats = _explanation_loss(
                        config, params, activations, labels, masks, full_hw, imputation, targets
                    )
                    exp_stats.pred_loss = stats.pred_loss
                    stats = exp_stats
                    objective = total_objective(pred, exp_loss, cfg.lambda_exp)
                if not np.isfinite(objective.item()):
                    report.diverged = True
                    report.wall_clock_s = time.perf_counter() - started
                    logger.error(f"Loss became non-finite at epoch {epoch}, batch starting {start}")
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}", report)
                tape.backward(objective)
                tape.reset()

            grads = {name: t.grad for name, t in trainable.items()}
            adam_step(trainable, grads, state, config.learning_rate, config.beta1, config.beta2, config.eps)
            for t in trainable.values():
                t.zero_grad()

            weight = len(indices)
            totals.pred_loss += stats.pred_loss * weight
            totals.exp_loss += stats.exp_loss * weight
            totals.hinge += stats.hinge * weight
            totals.distance += stats.distance * weight
            totals.exact_hinge += stats.exact_hinge * weight
            totals.threshold += stats.threshold * weight

        record = _epoch_record(epoch, totals, n)
        if epoch % config.eval_every and epoch != config.epochs:
            report.epochs.append(record)
            logger.debug(f"epoch {epoch}/{config.epochs} pred={record.pred_loss:.4f} exp={record.exp_loss:.4f}")
            continue
        val = evaluate(params, val_set, batch_size=max(config.batch_size, 64))
        record = record.model_copy(
            update={
                "val_accuracy": val.accuracy,
                "val_iou": val.explanation.iou,
                "val_precision": val.explanation.precision,
                "val_recall": val.explanation.recall,
                "val_f1": val.explanation.f1,
            }
        )
        report.epochs.append(record)
        logger.info(
            f"epoch {epoch}/{config.epochs} pred={record.pred_loss:.4f} exp={record.exp_loss:.4f} "
            f"a={record.threshold:.3f} val_acc={record.val_accuracy:.3f} val_iou={record.val_iou:.3f}"
        )
        # strict improvement keeps the earliest epoch on ties; without validation data keep the last
        if len(val_set) == 0 or val.accuracy > best_accuracy:
            best_accuracy = val.accuracy
            best_params = copy_params(trainable)
            report.best_epoch = epoch
            report.best_val_accuracy = val.accuracy

    report.wall_clock_s = time.perf_counter() - started
    return best_params, report
