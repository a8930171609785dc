"""Experiment grids: every (sweep value x variant x seed) cell trains and tests one model."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from .dataset import Dataset, build_dataset, save_dataset, split, subsample
from .dataset_cache import get_dataset_cache
from .model import save_checkpoint
from .schemas import ExperimentSpec, TrainConfig
from .trainer import TrainingDiverged, evaluate, train

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "iou", "precision", "recall", "f1")


def format_sweep_value(axis: str, value: Optional[float]) -> str:
    if axis == "none" or value is None:
        return ""
    if axis == "train_size":
        return str(int(value))
    return repr(float(value))


def plan_cells(spec: ExperimentSpec, data_dir: str) -> List[Dict[str, Any]]:
    """Cell payloads in output order: sweep value, then variant, then seed."""
    values = spec.sweep_values if spec.sweep_axis != "none" else [None]
    cells = []
    for value in values:
        for variant in spec.variants:
            for seed in spec.seeds:
                cells.append(
                    {
                        "index": len(cells),
                        "variant": variant,
                        "seed": seed,
                        "sweep_axis": spec.sweep_axis,
                        "sweep_value": value,
                        "data_dir": data_dir,
                        "spec": spec.model_dump(mode="json"),
                    }
                )
    return cells


def cell_name(cell: Dict[str, Any]) -> str:
    name = f"{cell['variant']}_s{cell['seed']}"
    if cell["sweep_axis"] != "none":
        name += f"_{cell['sweep_axis']}{format_sweep_value(cell['sweep_axis'], cell['sweep_value'])}"
    return name


def cell_config(spec: ExperimentSpec, cell: Dict[str, Any]) -> TrainConfig:
    loss = spec.train.loss.model_copy(update={"variant": cell["variant"]})
    if cell["sweep_axis"] == "alpha":
        loss = loss.model_copy(update={"alpha": float(cell["sweep_value"])})
    return TrainConfig(**{**spec.train.model_dump(), "loss": loss.model_dump(), "seed": cell["seed"]})


def cell_splits(spec: ExperimentSpec, cell: Dict[str, Any], data: Dataset):
    train_set, val_set, test_set = split(data, spec.split, seed=spec.split_seed)
    if cell["sweep_axis"] == "train_size":
        train_set = subsample(train_set, int(cell["sweep_value"]))
    return train_set, val_set, test_set


def execute_cell(cell: Dict[str, Any]) -> Dict[str, Any]:
    """Run one cell. Never raises: failures come back as status="failed"."""
    base = {key: cell[key] for key in ("index", "variant", "seed", "sweep_axis", "sweep_value")}
    name = cell_name(cell)
    logger.info(f"Cell {name} started")
    try:
        spec = ExperimentSpec(**cell["spec"])
        data = get_dataset_cache().get(cell["data_dir"])
        train_set, val_set, test_set = cell_splits(spec, cell, data)
        config = cell_config(spec, cell)
        params, report = train(config, train_set, val_set)
        report.test = evaluate(params, test_set, batch_size=max(config.batch_size, 64))

        checkpoint = Path(spec.output_dir) / "checkpoints" / f"{name}.ckpt"
        meta = {"variant": cell["variant"], "seed": cell["seed"], "backbone": report.config.backbone.model_dump()}
        save_checkpoint(checkpoint, params, meta)
        logger.info(f"Cell {name} finished: acc={report.test.accuracy:.3f} iou={report.test.explanation.iou:.3f}")
        return {
            **base,
            "status": "success",
            "error": "",
            "accuracy": report.test.accuracy,
            **report.test.explanation.model_dump(),
            "best_epoch": report.best_epoch,
            "wall_clock_s": report.wall_clock_s,
            "checkpoint": str(checkpoint),
            "epochs": [record.model_dump() for record in report.epochs],
        }
    except TrainingDiverged as exc:
        logger.error(f"Cell {name} diverged: {exc}")
        return {**base, "status": "failed", "error": str(exc), "epochs": [r.model_dump() for r in exc.report.epochs]}
    except Exception as exc:
        logger.exception(f"Cell {name} failed")
        return {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}", "epochs": []}


def prepare_data(spec: ExperimentSpec) -> str:
    """Directory holding the experiment's dataset, generating it when no directory is given."""
    if spec.data_dir:
        return spec.data_dir
    target = Path(spec.output_dir) / "data"
    if not (target / "labels.csv").exists():
        save_dataset(build_dataset(spec.recipe), target)
    return str(target)


def run_cells(
    cells: List[Dict[str, Any]],
    runner: Callable[[Dict[str, Any]], Dict[str, Any]],
    workers: int = 1,
) -> List[Dict[str, Any]]:
    """Run cells through `runner` in a bounded pool; results come back in cell order."""
    if workers <= 1:
        return [runner(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(runner, cells))
