"""Command line entry point: `python -m app <command> [flags]`.

Commands: gen-data, train, eval, experiment, heatmaps.

Every tunable flag may also come from a `--config` file of `key = value`
lines (keys are flag names, `-` or `_`). A flag given on the command line
wins over the file, the file wins over RES_* environment settings.

Exit codes: 0 success, 1 a run or cell failed, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from dotenv import dotenv_values
from pydantic import ValidationError

from .config import settings
from .dataset import DatasetError, build_dataset, load_dataset, save_dataset, split
from .experiment import execute_cell, plan_cells, prepare_data, run_cells
from .model import CheckpointError, forward, load_checkpoint
from .reporting import write_experiment_outputs
from .saliency import compute_saliency, save_panel_grid
from .schemas import (
    VARIANTS,
    DatasetRecipe,
    ExperimentSpec,
    ImputationConfig,
    NoiseSpec,
    RobustLossConfig,
    SplitSizes,
    TrainConfig,
)
from .tensor import ShapeError, no_grad
from .trainer import evaluate

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    """Bad flag combination or config file."""


# ------------------------------------------------------------------ options
def _csv_list(cast: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(text: str) -> List[Any]:
        return [cast(part.strip()) for part in str(text).split(",") if part.strip()]

    return parse


def _switch(text: str) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


# (flag, dest, type, fallback); a callable fallback is read from settings at use
RECIPE_FLAGS = [
    ("--n", "n", int, 500),
    ("--size", "size", int, 64),
    ("--classes", "classes", int, 2),
    ("--distractors", "distractors", int, 2),
    ("--boundary", "boundary", int, 0),
    ("--drop", "drop", float, 0.0),
    ("--seed", "seed", int, 0),
    ("--noise-seed", "noise_seed", int, None),
]
SPLIT_FLAGS = [
    ("--train-size", "train_size", int, 100),
    ("--val-size", "val_size", int, 200),
    ("--test-size", "test_size", int, 200),
    ("--split-seed", "split_seed", int, 0),
]
TRAIN_FLAGS = [
    ("--epochs", "epochs", int, lambda: settings.EPOCHS),
    ("--lr", "lr", float, lambda: settings.LEARNING_RATE),
    ("--batch-size", "batch_size", int, lambda: settings.BATCH_SIZE),
    ("--alpha", "alpha", float, lambda: settings.ALPHA),
    ("--gamma", "gamma", float, lambda: settings.GAMMA),
    ("--lambda-exp", "lambda_exp", float, lambda: settings.LAMBDA_EXP),
    ("--gaussian-kernel", "gaussian_kernel", int, lambda: settings.GAUSSIAN_KERNEL),
    ("--gaussian-sigma", "gaussian_sigma", float, lambda: settings.GAUSSIAN_SIGMA),
    ("--imputation-depth", "imputation_depth", str, "shallow"),
    ("--threshold-scope", "threshold_scope", str, "batch"),
    ("--normalizer-gradient", "normalizer_gradient", str, "through-max"),
    ("--eval-every", "eval_every", int, 1),
    ("--widths", "widths", _csv_list(int), [16, 32, 64]),
]

GEN_DATA_FLAGS = RECIPE_FLAGS + [("--out", "out", str, lambda: settings.DATA_DIR)]
TRAIN_CMD_FLAGS = RECIPE_FLAGS + SPLIT_FLAGS + TRAIN_FLAGS + [
    ("--data", "data", str, None),
    ("--variant", "variant", str, "none"),
    ("--run-seed", "run_seed", int, 0),
    ("--out", "out", str, lambda: str(Path(settings.OUTPUT_DIR) / "train")),
]
EVAL_FLAGS = SPLIT_FLAGS + [
    ("--checkpoint", "checkpoint", str, None),
    ("--data", "data", str, lambda: settings.DATA_DIR),
    ("--part", "part", str, "test"),
    ("--threshold", "threshold", float, 0.5),
    ("--annotated", "annotated", _switch, False),
]
EXPERIMENT_FLAGS = RECIPE_FLAGS + SPLIT_FLAGS + TRAIN_FLAGS + [
    ("--data", "data", str, None),
    ("--variants", "variants", _csv_list(str), list(VARIANTS)),
    ("--seeds", "seeds", _csv_list(int), [0, 1, 2, 3, 4]),
    ("--sweep", "sweep", str, "none"),
    ("--sweep-values", "sweep_values", _csv_list(float), []),
    ("--workers", "workers", int, lambda: settings.SWEEP_WORKERS),
    ("--out", "out", str, lambda: str(Path(settings.OUTPUT_DIR) / "experiment")),
]
HEATMAP_FLAGS = [
    ("--checkpoint", "checkpoint", str, None),
    ("--data", "data", str, lambda: settings.DATA_DIR),
    ("--ids", "ids", _csv_list(str), []),
    ("--count", "count", int, 4),
    ("--out", "out", str, lambda: str(Path(settings.OUTPUT_DIR) / "heatmaps")),
]


class Options:
    """Resolves each option: flag, then config file, then settings/default."""

    def __init__(self, args: argparse.Namespace, specs: Sequence[tuple]):
        self._args = args
        self._specs = {dest: (cast, fallback) for _, dest, cast, fallback in specs}
        self._file: Dict[str, Optional[str]] = {}
        config = getattr(args, "config", None)
        if config:
            path = Path(config)
            if not path.is_file():
                raise UsageError(f"config file {path} not found")
            for key, value in dotenv_values(path).items():
                dest = key.strip().lower().lstrip("-").replace("-", "_")
                if dest not in self._specs:
                    raise UsageError(f"{path}: unknown key {key!r}")
                self._file[dest] = value

    def __getattr__(self, dest: str) -> Any:
        if dest.startswith("_"):
            raise AttributeError(dest)
        if dest not in self._specs:
            raise AttributeError(f"no option {dest!r}")
        cast, fallback = self._specs[dest]
        value = getattr(self._args, dest, None)
        if value is not None:
            return value
        if self._file.get(dest) is not None:
            try:
                return cast(self._file[dest])
            except ValueError as exc:
                raise UsageError(f"config key {dest}: {exc}") from exc
        return fallback() if callable(fallback) else fallback


def _add_flags(parser: argparse.ArgumentParser, specs: Sequence[tuple]) -> None:
    for flag, dest, cast, _ in specs:
        if cast is _switch:
            parser.add_argument(flag, dest=dest, action="store_true", default=None)
        else:
            parser.add_argument(flag, dest=dest, type=cast, default=None)


def _recipe(opts: Options) -> DatasetRecipe:
    noise_seed = opts.noise_seed if opts.noise_seed is not None else opts.seed
    return DatasetRecipe(
        n=opts.n,
        image_size=opts.size,
        class_count=opts.classes,
        distractors=opts.distractors,
        noise=NoiseSpec(boundary_radius=opts.boundary, drop_probability=opts.drop, seed=noise_seed),
        seed=opts.seed,
    )


def _split_sizes(opts: Options) -> SplitSizes:
    return SplitSizes(train=opts.train_size, val=opts.val_size, test=opts.test_size)


def _train_config(opts: Options) -> TrainConfig:
    loss = RobustLossConfig(
        alpha=opts.alpha,
        gamma=opts.gamma,
        lambda_exp=opts.lambda_exp,
        threshold_scope=opts.threshold_scope,
        normalizer_gradient=opts.normalizer_gradient,
        imputation=ImputationConfig(
            gaussian_kernel=opts.gaussian_kernel,
            gaussian_sigma=opts.gaussian_sigma,
            learnable_depth=opts.imputation_depth,
        ),
    )
    widths = list(opts.widths)
    return TrainConfig(
        epochs=opts.epochs,
        learning_rate=opts.lr,
        batch_size=opts.batch_size,
        eval_every=opts.eval_every,
        loss=loss,
        backbone={"widths": widths, "kernel_sizes": [3] * len(widths)},
    )


def _experiment_spec(opts: Options, variants: List[str], seeds: List[int], **extra: Any) -> ExperimentSpec:
    return ExperimentSpec(
        variants=variants,
        seeds=seeds,
        data_dir=opts.data,
        recipe=_recipe(opts),
        split=_split_sizes(opts),
        split_seed=opts.split_seed,
        train=_train_config(opts),
        output_dir=opts.out,
        **extra,
    )


# ----------------------------------------------------------------- commands
def cmd_gen_data(opts: Options) -> int:
    recipe = _recipe(opts)
    out = Path(opts.out)
    save_dataset(build_dataset(recipe), out)
    print(
        f"wrote {recipe.n} samples ({recipe.image_size}x{recipe.image_size}, {recipe.class_count} classes) to {out}; "
        f"noise boundary={recipe.noise.boundary_radius} drop={recipe.noise.drop_probability} seed={recipe.noise.seed}"
    )
    return EXIT_OK


def cmd_train(opts: Options) -> int:
    spec = _experiment_spec(opts, [opts.variant], [opts.run_seed])
    cell = plan_cells(spec, prepare_data(spec))[0]
    results = [execute_cell(cell)]
    write_experiment_outputs(spec.output_dir, results, title=f"train {opts.variant} seed {opts.run_seed}")
    result = results[0]
    if result["status"] != "success":
        print(f"training failed: {result['error']}")
        return EXIT_FAILED
    print(
        f"test accuracy={result['accuracy']:.4f} iou={result['iou']:.4f} f1={result['f1']:.4f} "
        f"checkpoint={result['checkpoint']}"
    )
    return EXIT_OK


def cmd_eval(opts: Options) -> int:
    if not opts.checkpoint:
        raise UsageError("--checkpoint is required")
    if opts.part not in ("train", "val", "test", "all"):
        raise UsageError(f"--part must be train, val, test or all, got {opts.part!r}")
    params, meta = load_checkpoint(opts.checkpoint)
    data = load_dataset(opts.data)
    if opts.part != "all":
        try:
            parts = dict(zip(("train", "val", "test"), split(data, _split_sizes(opts), seed=opts.split_seed)))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        data = parts[opts.part]
    result = evaluate(params, data, threshold=opts.threshold, use_clean_masks=not opts.annotated)
    print(json.dumps({"checkpoint": opts.checkpoint, "part": opts.part, "meta": meta, **result.model_dump()}, sort_keys=True))
    return EXIT_OK


def cmd_experiment(opts: Options) -> int:
    from .workers.cells import dispatch

    spec = _experiment_spec(
        opts,
        opts.variants,
        opts.seeds,
        sweep_axis=opts.sweep,
        sweep_values=opts.sweep_values,
        workers=opts.workers,
    )
    cells = plan_cells(spec, prepare_data(spec))
    logger.info(f"Running {len(cells)} cells with {spec.workers} worker(s)")
    results = run_cells(cells, dispatch, spec.workers)
    summary = write_experiment_outputs(spec.output_dir, results, title=f"experiment ({len(cells)} runs)")
    print((Path(spec.output_dir) / "report.txt").read_text(encoding="utf8"), end="")
    failed = sum(row["failed"] for row in summary)
    if failed:
        print(f"{failed} of {len(cells)} runs failed")
        return EXIT_FAILED
    return EXIT_OK


def cmd_heatmaps(opts: Options) -> int:
    if not opts.checkpoint:
        raise UsageError("--checkpoint is required")
    params, _ = load_checkpoint(opts.checkpoint)
    data = load_dataset(opts.data)
    if opts.ids:
        known = {s.id: i for i, s in enumerate(data)}
        missing = [i for i in opts.ids if i not in known]
        if missing:
            raise UsageError(f"unknown sample ids: {', '.join(missing)}")
        indices = [known[i] for i in opts.ids]
    else:
        indices = list(range(min(opts.count, len(data))))

    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    _, height, width = data.image_shape
    with no_grad():
        images, labels, _ = data.batch(indices)
        _, activations = forward(params, images)
        saliency = compute_saliency(params, activations, labels, out_hw=(height, width))
    for row, index in enumerate(indices):
        sample = data[index]
        save_panel_grid(sample.image, sample.mask.F, sample.mask.C, saliency.full.data[row, 0], out / f"{sample.id}.png")
    print(f"wrote {len(indices)} heatmaps to {out}")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, GEN_DATA_FLAGS),
    "train": (cmd_train, TRAIN_CMD_FLAGS),
    "eval": (cmd_eval, EVAL_FLAGS),
    "experiment": (cmd_experiment, EXPERIMENT_FLAGS),
    "heatmaps": (cmd_heatmaps, HEATMAP_FLAGS),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="res", description="Robust explanation supervision experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, flags) in COMMANDS.items():
        child = sub.add_parser(name)
        child.add_argument("--config", default=None, help="file of key = value defaults")
        _add_flags(child, flags)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    handler, flags = COMMANDS[args.command]
    try:
        return handler(Options(args, flags))
    except (UsageError, ValidationError) as exc:
        logger.error(f"{args.command}: {exc}")
        return EXIT_USAGE
    except (DatasetError, CheckpointError, ShapeError, OSError) as exc:
        logger.error(f"{args.command}: {exc}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
