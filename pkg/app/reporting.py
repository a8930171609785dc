"""CSV and text outputs of training runs and experiment grids.

results.csv   one row per cell
summary.csv   mean and sample std per (sweep value, variant), successful runs only
report.txt    the summary as an aligned table
train_log.csv one row per (cell, epoch)

Floats are written with repr so the summary can be recomputed exactly from
the result rows. Failed cells leave their metric fields empty. Wall-clock
time is left out so reruns produce identical bytes.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .experiment import METRICS, format_sweep_value
from .schemas import EpochRecord

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["variant", "sweep_axis", "sweep_value", "seed", "status", *METRICS, "best_epoch", "error"]
SUMMARY_COLUMNS = ["variant", "sweep_axis", "sweep_value", "runs", "failed"] + [
    f"{metric}_{stat}" for metric in METRICS for stat in ("mean", "std")
]
EPOCH_COLUMNS = ["cell", "variant", "seed", "sweep_value", *EpochRecord.model_fields.keys()]


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])
    return path


def result_row(result: Dict[str, Any]) -> Dict[str, Any]:
    row = {
        "variant": result["variant"],
        "sweep_axis": result["sweep_axis"],
        "sweep_value": format_sweep_value(result["sweep_axis"], result["sweep_value"]),
        "seed": result["seed"],
        "status": result["status"],
        "error": result.get("error", ""),
    }
    if result["status"] == "success":
        row.update({metric: float(result[metric]) for metric in METRICS})
        row["best_epoch"] = result["best_epoch"]
    return row


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0, 0.0
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def summarize(results: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """One row per (sweep value, variant) in first-seen order."""
    groups: Dict[Tuple[str, str], List[Dict[str, Any]]] = {}
    for result in results:
        key = (format_sweep_value(result["sweep_axis"], result["sweep_value"]), result["variant"])
        groups.setdefault(key, []).append(result)

    rows = []
    for (sweep_value, variant), members in groups.items():
        ok = [m for m in members if m["status"] == "success"]
        row: Dict[str, Any] = {
            "variant": variant,
            "sweep_axis": members[0]["sweep_axis"],
            "sweep_value": sweep_value,
            "runs": len(ok),
            "failed": len(members) - len(ok),
        }
        if ok:
            for metric in METRICS:
                mean, std = mean_std([float(m[metric]) for m in ok])
                row[f"{metric}_mean"] = mean
                row[f"{metric}_std"] = std
        rows.append(row)
    return rows


def write_results(path: Union[str, Path], results: List[Dict[str, Any]]) -> Path:
    return _write_rows(Path(path), RESULT_COLUMNS, (result_row(r) for r in results))


def write_summary(path: Union[str, Path], summary: List[Dict[str, Any]]) -> Path:
    return _write_rows(Path(path), SUMMARY_COLUMNS, summary)


def write_train_log(path: Union[str, Path], results: List[Dict[str, Any]]) -> Path:
    def rows():
        for result in results:
            for record in result.get("epochs", []):
                yield {
                    "cell": result["index"],
                    "variant": result["variant"],
                    "seed": result["seed"],
                    "sweep_value": format_sweep_value(result["sweep_axis"], result["sweep_value"]),
                    **record,
                }

    return _write_rows(Path(path), EPOCH_COLUMNS, rows())


def render_report(summary: List[Dict[str, Any]], title: Optional[str] = None) -> str:
    """Accuracy and explanation scores as mean +- std, one line per cell group."""
    headers = ["variant"]
    if any(row["sweep_axis"] != "none" for row in summary):
        headers.append(summary[0]["sweep_axis"])
    headers += ["runs", "failed", "Accuracy", "IoU", "Precision", "Recall", "F1"]

    lines = []
    for row in summary:
        cells = [row["variant"]]
        if len(headers) == 8:
            cells.append(row["sweep_value"])
        cells += [str(row["runs"]), str(row["failed"])]
        for metric in METRICS:
            if row["runs"]:
                cells.append(f"{100 * row[f'{metric}_mean']:.2f} +- {100 * row[f'{metric}_std']:.2f}")
            else:
                cells.append("-")
        lines.append(cells)

    widths = [max(len(h), *(len(line[i]) for line in lines)) if lines else len(h) for i, h in enumerate(headers)]
    out = []
    if title:
        out.append(title)
    out.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip())
    out.append("  ".join("-" * w for w in widths))
    out.extend("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)
    return "\n".join(out) + "\n"


def write_report(path: Union[str, Path], summary: List[Dict[str, Any]], title: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(summary, title), encoding="utf8")
    return path


def write_experiment_outputs(output_dir: Union[str, Path], results: List[Dict[str, Any]], title: Optional[str] = None) -> List[Dict[str, Any]]:
    root = Path(output_dir)
    summary = summarize(results)
    write_results(root / "results.csv", results)
    write_summary(root / "summary.csv", summary)
    write_train_log(root / "train_log.csv", results)
    write_report(root / "report.txt", summary, title)
    logger.info(f"Wrote results for {len(results)} cells to {root}")
    return summary
