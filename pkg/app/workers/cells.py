"""Celery task running one experiment cell.

With RES_BROKER_URL set, cells are queued to workers started with
`celery -A app.workers.cells worker`. Without a broker the app runs eagerly
and cells execute in the calling process.
"""
import logging
from typing import Any, Dict

from celery import Celery

from app.config import settings
from app.experiment import execute_cell

_LOGGER = logging.getLogger(__name__)

celery_app = Celery(
    "res_cells",
    broker=settings.BROKER_URL or "memory://",
    backend=settings.RESULT_BACKEND or settings.BROKER_URL or "cache+memory://",
)
celery_app.conf.update(
    task_always_eager=not settings.BROKER_URL,
    task_eager_propagates=True,
    task_serializer="json",
    result_serializer="json",
    accept_content=["json"],
    worker_prefetch_multiplier=1,
)


@celery_app.task(name="res.run_cell")
def run_cell(cell: Dict[str, Any]) -> Dict[str, Any]:
    """Train and test one cell; returns a status dict, never raises."""
    return execute_cell(cell)


def dispatch(cell: Dict[str, Any]) -> Dict[str, Any]:
    """Run a cell through Celery and wait for its result."""
    if celery_app.conf.task_always_eager:
        return run_cell.apply(args=(cell,)).get()
    try:
        return run_cell.delay(cell).get(timeout=settings.CELL_TIMEOUT)
    except Exception as exc:
        _LOGGER.exception(f"Cell {cell.get('index')} did not complete")
        base = {key: cell[key] for key in ("index", "variant", "seed", "sweep_axis", "sweep_value")}
        return {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}", "epochs": []}
