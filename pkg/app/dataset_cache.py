"""Process-wide LRU cache of loaded datasets.

Sweep cells running in threads of one process share loaded datasets instead
of re-reading the same directory once per cell.
"""
import logging
from collections import OrderedDict
from pathlib import Path
from threading import Lock
from typing import Optional, Union

from .config import settings
from .dataset import Dataset, load_dataset

_LOGGER = logging.getLogger(__name__)


class DatasetCache:
    """Thread-safe LRU map from resolved directory to loaded Dataset."""

    def __init__(self, max_size: int = settings.DATASET_CACHE_SIZE):
        self._cache: "OrderedDict[str, Dataset]" = OrderedDict()
        self._lock = Lock()
        self._max_size = max(1, max_size)

    def get(self, directory: Union[str, Path]) -> Dataset:
        key = str(Path(directory).resolve())
        with self._lock:
            if key in self._cache:
                _LOGGER.debug(f"Dataset cache HIT: {key}")
                self._cache.move_to_end(key)
                return self._cache[key]

            _LOGGER.info(f"Dataset cache MISS: loading {key}")
            dataset = load_dataset(key)
            self._cache[key] = dataset
            if len(self._cache) > self._max_size:
                evicted, _ = self._cache.popitem(last=False)
                _LOGGER.info(f"Cache full - evicted {evicted}")
            return dataset

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def __contains__(self, directory: Union[str, Path]) -> bool:
        with self._lock:
            return str(Path(directory).resolve()) in self._cache


_dataset_cache: Optional[DatasetCache] = None
_cache_lock = Lock()


def get_dataset_cache() -> DatasetCache:
    global _dataset_cache
    if _dataset_cache is None:
        with _cache_lock:
            if _dataset_cache is None:
                _dataset_cache = DatasetCache()
    return _dataset_cache
