"""Deterministic parallel map and plain-file persistence."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

__all__ = [
    "TaskOutcome",
    "parallel_map",
    "default_threads",
    "fmt",
    "write_csv",
    "write_json",
    "utc_now",
    "THREADS_ENV",
]

THREADS_ENV = "MMRESET_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


@dataclass(frozen=True)
class TaskOutcome:
    value: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _guarded(func, item):
    # BLAS threads inside workers would only fight over the cores
    with threadpool_limits(1):
        try:
            return TaskOutcome(func(item))
        except Exception as exc:  # recorded per task, never fatal for the map
            return TaskOutcome(None, f"{type(exc).__name__}: {exc}")


class _Call:
    def __init__(self, func):
        self.func = func

    def __call__(self, item):
        return _guarded(self.func, item)


def parallel_map(func: Callable, items: Iterable, threads: int = 1) -> list[TaskOutcome]:
    """Apply ``func`` to every item, returning outcomes in input order.

    ``func`` must be picklable (module level) when ``threads > 1``. Results
    are identical for any worker count because each task is pure and the
    output order follows the input.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [_guarded(func, it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_Call(func), items))


def fmt(x) -> str:
    """Shortest round-tripping text for a number; ``nan`` for missing."""
    if x is None:
        return "nan"
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: str | Path, data: dict) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def format_exception(exc: BaseException) -> str:
    return "".join(traceback.format_exception_only(type(exc), exc)).strip()
