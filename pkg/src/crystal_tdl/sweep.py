"""Run independent sweep points, optionally in worker processes."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager

WORKERS_ENV = "CRYSTAL_TDL_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@contextmanager
def labelled(label):
    """Tag any exception raised inside the block with ``sweep_point = label``."""
    try:
        yield
    except Exception as exc:
        if getattr(exc, "sweep_point", None) is None:
            exc.sweep_point = label
        raise


def _timed(args):
    fn, item, label = args
    t0 = time.perf_counter()
    try:
        out = fn(item)
    except Exception as exc:
        # survives pickling back from a worker (stored in __dict__)
        exc.sweep_point = label
        raise
    return out, time.perf_counter() - t0


def run_points(fn, items, workers: int | None = None, labels=None):
    """Map ``fn`` over ``items`` keeping input order; returns ``[(result, seconds)]``.

    ``fn`` must be a picklable module-level callable when ``workers > 1``.
    A failing point re-raises its exception with ``sweep_point`` set to the
    matching entry of ``labels`` (the index by default).
    """
    items = list(items)
    labels = list(range(len(items))) if labels is None else list(labels)
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(fn, it, lab) for it, lab in zip(items, labels)]
    if workers == 1 or len(items) <= 1:
        return [_timed(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(_timed, jobs))
