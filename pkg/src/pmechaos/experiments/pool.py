"""Deterministic fan-out of independent tasks.

Tasks are pure functions of ``(task, shared)``; results come back in task
order whatever the number of workers, so merged outputs do not depend on
scheduling.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor

__all__ = ["map_tasks"]

_SHARED = None


def _install(shared):
    global _SHARED
    _SHARED = shared


def _call(args):
    fn, task = args
    return fn(task, _SHARED)


def map_tasks(fn, tasks, shared=None, workers=1):
    """``[fn(task, shared) for task in tasks]``, optionally on a process pool.

    ``shared`` is sent to each worker once at start-up (read-only by
    convention).  ``fn`` must be a module-level function.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t, shared) for t in tasks]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)), mp_context=ctx, initializer=_install, initargs=(shared,)) as ex:
        return list(ex.map(_call, [(fn, t) for t in tasks]))
