"""Shared-memory overhead micro-benchmarks built from spin tasks."""

import threading
import time
from dataclasses import dataclass, field

from ..engine import Threadpool
from ..errors import BenchmarkError
from ..taskflow import Taskflow
from .spin import spin, warm_up


@dataclass
class EfficiencyRecord:
    n_threads: int
    spin_time: float
    n_tasks: int
    run_time: float
    insertion_timed: bool = False

    @property
    def ideal_time(self):
        return self.spin_time * self.n_tasks / self.n_threads

    @property
    def efficiency(self):
        # ideal / measured, so 1.0 means no runtime overhead
        return self.ideal_time / self.run_time


@dataclass
class DepsRun:
    record: EfficiencyRecord
    start: dict = field(repr=False)
    stop: dict = field(repr=False)


def bench_nodeps(n_threads, n_tasks, spin_time, insertion_timed=False):
    """``n_tasks`` independent spin tasks, dealt round-robin to threads.

    With ``insertion_timed=False`` every task is created before the
    clock starts and only start-to-join is measured.
    """
    warm_up()
    pool = Threadpool(n_threads, name="nodeps")
    tf = Taskflow(
        pool,
        indegree=lambda k: 1,
        mapping=lambda k: k % n_threads,
        task=lambda k: spin(spin_time),
        label="nodeps",
    )
    if insertion_timed:
        t0 = time.perf_counter()
        pool.start()
        for k in range(n_tasks):
            tf.fulfill_promise(k)
        pool.join()
    else:
        for k in range(n_tasks):
            tf.fulfill_promise(k)
        t0 = time.perf_counter()
        pool.start()
        pool.join()
    run_time = time.perf_counter() - t0
    if pool.executed != n_tasks:
        raise BenchmarkError(f"nodeps: {pool.executed} tasks ran, expected {n_tasks}")
    return EfficiencyRecord(n_threads, spin_time, n_tasks, run_time, insertion_timed)


def bench_deps(n_threads, nrows, ncols, ndeps, spin_time):
    """Grid of ``nrows x ncols`` spin tasks; task ``(i, j)`` feeds
    ``((i + k) % nrows, j + 1)`` for ``k < ndeps``. Row ``i`` maps to
    thread ``i % n_threads``.

    Checks that every task ran exactly once and after all of its
    predecessors, then reports efficiency.
    """
    if not 1 <= ndeps <= nrows:
        raise ValueError(f"ndeps must lie in [1, nrows={nrows}], got {ndeps}")
    if ncols < 1:
        raise ValueError("ncols must be >= 1")
    warm_up()
    pool = Threadpool(n_threads, name="deps")
    start = {}
    stop = {}
    runs = {}
    lock = threading.Lock()

    def run(k):
        t0 = time.perf_counter()
        spin(spin_time)
        i, j = k
        with lock:
            runs[k] = runs.get(k, 0) + 1
            start[k] = t0
            stop[k] = time.perf_counter()
        if j + 1 < ncols:
            for d in range(ndeps):
                tf.fulfill_promise(((i + d) % nrows, j + 1))

    tf = Taskflow(
        pool,
        indegree=lambda k: 1 if k[1] == 0 else ndeps,
        mapping=lambda k: k[0] % n_threads,
        task=run,
        label="deps",
    )
    for i in range(nrows):
        tf.fulfill_promise((i, 0))
    t0 = time.perf_counter()
    pool.start()
    pool.join()
    run_time = time.perf_counter() - t0

    n_tasks = nrows * ncols
    if len(runs) != n_tasks or any(c != 1 for c in runs.values()):
        raise BenchmarkError(
            f"deps: {len(runs)} distinct tasks ran (expected {n_tasks}), "
            f"max runs per task {max(runs.values(), default=0)}"
        )
    for (i, j), t in start.items():
        if j == 0:
            continue
        for d in range(ndeps):
            pred = ((i - d) % nrows, j - 1)
            if stop[pred] > t:
                raise BenchmarkError(f"deps: task {(i, j)} started before {pred} finished")
    rec = EfficiencyRecord(n_threads, spin_time, n_tasks, run_time)
    return DepsRun(rec, start, stop)
