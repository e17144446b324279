"""Random DAG generator and the execution oracle shared by tests."""

import random
import threading
import time

from ptgflow import Taskflow, Threadpool


def random_dag(n_tasks, max_indegree, seed):
    """Predecessor lists of a DAG on ``0..n_tasks-1`` (edges go from lower
    to higher ids). Indegrees are 1..max_indegree; tasks with no natural
    predecessor get a seed edge, marked by ``-1``."""
    rng = random.Random(seed)
    preds = []
    for k in range(n_tasks):
        want = rng.randint(1, max_indegree)
        if k == 0 or rng.random() < 0.05:
            preds.append([-1] * want)
        else:
            # several edges may come from the same predecessor
            preds.append([rng.randrange(max(0, k - 200), k) for _ in range(want)])
    return preds


def run_dag(preds, n_threads, seed=0):
    """Execute the DAG as a task flow; returns ``(runs, start, stop)``."""
    succ = [[] for _ in preds]
    for k, ps in enumerate(preds):
        for p in ps:
            if p >= 0:
                succ[p].append(k)
    pool = Threadpool(n_threads)
    runs, start, stop = {}, {}, {}
    lock = threading.Lock()
    rng = random.Random(seed)
    prio = [rng.randint(0, 3) for _ in preds]

    def body(k):
        t0 = time.perf_counter()
        with lock:
            runs[k] = runs.get(k, 0) + 1
            start[k] = t0
        # the work ends here; successors are released after this stamp
        stop[k] = time.perf_counter()
        for s in succ[k]:
            tf.fulfill_promise(s)

    tf = Taskflow(
        pool,
        indegree=lambda k: len(preds[k]),
        task=body,
        mapping=lambda k: k % n_threads,
        priority=lambda k: prio[k],
        binding=lambda k: k % 7 == 0,
        debug=True,
    )
    for k, ps in enumerate(preds):
        for p in ps:
            if p < 0:
                tf.fulfill_promise(k)
    pool.join()
    return runs, start, stop, tf


def violations(preds, runs, start, stop):
    bad = []
    if set(runs) != set(range(len(preds))):
        bad.append(f"ran {len(runs)} of {len(preds)} tasks")
    bad += [f"task {k} ran {c} times" for k, c in runs.items() if c != 1]
    for k, ps in enumerate(preds):
        for p in ps:
            if p >= 0 and k in start and not start[k] > stop.get(p, float("inf")):
                bad.append(f"task {k} started before predecessor {p} finished")
    return bad
