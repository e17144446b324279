import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptgflow import Task, Threadpool
from ptgflow.bench.spin import spin


def test_single_thread_runs_by_priority_then_insertion():
    pool = Threadpool(1)
    order = []
    for i, p in enumerate([0, 5, 5, 1, 0, 9]):
        pool.insert(Task(lambda i=i: order.append(i), priority=p), 0)
    pool.join()
    assert order == [5, 1, 2, 3, 0, 4]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.booleans()), max_size=40))
def test_priority_order_property(specs):
    pool = Threadpool(1)
    order = []
    for i, (p, stealable) in enumerate(specs):
        pool.insert(Task(lambda i=i: order.append(i), priority=p, stealable=stealable), 0)
    pool.join()
    assert order == sorted(range(len(specs)), key=lambda i: (-specs[i][0], i))


def test_bound_tasks_stay_home_and_stealable_ones_move():
    pool = Threadpool(4)
    where = {}
    lock = threading.Lock()

    def body(tag):
        spin(0.001)
        with lock:
            where[tag] = pool.current_thread_id()

    for i in range(20):
        pool.insert(Task(lambda i=i: body(("bound", i)), stealable=False), 0)
        pool.insert(Task(lambda i=i: body(("free", i))), 0)
    pool.join()
    assert all(t == 0 for (kind, _), t in where.items() if kind == "bound")
    assert len(where) == 40
    assert sum(w.stolen for w in pool.workers) > 0
    assert {t for (kind, _), t in where.items() if kind == "free"} - {0}


def test_tasks_can_spawn_tasks():
    pool = Threadpool(3)
    count = []

    def body(d):
        count.append(d)
        if d < 6:
            for t in range(2):
                pool.insert(Task(lambda: body(d + 1)), t)

    pool.insert(Task(lambda: body(0)), 1)
    pool.join()
    assert len(count) == 2**7 - 1
    assert pool.is_idle()
    assert pool.executed == 2**7 - 1


def test_errors_surface_from_join():
    pool = Threadpool(2)

    def boom():
        raise RuntimeError("boom")

    pool.insert(Task(boom), 1)
    with pytest.raises(RuntimeError, match="boom"):
        pool.join()


def test_join_is_idempotent_and_final():
    pool = Threadpool(2)
    pool.insert(Task(lambda: None), 0)
    pool.join()
    pool.join()
    with pytest.raises(RuntimeError):
        pool.insert(Task(lambda: None), 0)


def test_bad_arguments():
    with pytest.raises(ValueError):
        Threadpool(0)
    pool = Threadpool(2)
    with pytest.raises(ValueError):
        pool.insert(Task(lambda: None), 2)
    pool.join()


def test_current_thread_id_outside_pool():
    pool = Threadpool(1)
    assert pool.current_thread_id() is None
    seen = []
    pool.insert(Task(lambda: seen.append(pool.current_thread_id())), 0)
    pool.join()
    assert seen == [0]


def test_trace_records_every_task():
    pool = Threadpool(2, trace=True)
    for i in range(10):
        pool.insert(Task(lambda: None, label=f"t{i}"), i % 2)
    pool.join()
    assert sorted(e[0] for e in pool.trace) == sorted(f"t{i}" for i in range(10))
    assert all(e[2] <= e[3] for e in pool.trace)
