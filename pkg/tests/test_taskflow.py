import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptgflow import ProtocolError, Taskflow, Threadpool

from .dag import random_dag, run_dag, violations


def test_chain_in_order():
    pool = Threadpool(2)
    order = []

    def body(k):
        order.append(k)
        if k < 9:
            tf.fulfill_promise(k + 1)

    tf = Taskflow(pool, indegree=lambda k: 1, task=body, mapping=lambda k: k % 2)
    tf.fulfill_promise(0)
    pool.join()
    assert order == list(range(10))
    assert tf.n_resident() == 0


def test_task_waits_for_all_promises():
    pool = Threadpool(1)
    ran = []
    tf = Taskflow(pool, indegree=lambda k: 3, task=ran.append, mapping=lambda k: 0)
    tf.fulfill_promise("x")
    tf.fulfill_promise("x")
    assert tf.n_resident() == 1 and not ran
    tf.fulfill_promise("x")
    pool.join()
    assert ran == ["x"]


def test_chainable_setters():
    pool = Threadpool(1)
    ran = []
    tf = (
        Taskflow(pool)
        .set_indegree(lambda k: 1)
        .set_task(ran.append)
        .set_mapping(lambda k: 0)
        .set_priority(lambda k: k)
        .set_binding(lambda k: True)
        .set_name(lambda k: f"t{k}")
    )
    for k in range(4):
        tf.fulfill_promise(k)
    pool.join()
    assert ran == [3, 2, 1, 0]


def test_over_fulfill_caught_in_debug():
    pool = Threadpool(1)
    tf = Taskflow(pool, indegree=lambda k: 1, task=lambda k: None, mapping=lambda k: 0, debug=True)
    tf.fulfill_promise(1)
    with pytest.raises(ProtocolError):
        tf.fulfill_promise(1)
    pool.join()


def test_bad_indegree_and_mapping():
    pool = Threadpool(2)
    tf = Taskflow(pool, indegree=lambda k: 0, task=lambda k: None, mapping=lambda k: 0)
    with pytest.raises(ProtocolError):
        tf.fulfill_promise(1)
    tf = Taskflow(pool, indegree=lambda k: 1, task=lambda k: None, mapping=lambda k: 5)
    with pytest.raises(ValueError):
        tf.fulfill_promise(1)
    pool.join()


def test_cross_thread_fulfills_go_through_the_owner():
    # each task is fulfilled from several threads; counts must not be lost
    n_threads = 4
    pool = Threadpool(n_threads)
    done = []

    def body(k):
        if k[0] == "src":
            tf.fulfill_promise(("sink", k[1] % 5))
        else:
            done.append(k)

    tf = Taskflow(
        pool,
        indegree=lambda k: 1 if k[0] == "src" else 40,
        task=body,
        mapping=lambda k: hash(k) % n_threads,
    )
    for i in range(200):
        tf.fulfill_promise(("src", i))
    pool.join()
    assert sorted(done) == [("sink", j) for j in range(5)]


def test_remote_needs_enable():
    tf = Taskflow(Threadpool(1), indegree=lambda k: 1, task=lambda k: None, mapping=lambda k: 0)
    with pytest.raises(ProtocolError):
        tf.fulfill_remote(0, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(1, 16), st.integers(1, 6), st.integers(0, 2**32))
def test_random_dag_property(n_tasks, max_indegree, n_threads, seed):
    preds = random_dag(n_tasks, max_indegree, seed)
    runs, start, stop, tf = run_dag(preds, n_threads, seed)
    assert violations(preds, runs, start, stop) == []
    assert tf.n_resident() == 0


def test_oracle_detects_a_missing_edge():
    # the checker itself must notice order violations
    preds = [[-1], [0]]
    runs = {0: 1, 1: 1}
    assert violations(preds, runs, {0: 0.0, 1: 0.5}, {0: 1.0, 1: 2.0})
    assert violations(preds, {0: 2, 1: 1}, {0: 0.0, 1: 2.0}, {0: 1.0, 1: 3.0})
