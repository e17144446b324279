import numpy as np
import pytest

from ptgflow import Communicator, ProtocolError, Taskflow, Threadpool, view
from ptgflow.bench.runner import run_loopback
from ptgflow.completion import Request
from ptgflow.transport import LoopbackFabric


def make(n, delay=None, seed=0, trace=None):
    fabric = LoopbackFabric(n, delay=delay, seed=seed)
    return fabric, [Communicator(fabric.endpoint(r), trace=trace) for r in range(n)]


def drive(fabric, comms, limit=100_000):
    for _ in range(limit):
        for c in comms:
            if not c.finished:
                c.progress()
        if all(c.finished for c in comms):
            return
        fabric.tick()
    raise AssertionError("no shutdown")


def test_small_am_runs_on_receiver():
    fabric, comms = make(2, delay=(0, 3))
    got = []
    ams = [c.register_am(lambda a, b, r=c.rank: got.append((r, a, b)), ["i32", "f64"]) for c in comms]
    ams[0].send(1, -4, 2.5)
    ams[1].send(1, 7, 0.0)
    drive(fabric, comms)
    assert sorted(got) == [(1, -4, 2.5), (1, 7, 0.0)]
    assert comms[0].counters.snapshot() == (1, 0)
    assert comms[1].counters.snapshot() == (1, 2)


def test_large_am_lands_in_alloc_buffer():
    fabric, comms = make(2, delay=(0, 5), seed=3)
    bufs, processed, completed = {}, [], []

    def alloc(key, n):
        bufs[key] = np.empty(n)
        return bufs[key]

    lams = [
        c.register_large_am(
            alloc,
            lambda key, n: processed.append((key, bufs[key].copy())),
            complete=lambda key, n: completed.append(key),
            signature=["u16", "u32"],
        )
        for c in comms
    ]
    payload = np.arange(1000.0)
    lams[0].send(1, payload, 11, 1000)
    lams[0].send(1, np.empty(0), 12, 0)
    drive(fabric, comms)
    assert [k for k, _ in processed] == [11, 12]
    assert np.array_equal(processed[0][1], payload)
    assert sorted(completed) == [11, 12]
    assert comms[1].counters.processed == 2


def test_registration_frozen_after_first_send():
    fabric, comms = make(1)
    am = comms[0].register_am(lambda: None)
    am.send(0)
    with pytest.raises(ProtocolError):
        comms[0].register_am(lambda: None)
    drive(fabric, comms)
    with pytest.raises(ProtocolError):
        am.send(0)


def test_bad_destination():
    _, comms = make(2)
    am = comms[0].register_am(lambda: None)
    with pytest.raises(ValueError):
        am.send(2)


def test_mismatched_registration_is_reported_in_debug():
    fabric = LoopbackFabric(2)
    a = Communicator(fabric.endpoint(0), debug=True)
    b = Communicator(fabric.endpoint(1), debug=True)
    am = a.register_am(lambda x: None, ["u32"])
    b.register_am(lambda x: None, ["f64"])
    am.send(1, 3)
    a.progress()
    with pytest.raises(ProtocolError, match="same order"):
        b.progress()


def test_unknown_am_id():
    fabric, (a, b) = make(2)
    a.register_am(lambda: None)
    a.register_am(lambda: None).send(1)
    b.register_am(lambda: None)
    a.progress()
    with pytest.raises(ProtocolError):
        b.progress()


def test_single_rank_empty_program_terminates():
    trace = []
    fabric, comms = make(1, trace=trace)
    drive(fabric, comms)
    kinds = [type(m).__name__ for _, d, m, _ in trace if d == "send"]
    assert kinds == ["Count", "Request", "Confirmation"]


def test_shutdown_waits_for_remote_processing():
    trace = []
    fabric, comms = make(2, delay=40, trace=trace)
    handled = []
    ams = [c.register_am(lambda: handled.append(fabric.clock)) for c in comms]
    ams[0].send(1)
    drive(fabric, comms)
    assert handled
    final = comms[0].completion.root.round
    last = [m for r, d, m, _ in trace if d == "recv" and r == 1 and isinstance(m, Request)]
    assert last[-1].round == final and last[-1].processed == 1


def test_threaded_ping_pong_with_remote_fulfill():
    n_ranks, n_hops = 3, 30

    def rank_main(comm):
        pool = Threadpool(2, comm=comm)
        seen = []

        def body(k):
            seen.append(k)
            if k + 1 < n_hops:
                tf.fulfill_remote(k + 1, (k + 1) % n_ranks)

        tf = Taskflow(pool, indegree=lambda k: 1, task=body, mapping=lambda k: k % 2)
        tf.enable_remote(comm, "i64")
        if comm.rank == 0:
            tf.fulfill_promise(0)
        pool.join()
        return seen

    out = run_loopback(n_ranks, rank_main)
    for r in range(n_ranks):
        assert out[r] == list(range(r, n_hops, n_ranks))


def test_tuple_keys_over_remote_fulfill():
    def rank_main(comm):
        pool = Threadpool(1, comm=comm)
        got = []
        tf = Taskflow(pool, indegree=lambda k: 2, task=got.append, mapping=lambda k: 0)
        tf.enable_remote(comm, ("i32", "i32"))
        for d in range(comm.n_ranks):
            tf.fulfill_remote((comm.rank, d), d)
            tf.fulfill_remote((comm.rank, d), d)
        pool.join()
        return sorted(got)

    out = run_loopback(2, rank_main, delay=(0, 3))
    assert out == [[(0, 0), (1, 0)], [(0, 1), (1, 1)]]


def test_failure_on_one_rank_aborts_the_others():
    def rank_main(comm):
        pool = Threadpool(1, comm=comm)
        am = comm.register_am(lambda: None)
        if comm.rank == 1:
            raise KeyError("rank 1 broke")
        am.send(0)
        pool.join()

    with pytest.raises(KeyError):
        run_loopback(3, rank_main)


def test_view_arguments_in_small_am():
    fabric, comms = make(2)
    got = []
    ams = [c.register_am(lambda v: got.append(v.copy()), [view("int16")]) for c in comms]
    ams[1].send(0, np.array([1, -2, 3], dtype=np.int16))
    drive(fabric, comms)
    assert got[0].tolist() == [1, -2, 3]
