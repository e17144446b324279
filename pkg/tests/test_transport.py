import threading

import numpy as np
import pytest

from ptgflow.codec import MessageTag
from ptgflow.errors import TransportError
from ptgflow.transport import LoopbackFabric, TcpTransport, loopback_configure, read_rank_table
from ptgflow.transport.base import MAX_MESSAGE_BYTES, Transport


def drain(ep, tag=MessageTag.REGULAR):
    out = []
    while True:
        m = ep.probe(tag=tag)
        if m is None:
            return out
        src, t, size = m
        h = ep.irecv(src, t, size)
        assert ep.test(h)
        out.append((src, bytes(h.buffer)))


def test_fifo_per_channel_under_random_delays():
    fabric = LoopbackFabric(3, delay=(0, 50), seed=4)
    eps = fabric.endpoints()
    for i in range(200):
        eps[i % 2].isend(2, MessageTag.REGULAR, i.to_bytes(4, "little"))
    got = []
    for _ in range(60):
        fabric.tick()
        got += drain(eps[2])
    assert len(got) == 200
    for src in (0, 1):
        seq = [int.from_bytes(b, "little") for s, b in got if s == src]
        assert seq == sorted(seq)


def test_delay_holds_message_until_due():
    fabric = LoopbackFabric(2, delay=5)
    a, b = fabric.endpoints()
    h = a.isend(1, MessageTag.REGULAR, b"x")
    fabric.tick(4)
    assert b.probe() is None
    assert not a.test(h)
    fabric.tick()
    assert drain(b) == [(0, b"x")]
    # a send completes only once the receiver has the bytes
    assert a.test(h)
    assert fabric.pending() == []


def test_receive_into_buffer():
    fabric, (a, b) = loopback_configure(2)
    arr = np.arange(4.0)
    a.isend(1, MessageTag.LARGE_BODY, arr)
    out = np.empty(4)
    src, tag, size = b.probe(tag=MessageTag.LARGE_BODY)
    b.irecv(src, tag, size, into=out)
    assert np.array_equal(out, arr)
    a.isend(1, MessageTag.LARGE_BODY, arr)
    with pytest.raises(ValueError):
        b.irecv(0, MessageTag.LARGE_BODY, 32, into=np.empty(3))


def test_bad_arguments():
    _, (a,) = loopback_configure(1)
    with pytest.raises(ValueError):
        a.isend(1, MessageTag.REGULAR, b"")
    with pytest.raises(ValueError):
        a.isend(0, 9, b"")
    with pytest.raises(ValueError):
        Transport._check_size(MAX_MESSAGE_BYTES + 1)
    Transport._check_size(MAX_MESSAGE_BYTES)
    with pytest.raises(ValueError):
        LoopbackFabric(0)
    with pytest.raises(ValueError):
        LoopbackFabric(2, delay=(5, 1))


def test_read_rank_table(tmp_path):
    p = tmp_path / "ranks"
    p.write_text("# comment\n1 127.0.0.1:9001\n0 localhost:9000\n")
    assert read_rank_table(str(p)) == [("localhost", 9000), ("127.0.0.1", 9001)]
    p.write_text("0 a:1\n2 b:2\n")
    with pytest.raises(Exception):
        read_rank_table(str(p))


def _tcp_job(table, fn):
    n = len(table)
    out = [None] * n
    errs = []

    def body(r):
        try:
            t = TcpTransport(r, table, connect_timeout=10)
            try:
                out[r] = fn(t)
            finally:
                t.close()
        except BaseException as exc:
            errs.append(exc)

    ths = [threading.Thread(target=body, args=(r,)) for r in range(n)]
    for t in ths:
        t.start()
    for t in ths:
        t.join(30)
    if errs:
        raise errs[0]
    return out


def test_tcp_exchange(rank_table):
    table = rank_table(3)
    big = np.arange(200_000, dtype=np.float64)

    def fn(t):
        for d in range(t.n_ranks):
            t.isend(d, MessageTag.REGULAR, bytes([t.rank, d]))
            t.isend(d, MessageTag.LARGE_BODY, big)
        got, bodies = [], 0
        while len(got) < t.n_ranks or bodies < t.n_ranks:
            m = t.probe()
            if m is None:
                continue
            src, tag, size = m
            if tag == MessageTag.LARGE_BODY:
                buf = np.empty(200_000)
                t.irecv(src, tag, size, into=buf)
                assert np.array_equal(buf, big)
                bodies += 1
            else:
                got.append(bytes(t.irecv(src, tag, size).buffer))
        return sorted(got)

    out = _tcp_job(table, fn)
    for r in range(3):
        assert out[r] == sorted(bytes([s, r]) for s in range(3))


def test_tcp_connect_failure():
    with pytest.raises(TransportError):
        # rank 1 waits for nobody but must reach rank 0, which is absent
        TcpTransport(1, [("127.0.0.1", 1), ("127.0.0.1", 0)], connect_timeout=0.3)
