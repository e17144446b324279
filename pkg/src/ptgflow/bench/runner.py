"""Launch an SPMD rank program over loopback threads or TCP."""

import threading

import numpy as np

from ..codec import view
from ..errors import RankAborted
from ..messaging import Communicator
from ..transport import TcpTransport, loopback_configure, read_rank_table


def run_loopback(n_ranks, rank_main, delay=None, seed=0, debug=False):
    """Run ``rank_main(comm)`` once per rank, each on its own thread.

    Returns the per-rank results in rank order and re-raises the first
    exception any rank raised.
    """
    fabric, endpoints = loopback_configure(n_ranks, delay=delay, seed=seed, auto_tick=bool(delay))
    results = [None] * n_ranks
    errors = []
    abort = threading.Event()

    def body(r):
        comm = Communicator(endpoints[r], debug=debug)
        comm.abort_event = abort
        try:
            results[r] = rank_main(comm)
        except BaseException as exc:
            errors.append((r, exc))
            abort.set()

    threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}") for r in range(n_ranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        # the original failure, not the aborts it triggered elsewhere
        errors.sort(key=lambda e: isinstance(e[1], RankAborted))
        raise errors[0][1]
    return results


def run_tcp(rank, rank_table, rank_main, debug=False):
    """Run the program for one rank of a TCP job; returns its result."""
    table = read_rank_table(rank_table) if isinstance(rank_table, str) else rank_table
    transport = TcpTransport(rank, table)
    try:
        return rank_main(Communicator(transport, debug=debug))
    finally:
        transport.close()


def gather_to_root(transport, blocks, scalars, b):
    """Collect every rank's ``(blocks, scalars)`` on rank 0.

    Runs a second, short-lived communicator over ``transport`` once the
    main one has shut down. ``blocks`` maps ``(i, j)`` to ``b x b``
    arrays, ``scalars`` is a sequence of floats. Rank 0 gets the list of
    all ranks' pairs; other ranks get None.
    """
    comm = Communicator(transport)
    got = {0: [dict(blocks), np.asarray(scalars, dtype=float)]}

    def alloc(src, i, j):
        buf = np.empty((b, b))
        got.setdefault(src, [{}, None])[0][(i, j)] = buf
        return buf

    def on_scalars(src, vals):
        got.setdefault(src, [{}, None])[1] = np.array(vals)

    lam = comm.register_large_am(alloc, lambda src, i, j: None, signature=["u32", "i32", "i32"])
    sam = comm.register_am(on_scalars, ["u32", view("float64")])
    if comm.rank:
        for (i, j), blk in blocks.items():
            lam.send(0, np.ascontiguousarray(blk).reshape(-1), comm.rank, i, j)
        sam.send(0, comm.rank, np.asarray(scalars, dtype=float))
    comm.run()
    if comm.rank:
        return None
    return [tuple(got[r]) for r in range(comm.n_ranks)]


def launch(rank_main, n_ranks=1, transport="loopback", rank_table=None, rank=None, b=None):
    """Run ``rank_main(comm) -> (blocks, scalars)`` on every rank.

    Returns the list of all ranks' results on the process that sees
    them all (every loopback run, rank 0 of a TCP run), else None.
    """
    if transport == "loopback":
        return run_loopback(n_ranks, rank_main)
    if transport != "tcp":
        raise ValueError(f"unknown transport {transport!r}")

    def main(comm):
        out = rank_main(comm)
        return gather_to_root(comm.transport, out[0], out[1], b)

    return run_tcp(rank, rank_table, main)
