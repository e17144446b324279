"""Blocked C = A B over a 2D block-cyclic rank grid.

Task ``gemm(i, k, j)`` runs on the rank owning ``C_ij`` and computes
``C_ij += A_ik B_kj``. The updates of one ``C_ij`` are chained in ``k``,
so the summation order is fixed whatever the schedule. Each ``A_ik`` and
``B_kj`` block travels at most once to every rank that needs it, as a
large active message.
"""

import time
from dataclasses import dataclass

import numpy as np

from ..engine import Threadpool
from ..errors import BenchmarkError
from ..taskflow import Taskflow
from .blocks import BlockMatrix, assemble, gemm_nn, random_matrix
from .runner import launch

_A, _B = 0, 1


@dataclass
class GemmResult:
    N: int
    b: int
    n_ranks: int
    n_threads: int
    run_time: float
    residual: float
    tasks: int
    blocks_sent: int
    C: np.ndarray = None


def gemm_rank(comm, A, B, n_threads, trace=False):
    """One rank's share of ``C = A B``. ``A`` and ``B`` are this rank's
    :class:`BlockMatrix` pieces; returns ``(C blocks, stats)``."""
    rank, n_ranks = comm.rank, comm.n_ranks
    n, b = A.n, A.b
    owner = A.owner
    C = BlockMatrix.zeros(A.N, b, n_ranks, rank)
    blocks = ({}, {})  # blocks received from other ranks, per operand
    stats = {"tasks": 0, "sent": 0}

    pool = Threadpool(n_threads, comm=comm, name=f"gemm-r{rank}", trace=trace)

    def operand(kind, i, j):
        local = A if kind == _A else B
        if owner(i, j) == rank:
            return local[(i, j)]
        return blocks[kind][(i, j)]

    def run(key):
        i, k, j = key
        gemm_nn(C[(i, j)], operand(_A, i, k), operand(_B, k, j))
        if k + 1 < n:
            tf.fulfill_promise((i, k + 1, j))

    tf = Taskflow(
        pool,
        indegree=lambda key: 2 + (key[1] > 0),
        task=run,
        mapping=lambda key: (key[0] + key[2]) % n_threads,
        priority=lambda key: n - key[1],
        name=lambda key: f"gemm{key}",
        label="gemm",
    )

    def consumers(kind, i, j):
        # gemm tasks reading A_ij (as A_ik) or B_ij (as B_kj)
        if kind == _A:
            return [(i, j, c) for c in range(n)]
        return [(r, i, j) for r in range(n)]

    def deliver(kind, i, j):
        for key in consumers(kind, i, j):
            if owner(key[0], key[2]) == rank:
                tf.fulfill_promise(key)

    def alloc(kind, i, j):
        buf = np.empty((b, b))
        blocks[kind][(i, j)] = buf
        return buf

    ship = comm.register_large_am(
        alloc, lambda kind, i, j: deliver(kind, i, j), signature=["u8", "i32", "i32"]
    )

    for kind, M in ((_A, A), (_B, B)):
        for (i, j), blk in M.blocks.items():
            dests = {owner(key[0], key[2]) for key in consumers(kind, i, j)}
            for d in sorted(dests - {rank}):
                ship.send(d, blk.reshape(-1), kind, i, j)
                stats["sent"] += 1
            if rank in dests:
                deliver(kind, i, j)
    pool.join()
    stats["tasks"] = pool.executed
    if pool.executed != n * len(C.blocks):
        raise BenchmarkError(
            f"rank {rank}: ran {pool.executed} gemm tasks, expected {n * len(C.blocks)}"
        )
    return C.blocks, stats


def bench_gemm2d(
    N,
    b,
    n_ranks=1,
    n_threads=1,
    seed=0,
    A=None,
    B=None,
    tol=None,
    keep=False,
    transport="loopback",
    rank_table=None,
    rank=None,
):
    """Run the distributed GEMM and check it against a direct multiply.

    Raises :class:`BenchmarkError` if the largest entry deviation exceeds
    ``tol`` (default ``1e-10 * N``). Over TCP only rank 0 checks and
    returns a result; the other ranks return None.
    """
    if b <= 0 or N % b:
        raise ValueError(f"matrix size {N} must be a positive multiple of block size {b}")
    if A is None:
        A = random_matrix(N, seed)
    if B is None:
        B = random_matrix(N, seed + 1)
    tol = 1e-10 * N if tol is None else tol

    def rank_main(comm):
        Ar = BlockMatrix.from_dense(A, b, comm.n_ranks, comm.rank)
        Br = BlockMatrix.from_dense(B, b, comm.n_ranks, comm.rank)
        t0 = time.perf_counter()
        blocks, stats = gemm_rank(comm, Ar, Br, n_threads)
        return blocks, (time.perf_counter() - t0, stats["tasks"], stats["sent"])

    results = launch(rank_main, n_ranks, transport, rank_table, rank, b)
    if results is None:
        return None
    C = assemble([r[0] for r in results], N, b)
    residual = float(np.max(np.abs(C - A @ B)))
    res = GemmResult(
        N,
        b,
        len(results),
        n_threads,
        run_time=max(r[1][0] for r in results),
        residual=residual,
        tasks=int(sum(r[1][1] for r in results)),
        blocks_sent=int(sum(r[1][2] for r in results)),
        C=C if keep else None,
    )
    if not residual <= tol:
        raise BenchmarkError(f"gemm2d residual {residual:.3e} exceeds {tol:.3e}")
    return res
