"""Right-looking blocked Cholesky ``A = L L^T`` as a parametrized task graph.

Keys, for ``n`` blocks per side::

    potrf(k)       L_kk = chol(A_kk)                      0 <= k < n
    trsm(i, k)     L_ik = A_ik L_kk^{-T}                  k < i < n
    gemm(k, i, j)  A_ij -= L_ik L_jk^T (syrk if i == j)   k < j <= i < n

Every task runs on the rank owning the block it writes. Updates of one
block are chained in ``k``, so each block sees the same sequence of
floating point operations on any number of ranks or threads. A factor
block needed on another rank is shipped there once, as a large active
message, and fulfills all its consumers on arrival.
"""

import threading
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..engine import Threadpool
from ..taskflow import Taskflow
from .blocks import BlockMatrix, assemble, gemm_nt, potrf, random_spd, trsm
from .runner import launch


def expected_counts(n):
    """Closed-form task counts for ``n`` blocks per side."""
    return {"potrf": n, "trsm": n * (n - 1) // 2, "gemm": (n - 1) * n * (n + 1) // 6}


@dataclass
class CholeskyResult:
    N: int
    b: int
    n_ranks: int
    n_threads: int
    run_time: float
    residual: float
    counts: dict
    blocks_sent: int
    L: np.ndarray = field(default=None, repr=False)


def factor_consumers(n, i, k):
    """Tasks that read factor block ``L_ik`` (``i == k`` for potrf's)."""
    if i == k:
        return [("trsm", (m, k)) for m in range(k + 1, n)]
    return [("gemm", (k, i, j)) for j in range(k + 1, i + 1)] + [
        ("gemm", (k, m, i)) for m in range(i + 1, n)
    ]


def cholesky_rank(comm, A, n_threads, trace=False):
    """Factor this rank's share of ``A`` (a lower :class:`BlockMatrix`)
    in place. Returns ``(L blocks, per-kind task counts, blocks sent)``."""
    rank = comm.rank
    n, b = A.n, A.b
    owner = A.owner
    remote = {}
    counts = Counter()
    count_lock = threading.Lock()
    sent = [0]

    pool = Threadpool(n_threads, comm=comm, name=f"chol-r{rank}", trace=trace)

    def factor(i, k):
        if owner(i, k) == rank:
            return A[(i, k)]
        return remote[(i, k)]

    def tally(kind):
        with count_lock:
            counts[kind] += 1

    def publish(i, k):
        """Hand ``L_ik`` to its consumers, here and on other ranks."""
        dests = set()
        for kind, key in factor_consumers(n, i, k):
            d = owner(*_block_of(kind, key))
            if d == rank:
                flows[kind].fulfill_promise(key)
            else:
                dests.add(d)
        for d in sorted(dests):
            ship.send(d, A[(i, k)].reshape(-1), i, k)
        with count_lock:
            sent[0] += len(dests)

    def run_potrf(k):
        A[(k, k)] = potrf(A[(k, k)], where=(k, k))
        tally("potrf")
        publish(k, k)

    def run_trsm(key):
        i, k = key
        A[(i, k)] = trsm(factor(k, k), A[(i, k)])
        tally("trsm")
        publish(i, k)

    def run_gemm(key):
        k, i, j = key
        if i == j:
            Lik = factor(i, k)
            gemm_nt(A[(i, i)], Lik, Lik)
        else:
            gemm_nt(A[(i, j)], factor(i, k), factor(j, k))
        tally("gemm")
        if k + 1 < j:
            flows["gemm"].fulfill_promise((k + 1, i, j))
        elif i == j:
            flows["potrf"].fulfill_promise(i)
        else:
            flows["trsm"].fulfill_promise((i, j))

    # higher priority for work nearer the critical path (smaller k)
    flows = {
        "potrf": Taskflow(
            pool,
            indegree=lambda k: 1,
            task=run_potrf,
            mapping=lambda k: (2 * k) % n_threads,
            priority=lambda k: 3 * (n - k),
            name=lambda k: f"potrf({k})",
            label="potrf",
        ),
        "trsm": Taskflow(
            pool,
            indegree=lambda key: 1 + (key[1] > 0),
            task=run_trsm,
            mapping=lambda key: (key[0] + key[1]) % n_threads,
            priority=lambda key: 3 * (n - key[1]) - 1,
            name=lambda key: f"trsm{key}",
            label="trsm",
        ),
        "gemm": Taskflow(
            pool,
            indegree=lambda key: (1 if key[1] == key[2] else 2) + (key[0] > 0),
            task=run_gemm,
            mapping=lambda key: (key[1] + key[2]) % n_threads,
            priority=lambda key: 3 * (n - key[2]) + 1,
            name=lambda key: f"gemm{key}",
            label="gemm",
        ),
    }

    def alloc(i, k):
        buf = np.empty((b, b))
        remote[(i, k)] = buf
        return buf

    def arrived(i, k):
        for kind, key in factor_consumers(n, i, k):
            if owner(*_block_of(kind, key)) == rank:
                flows[kind].fulfill_promise(key)

    ship = comm.register_large_am(alloc, arrived, signature=["i32", "i32"])

    if owner(0, 0) == rank:
        flows["potrf"].fulfill_promise(0)
    pool.join()
    return dict(A.blocks), dict(counts), sent[0]


def _block_of(kind, key):
    """Block written by a task."""
    if kind == "potrf":
        return key, key
    if kind == "trsm":
        return key
    return key[1], key[2]


def bench_cholesky(
    N,
    b,
    n_ranks=1,
    n_threads=1,
    seed=0,
    A=None,
    keep=False,
    transport="loopback",
    rank_table=None,
    rank=None,
):
    """Factor an SPD matrix and measure ``max|A - L L^T| / max|A|``.

    Raises :class:`~ptgflow.errors.BenchmarkError` naming the block if a
    diagonal block is not positive definite. Over TCP only rank 0
    returns a result; the other ranks return None.
    """
    if b <= 0 or N % b:
        raise ValueError(f"matrix size {N} must be a positive multiple of block size {b}")
    if A is None:
        A = random_spd(N, seed)
    A = np.asarray(A, dtype=float)

    def rank_main(comm):
        Ar = BlockMatrix.from_dense(A, b, comm.n_ranks, comm.rank, lower=True)
        t0 = time.perf_counter()
        blocks, counts, sent = cholesky_rank(comm, Ar, n_threads)
        elapsed = time.perf_counter() - t0
        return blocks, (elapsed, counts.get("potrf", 0), counts.get("trsm", 0), counts.get("gemm", 0), sent)

    results = launch(rank_main, n_ranks, transport, rank_table, rank, b)
    if results is None:
        return None
    L = np.tril(assemble([r[0] for r in results], N, b))
    totals = np.sum([r[1] for r in results], axis=0)
    residual = float(np.max(np.abs(A - L @ L.T)) / np.max(np.abs(A)))
    return CholeskyResult(
        N,
        b,
        len(results),
        n_threads,
        run_time=max(r[1][0] for r in results),
        residual=residual,
        counts={"potrf": int(totals[1]), "trsm": int(totals[2]), "gemm": int(totals[3])},
        blocks_sent=int(totals[4]),
        L=L if keep else None,
    )
