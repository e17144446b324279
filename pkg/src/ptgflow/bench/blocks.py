"""Dense blocked matrices in a 2D block-cyclic layout, plus block kernels."""

import math

import numpy as np
import scipy.linalg

from ..errors import BenchmarkError


def grid_shape(n_ranks):
    """``(p, q)`` with ``p`` the largest divisor of ``n_ranks`` not above
    its square root."""
    p = max(d for d in range(1, math.isqrt(n_ranks) + 1) if n_ranks % d == 0)
    return p, n_ranks // p


class BlockCyclic:
    """Owner map of an ``n x n`` block grid over a ``p x q`` rank grid."""

    def __init__(self, n_blocks, n_ranks):
        self.n = n_blocks
        self.n_ranks = n_ranks
        self.p, self.q = grid_shape(n_ranks)

    def owner(self, i, j):
        return (i % self.p) * self.q + (j % self.q)

    def owned(self, rank, lower=False):
        return [
            (i, j)
            for i in range(self.n)
            for j in range(i + 1 if lower else self.n)
            if self.owner(i, j) == rank
        ]


class BlockMatrix:
    """The blocks of an ``N x N`` matrix held by one rank.

    With ``lower=True`` only blocks with ``j <= i`` are stored.
    """

    def __init__(self, N, b, n_ranks=1, rank=0, lower=False):
        if b <= 0 or N <= 0 or N % b:
            raise ValueError(f"matrix size {N} must be a positive multiple of block size {b}")
        self.N = N
        self.b = b
        self.n = N // b
        self.rank = rank
        self.lower = lower
        self.layout = BlockCyclic(self.n, n_ranks)
        self.blocks = {}

    def owner(self, i, j):
        return self.layout.owner(i, j)

    @classmethod
    def from_dense(cls, A, b, n_ranks=1, rank=0, lower=False):
        m = cls(A.shape[0], b, n_ranks, rank, lower)
        for i, j in m.layout.owned(rank, lower):
            m.blocks[(i, j)] = np.array(A[i * b : (i + 1) * b, j * b : (j + 1) * b], order="C")
        return m

    @classmethod
    def zeros(cls, N, b, n_ranks=1, rank=0, lower=False):
        m = cls(N, b, n_ranks, rank, lower)
        for ij in m.layout.owned(rank, lower):
            m.blocks[ij] = np.zeros((b, b))
        return m

    def __getitem__(self, ij):
        return self.blocks[ij]

    def __setitem__(self, ij, value):
        self.blocks[ij] = value


def assemble(parts, N, b):
    """Gather block dicts from several ranks into one dense array."""
    out = np.zeros((N, N))
    for part in parts:
        blocks = part.blocks if isinstance(part, BlockMatrix) else part
        for (i, j), blk in blocks.items():
            out[i * b : (i + 1) * b, j * b : (j + 1) * b] = blk
    return out


def random_matrix(N, seed):
    return np.random.default_rng(seed).standard_normal((N, N))


def random_spd(N, seed):
    """``M M^T + N I`` for a seeded standard-normal ``M``."""
    M = random_matrix(N, seed)
    return M @ M.T + N * np.eye(N)


# block kernels


def potrf(A, where=None):
    """Lower Cholesky factor of one diagonal block."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise BenchmarkError(f"potrf failed on block {where}: not positive definite") from None


def trsm(L_kk, A_ik):
    """``A_ik L_kk^{-T}``."""
    return scipy.linalg.solve_triangular(L_kk, A_ik.T, lower=True, check_finite=False).T


def gemm_nt(C, A, B):
    """``C -= A B^T`` in place (syrk when ``A is B``)."""
    C -= A @ B.T


def gemm_nn(C, A, B):
    """``C += A B`` in place."""
    C += A @ B
