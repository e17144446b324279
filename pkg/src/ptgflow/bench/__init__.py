"""Benchmarks: spin-task overhead, 2D block-cyclic GEMM, blocked Cholesky."""

from .cholesky import bench_cholesky, expected_counts
from .gemm import bench_gemm2d
from .micro import EfficiencyRecord, bench_deps, bench_nodeps
from .spin import spin

__all__ = [
    "EfficiencyRecord",
    "bench_cholesky",
    "bench_deps",
    "bench_gemm2d",
    "bench_nodeps",
    "expected_counts",
    "spin",
]
