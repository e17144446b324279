"""``ptgflow-bench``: run the overhead and linear algebra benchmarks.

Prints one whitespace-separated row per run, under a header row naming
the columns, to stdout or ``--output``.
"""

import argparse
import logging
import re
import sys

from ..errors import BenchmarkError
from .cholesky import bench_cholesky
from .gemm import bench_gemm2d
from .micro import bench_deps, bench_nodeps

_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}

COLUMNS = {
    "nodeps": ["threads", "spin", "tasks", "insertion_timed", "rep", "run_time", "efficiency"],
    "deps": ["threads", "spin", "nrows", "ncols", "ndeps", "rep", "run_time", "efficiency"],
    "gemm2d": ["ranks", "threads", "N", "b", "rep", "run_time", "residual", "tasks", "blocks_sent"],
    "cholesky": [
        "ranks", "threads", "N", "b", "rep", "run_time", "residual",
        "potrf", "trsm", "gemm", "blocks_sent",
    ],
}


def seconds(text):
    """``"1e-4"``, ``"100us"``, ``"10ms"`` -> seconds."""
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-z]*)\s*", text)
    if not m or m.group(2) not in _UNITS:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    try:
        return float(m.group(1)) * _UNITS[m.group(2)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None


def listof(conv):
    def parse(text):
        return [conv(x) for x in text.split(",") if x.strip()]

    return parse


def build_parser():
    p = argparse.ArgumentParser(prog="ptgflow-bench", description=__doc__.splitlines()[0])
    p.add_argument("--bench", required=True, choices=sorted(COLUMNS))
    p.add_argument("--threads", type=listof(int), default=[1], help="comma list, e.g. 1,2,4")
    p.add_argument("--ranks", type=int, default=1, help="loopback ranks")
    p.add_argument("--spin", type=listof(seconds), default=[1e-4], help="comma list, e.g. 1us,100us")
    p.add_argument("--tasks", type=int, default=1000)
    p.add_argument("--nrows", type=int, default=32)
    p.add_argument("--ncols", type=int, default=10)
    p.add_argument("--ndeps", type=int, default=1)
    p.add_argument("--N", type=int, default=256, dest="N")
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transport", choices=["loopback", "tcp"], default="loopback")
    p.add_argument("--rank-table", help="file of 'rank host:port' lines (tcp)")
    p.add_argument("--rank", type=int, help="this process's rank (tcp)")
    p.add_argument("--output", help="write the table here instead of stdout")
    p.add_argument("--trace", action="store_true", help="log every task and protocol step")
    return p


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def rows(args):
    """Yield one tuple per run, matching ``COLUMNS[args.bench]``."""
    bench = args.bench
    if bench in ("nodeps", "deps"):
        if args.ranks != 1 or args.transport != "loopback":
            raise SystemExit(f"--bench {bench} runs on a single rank")
        for t in args.threads:
            for s in args.spin:
                for rep in range(args.reps):
                    if bench == "nodeps":
                        for timed in (False, True):
                            r = bench_nodeps(t, args.tasks, s, insertion_timed=timed)
                            yield (t, s, args.tasks, timed, rep, r.run_time, r.efficiency)
                    else:
                        r = bench_deps(t, args.nrows, args.ncols, args.ndeps, s).record
                        yield (t, s, args.nrows, args.ncols, args.ndeps, rep, r.run_time, r.efficiency)
        return
    if args.N % args.block_size:
        raise SystemExit(f"--N {args.N} is not a multiple of --block-size {args.block_size}")
    if args.transport == "tcp" and (args.rank_table is None or args.rank is None):
        raise SystemExit("--transport tcp needs --rank-table and --rank")
    fn = bench_gemm2d if bench == "gemm2d" else bench_cholesky
    for t in args.threads:
        for rep in range(args.reps):
            r = fn(
                args.N,
                args.block_size,
                n_ranks=args.ranks,
                n_threads=t,
                seed=args.seed,
                transport=args.transport,
                rank_table=args.rank_table,
                rank=args.rank,
            )
            if r is None:  # non-root tcp rank
                continue
            if bench == "gemm2d":
                yield (r.n_ranks, t, r.N, r.b, rep, r.run_time, r.residual, r.tasks, r.blocks_sent)
            else:
                c = r.counts
                yield (r.n_ranks, t, r.N, r.b, rep, r.run_time, r.residual,
                       c["potrf"], c["trsm"], c["gemm"], r.blocks_sent)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.trace else logging.WARNING,
        format="%(relativeCreated)9.1f %(threadName)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        header = False
        for row in rows(args):
            if not header:
                print(" ".join(COLUMNS[args.bench]), file=out)
                header = True
            print(" ".join(_fmt(v) for v in row), file=out, flush=True)
    except BenchmarkError as exc:
        print(f"ptgflow-bench: {exc}", file=sys.stderr)
        return 1
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
