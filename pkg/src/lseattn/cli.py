"""Command-line harness: ``lseattn {check,bench,stream-demo}``.

Exit codes: 0 pass, 1 property failure, 2 usage error, 3 I/O or corrupt snapshot.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

from . import harness
from .streaming import SnapshotError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=32, help="sequence length")
    common.add_argument("--dk", type=int, default=8, help="key/query features")
    common.add_argument("--dv", type=int, default=8, help="value features")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--range", type=float, default=5.0, dest="value_range", help="inputs uniform on [-range, range]")
    common.add_argument("--tol", type=float, default=1e-9, help="cross-form tolerance")
    common.add_argument("--identity-tol", type=float, default=1e-12, help="tolerance for algebraic identities")
    common.add_argument("--chunk", type=int, default=64, help="chunk size for the chunked scan")
    common.add_argument("--form", choices=harness.FORMS, default=None)
    common.add_argument("--out", default=None, help="write the report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lseattn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="run equivalence and invariant checks")
    bench = sub.add_parser("bench", parents=[common], help="per-token scaling benchmark (CSV)")
    bench.add_argument("--reps", type=int, default=9)
    bench.add_argument("--warmup", type=int, default=2)
    bench.add_argument("--min-log2n", type=int, default=7)
    bench.add_argument("--max-log2n", type=int, default=14)
    demo = sub.add_parser("stream-demo", parents=[common], help="snapshot and resume a stream")
    demo.add_argument("--snapshot", default=None, help="snapshot file (default: a temporary file)")
    demo.add_argument("--resume", action="store_true", help="load an existing snapshot instead of writing one")
    return parser


def _config(args) -> harness.RunConfig:
    return harness.RunConfig(
        seed=args.seed,
        n=args.n,
        d_k=args.dk,
        d_v=args.dv,
        value_range=args.value_range,
        tol=args.tol,
        identity_tol=args.identity_tol,
        chunk=args.chunk,
        form=args.form,
        out=args.out,
    )


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as f:
            f.write(text)


def _json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = _config(args)
    try:
        cfg.validate()
        if args.command == "bench" and (args.reps < 1 or args.warmup < 0 or args.min_log2n > args.max_log2n):
            raise ValueError("need --reps >= 1, --warmup >= 0 and --min-log2n <= --max-log2n")
    except ValueError as e:
        parser.error(str(e))

    try:
        if args.command == "check":
            results = harness.run_checks(cfg)
            report = harness.check_report(cfg, results)
            for r in results:
                if not r.passed:
                    print(f"FAIL {r.name}: {r.max_error:.3g} > {r.tol:.3g}", file=sys.stderr)
            _emit(_json(report), cfg.out)
            return EXIT_OK if report["passed"] else EXIT_FAIL

        if args.command == "bench":
            ns = [2**p for p in range(args.min_log2n, args.max_log2n + 1)]
            records = harness.run_bench(cfg, ns, reps=args.reps, warmup=args.warmup)
            _emit(harness.bench_csv(records), cfg.out)
            return EXIT_OK

        snapshot = args.snapshot
        if snapshot is None:
            if args.resume:
                parser.error("--resume requires --snapshot")
            fd, snapshot = tempfile.mkstemp(suffix=".lsea")
            os.close(fd)
        report = harness.stream_demo(cfg, snapshot, resume=args.resume)
        if args.snapshot is None:
            os.unlink(snapshot)
        _emit(_json(report), cfg.out)
        return EXIT_OK if report["passed"] else EXIT_FAIL
    except (SnapshotError, OSError) as e:
        print(f"lseattn: error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
