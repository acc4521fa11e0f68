"""Command-line harness: run inference, verify against the oracle, benchmark."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .bench import fused_vs_oracle_speedup, run_benchmark
from .errors import BitnnError
from .graph import load
from .oracle import verify_graph
from .rawio import read_byte_tensor, write_float_tensor


def _load_model(path: str):
    if not Path(path).is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    return load(path)


def cmd_run(args) -> int:
    graph = _load_model(args.model)
    if not Path(args.input).is_file():
        raise FileNotFoundError(f"input file not found: {args.input}")
    img = read_byte_tensor(args.input)
    t0 = time.perf_counter()
    out = graph.infer(img, threads=args.threads)
    dt = (time.perf_counter() - t0) * 1000.0
    write_float_tensor(args.output, out)
    print(f"inference: {dt:.3f} ms, output {out.shape.as_tuple()} -> {args.output}")
    return 0


def cmd_verify(args) -> int:
    graph = _load_model(args.model)
    report = verify_graph(graph, trials=args.trials, seed=args.seed, threads=args.threads)
    print(report.summary())
    return 0 if report.ok else 1


def cmd_bench(args) -> int:
    graph = _load_model(args.model)
    report = run_benchmark(graph, repeats=args.repeats, threads=args.threads,
                           seed=args.seed, model_name=Path(args.model).stem)
    if args.compare_oracle:
        report.oracle_compare = fused_vs_oracle_speedup(repeats=max(args.repeats, 5),
                                                        threads=args.threads)
    if args.report_dir:
        outdir = Path(args.report_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        report.write_csv(outdir / "bench.csv")
        report.render_figure(outdir / "bench.png")
        (outdir / "bench.json").write_text(json.dumps(report.to_json_dict(), indent=2))
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2))
    else:
        print(report.to_text())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitnn",
                                description="binary neural network inference engine")
    sub = p.add_subparsers(dest="command", required=True)
    default_threads = os.cpu_count() or 1

    run_p = sub.add_parser("run", help="run inference on a raw byte tensor dump")
    run_p.add_argument("--model", required=True)
    run_p.add_argument("--input", required=True)
    run_p.add_argument("--output", required=True)
    run_p.add_argument("--threads", type=int, default=default_threads)
    run_p.set_defaults(func=cmd_run)

    ver_p = sub.add_parser("verify", help="check the fused engine against the oracle")
    ver_p.add_argument("--model", required=True)
    ver_p.add_argument("--trials", type=int, default=10)
    ver_p.add_argument("--seed", type=int, default=0)
    ver_p.add_argument("--threads", type=int, default=1)
    ver_p.set_defaults(func=cmd_verify)

    bench_p = sub.add_parser("bench", help="per-layer timing report")
    bench_p.add_argument("--model", required=True)
    bench_p.add_argument("--repeats", type=int, default=5)
    bench_p.add_argument("--threads", type=int, default=default_threads)
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.add_argument("--json", action="store_true", help="print the report as JSON")
    bench_p.add_argument("--report-dir", default=None,
                         help="write bench.csv, bench.png, bench.json here")
    bench_p.add_argument("--compare-oracle", action="store_true",
                         help="also time fused conv vs the float oracle conv")
    bench_p.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BitnnError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
