"""Benchmark and analysis command line.

Subcommands: inspect (stats, storage, slice census per mode), convert
(canonicalize/re-sort/rewrite), mttkrp (timed kernel runs with op counts and
optional oracle check), cpd (ALS driver with fit history CSV), simulate
(fiber-threshold sweep through the scheduling cost model), gen (synthetic
tensor writer).

Exit codes: 0 success, 2 bad arguments, 3 missing or malformed input,
4 a requested --check failed, 1 runtime failure (e.g. ALS divergence).
Every subcommand takes --json for machine-readable stdout.  Seeds fall back
to the TENKIT_SEED environment variable, then 0.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import os
import statistics
import sys
import time

import numpy as np

from .balance import SplitConfig, assign_slice_blocks, split_fibers
from .coo import (
    CapacityError,
    CooTensor,
    ParseError,
    allmode_order,
    canonicalize,
    compute_stats,
    load_frostt,
    save_frostt,
    sort_by_mode_order,
)
from .cpd import TENSOR_FORMATS, NumericalError, cp_als
from .formats import build_csf, build_hbcsf, slice_census, storage_words
from .generate import generate_tensor
from .kernels import (
    mttkrp_coo,
    mttkrp_csf,
    mttkrp_dense_oracle,
    mttkrp_hbcsf,
    mttkrp_scheduled,
)
from .schedsim import SWEEP_COLUMNS, MachineModel, sweep_split

CHECK_TOLERANCE = 1e-8
BENCH_RUNS = 5


def _err(message) -> None:
    print(f"tenkit: error: {message}", file=sys.stderr)


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("TENKIT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"TENKIT_SEED must be an integer, got {env!r}") from None


def _parse_dims(text: str) -> tuple[int, ...]:
    parts = [p for p in text.lower().replace("x", ",").split(",") if p]
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError(f"cannot parse dimensions from {text!r}") from None
    if len(dims) < 3 or any(d < 1 for d in dims):
        raise ValueError(f"need at least 3 positive dimensions, got {text!r}")
    return dims


def _parse_mode_order(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise ValueError(f"cannot parse mode order from {text!r}") from None


def _parse_threshold(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity", "none"):
        return math.inf
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"fiber threshold must be an integer or 'inf', got {text!r}") from None
    if value < 1:
        raise ValueError("fiber threshold must be at least 1")
    return float(value)


def _parse_thresholds(text: str) -> list[float]:
    values = [_parse_threshold(p) for p in text.split(",") if p.strip()]
    if not values:
        raise ValueError("no thresholds given")
    return values


def _emit_json(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


@contextlib.contextmanager
def _open_out(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _load(args) -> CooTensor:
    dims = getattr(args, "dims", None)
    return canonicalize(load_frostt(args.tensor, dims=dims))


def cmd_inspect(args) -> int:
    t = _load(args)
    value_bytes = t.nnz * (args.value_bits // 8)
    coo_rep = storage_words(t)

    def fmt_storage(report):
        d = report.to_dict()
        d["value_bytes"] = value_bytes
        d["total_bytes"] = d["index_bytes"] + value_bytes
        return d

    modes = []
    for mode in range(t.order):
        mo = allmode_order(t.dims, mode)
        stats = compute_stats(t, mo)
        tree = build_csf(t, mo)
        hybrid = build_hbcsf(t, mo)
        modes.append(
            {
                "mode": mode,
                "mode_order": list(mo),
                "stats": stats.to_dict(),
                "slice_census": slice_census(tree),
                "storage_csf": fmt_storage(storage_words(tree)),
                "storage_hbcsf": fmt_storage(storage_words(hybrid)),
            }
        )
    record = {
        "command": "inspect",
        "tensor": args.tensor,
        "order": t.order,
        "dims": list(t.dims),
        "nnz": t.nnz,
        "density": t.nnz / math.prod(float(d) for d in t.dims),
        "value_bits": args.value_bits,
        "storage_coo": fmt_storage(coo_rep),
        "modes": modes,
    }
    if args.json:
        _emit_json(record)
        return 0
    print(f"{args.tensor}: order {t.order}, dims {t.dims}, nnz {t.nnz}")
    print(f"  density {record['density']:.3e}")
    print(f"  coo storage: {coo_rep.index_words} index words")
    for m in modes:
        st = m["stats"]
        print(
            f"  mode {m['mode']} (order {tuple(m['mode_order'])}): "
            f"{st['slice_count']} slices, {st['fiber_count']} fibers"
        )
        print(
            f"    nnz/slice mean {st['mean_nnz_per_slice']:.2f} "
            f"stddev {st['stddev_nnz_per_slice']:.2f} max {st['max_nnz_per_slice']}"
        )
        print(
            f"    nnz/fiber mean {st['mean_nnz_per_fiber']:.2f} "
            f"stddev {st['stddev_nnz_per_fiber']:.2f} max {st['max_nnz_per_fiber']}"
        )
        census = m["slice_census"]
        print(
            f"    slice census: {census['coo']} coo, {census['csl']} csl, "
            f"{census['csf']} csf"
        )
        print(
            f"    index words: csf {m['storage_csf']['index_words']}, "
            f"hbcsf {m['storage_hbcsf']['index_words']}"
        )
    return 0


def cmd_convert(args) -> int:
    t = _load(args)
    mo = None
    if args.mode_order is not None:
        mo = _parse_mode_order(args.mode_order)
        t = sort_by_mode_order(t, mo)
    save_frostt(t, args.out)
    record = {
        "command": "convert",
        "tensor": args.tensor,
        "out": args.out,
        "dims": list(t.dims),
        "nnz": t.nnz,
        "mode_order": list(mo) if mo is not None else None,
    }
    if args.json:
        _emit_json(record)
    else:
        print(f"wrote {t.nnz} nonzeros to {args.out}")
    return 0


def _bench(run) -> tuple[float, list[float], np.ndarray, object]:
    """One warmup, then BENCH_RUNS timed runs; returns the median."""
    y, ops = run()
    times = []
    for _ in range(BENCH_RUNS):
        tic = time.perf_counter()
        y, ops = run()
        times.append(time.perf_counter() - tic)
    return statistics.median(times), times, y, ops


def _row_deviation(y: np.ndarray, oracle: np.ndarray) -> float:
    num = np.linalg.norm(y - oracle, axis=1)
    den = 1.0 + np.linalg.norm(oracle, axis=1)
    return float((num / den).max(initial=0.0))


def _prepare_mttkrp(t, fmt, mo, cfg, threshold, threads):
    """Build the requested representation; returns (runner, prep_seconds, rep)."""
    mode = mo[0]
    tic = time.perf_counter()
    if fmt == "coo":
        rep = sort_by_mode_order(t, mo)
        prep = time.perf_counter() - tic
        return (lambda f: mttkrp_coo(rep, f, mode, threads=threads)), prep, rep
    if fmt in ("csf", "bcsf"):
        rep = build_csf(t, mo)
        if fmt == "bcsf" and math.isfinite(threshold):
            rep = split_fibers(rep, cfg)
        schedule = assign_slice_blocks(rep, cfg) if threads > 1 else None
        prep = time.perf_counter() - tic
        if schedule is None:
            return (lambda f: mttkrp_csf(rep, f, mode)), prep, rep
        return (
            lambda f: mttkrp_scheduled(rep, schedule, f, mode, threads=threads)
        ), prep, rep
    if fmt == "hbcsf":
        rep = build_hbcsf(t, mo)
        if math.isfinite(threshold):
            rep = split_fibers(rep, cfg)
        schedule = (
            assign_slice_blocks(rep.csf_part, cfg) if threads > 1 else None
        )
        prep = time.perf_counter() - tic
        return (
            lambda f: mttkrp_hbcsf(rep, f, mode, schedule=schedule, threads=threads)
        ), prep, rep
    raise ValueError(f"unknown format {fmt!r}")


def cmd_mttkrp(args) -> int:
    t = _load(args)
    if not 0 <= args.mode < t.order:
        raise ValueError(f"mode {args.mode} out of range for order {t.order}")
    seed = _resolve_seed(args.seed)
    rng = np.random.default_rng(seed)
    factors = [rng.random((d, args.rank)) for d in t.dims]
    mo = allmode_order(t.dims, args.mode)
    threshold = args.fiber_threshold
    cfg = SplitConfig(
        fiber_threshold=int(threshold) if math.isfinite(threshold) else 1,
        block_size=args.block_size,
    )
    run, prep, rep = _prepare_mttkrp(t, args.format, mo, cfg, threshold, args.threads)
    wall, runs, y, ops = _bench(lambda: run(factors))
    record = {
        "command": "mttkrp",
        "tensor": args.tensor,
        "dims": list(t.dims),
        "nnz": t.nnz,
        "format": args.format,
        "mode": args.mode,
        "mode_order": list(mo),
        "rank": args.rank,
        "threads": args.threads,
        "seed": seed,
        "fiber_threshold": "inf" if math.isinf(threshold) else int(threshold),
        "preprocessing_seconds": prep,
        "wall_seconds": wall,
        "wall_seconds_runs": runs,
        "op_count": ops.to_dict(),
        "gflops": ops.total / max(wall, 1e-12) / 1e9,
        "checksum": {
            "sum": float(y.sum()),
            "frobenius_norm": float(np.linalg.norm(y)),
        },
    }
    if args.format in ("csf", "bcsf"):
        # alternative headline count: 2R per nonzero plus 2R per slice
        record["op_total_2smr"] = 2 * (rep.num_slices + rep.nnz) * args.rank
    failed = False
    if args.check:
        oracle = mttkrp_dense_oracle(t, factors, args.mode)
        deviation = _row_deviation(y, oracle)
        record["check_deviation"] = deviation
        record["check_passed"] = bool(deviation <= CHECK_TOLERANCE)
        failed = not record["check_passed"]
        if args.format != "coo":
            run0, prep0, _ = _prepare_mttkrp(t, "coo", mo, cfg, threshold, 1)
            wall0, _, _, _ = _bench(lambda: run0(factors))
            record["coo_wall_seconds"] = wall0
            record["coo_preprocessing_seconds"] = prep0
            if wall < wall0:
                record["iterations_to_amortize"] = max(
                    0, math.ceil((prep - prep0) / (wall0 - wall))
                )
            else:
                record["iterations_to_amortize"] = None
    if args.json:
        _emit_json(record)
    else:
        print(
            f"{args.format} mttkrp mode {args.mode} rank {args.rank}: "
            f"{wall * 1e3:.3f} ms median, {record['gflops']:.3f} gflop/s, "
            f"{ops.total} flops"
        )
        if args.check:
            state = "ok" if record["check_passed"] else "FAILED"
            print(f"check vs dense oracle: {state} (max row deviation {record['check_deviation']:.2e})")
    return 4 if failed else 0


def cmd_cpd(args) -> int:
    t = _load(args)
    seed = _resolve_seed(args.seed)
    model, history = cp_als(
        t,
        rank=args.rank,
        max_iters=args.iters,
        fit_tol=args.tol,
        tensor_format=args.format,
        seed=seed,
    )
    final = history[-1]
    if args.json:
        _emit_json(
            {
                "command": "cpd",
                "tensor": args.tensor,
                "format": args.format,
                "rank": args.rank,
                "seed": seed,
                "iterations": final.iteration,
                "fit": final.fit,
                "lambda": [float(v) for v in model.lam],
                "history": [
                    {
                        "iteration": h.iteration,
                        "fit": h.fit,
                        "delta": h.delta,
                        "mode_seconds": list(h.mode_seconds),
                        "op_counts": [op.to_dict() for op in h.op_counts],
                    }
                    for h in history
                ],
            }
        )
        return 0
    order = t.order
    header = ["iteration", "fit", "delta"]
    header += [f"seconds_mode{d}" for d in range(order)]
    header += [f"ops_mode{d}" for d in range(order)]
    with _open_out(args.out) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for h in history:
            row = [h.iteration, repr(h.fit), repr(h.delta)]
            if h.mode_seconds:
                row += [repr(s) for s in h.mode_seconds]
                row += [op.total for op in h.op_counts]
            else:
                row += [""] * (2 * order)
            writer.writerow(row)
    print(
        f"cpd rank {args.rank} on {args.format}: fit {final.fit:.6f} "
        f"after {final.iteration} iterations",
        file=sys.stderr,
    )
    return 0


def cmd_simulate(args) -> int:
    t = _load(args)
    if not 0 <= args.mode < t.order:
        raise ValueError(f"mode {args.mode} out of range for order {t.order}")
    if args.block_size % args.warp_size != 0:
        raise ValueError("block size must be a multiple of warp size")
    machine = MachineModel(
        num_sms=args.sms,
        warps_per_block=args.block_size // args.warp_size,
        warp_size=args.warp_size,
        blocks_per_sm=args.blocks_per_sm,
    )
    tree = build_csf(t, allmode_order(t.dims, args.mode))
    points = sweep_split(tree, args.thresholds, machine)
    rows = [p.to_row() for p in points]
    if args.json:
        _emit_json(
            {
                "command": "simulate",
                "tensor": args.tensor,
                "mode": args.mode,
                "machine": {
                    "num_sms": machine.num_sms,
                    "warps_per_block": machine.warps_per_block,
                    "warp_size": machine.warp_size,
                    "blocks_per_sm": machine.blocks_per_sm,
                },
                "points": rows,
            }
        )
        return 0
    with _open_out(args.out) as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return 0


def cmd_gen(args) -> int:
    seed = _resolve_seed(args.seed)
    t = generate_tensor(args.dims, args.nnz, skew=args.skew, seed=seed)
    save_frostt(t, args.out)
    record = {
        "command": "gen",
        "out": args.out,
        "dims": list(t.dims),
        "requested_nnz": args.nnz,
        "nnz": t.nnz,
        "skew": args.skew,
        "seed": seed,
    }
    if args.json:
        _emit_json(record)
    else:
        print(f"wrote {t.nnz} nonzeros to {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tenkit",
        description="Sparse tensor format, kernel, and scheduling toolbox.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_dims=True):
        p.add_argument("--json", action="store_true", help="machine-readable stdout")
        if with_dims:
            p.add_argument(
                "--dims",
                type=_parse_dims,
                default=None,
                help="override inferred dimensions, e.g. 64x64x65536",
            )

    p = sub.add_parser("inspect", help="stats, storage words, slice census")
    p.add_argument("tensor")
    p.add_argument(
        "--value-bits",
        type=int,
        choices=(32, 64),
        default=64,
        help="value width assumed in the storage byte totals",
    )
    add_common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("convert", help="canonicalize and rewrite a tensor")
    p.add_argument("tensor")
    p.add_argument("--out", required=True)
    p.add_argument("--mode-order", default=None, help="comma list, e.g. 2,0,1")
    add_common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("mttkrp", help="run and time one MTTKRP")
    p.add_argument("tensor")
    p.add_argument("--format", choices=TENSOR_FORMATS, default="hbcsf")
    p.add_argument("--mode", type=int, default=0)
    p.add_argument("--rank", type=int, default=32)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--fiber-threshold", type=_parse_threshold, default=128.0)
    p.add_argument("--block-size", type=int, default=512)
    p.add_argument(
        "--check",
        action="store_true",
        help="compare against the dense oracle and the coo baseline",
    )
    add_common(p)
    p.set_defaults(func=cmd_mttkrp)

    p = sub.add_parser("cpd", help="CP decomposition via ALS")
    p.add_argument("tensor")
    p.add_argument("--rank", type=int, default=32)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--format", choices=TENSOR_FORMATS, default="hbcsf")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="-", help="fit history CSV path (default stdout)")
    add_common(p)
    p.set_defaults(func=cmd_cpd)

    p = sub.add_parser("simulate", help="threshold sweep through the cost model")
    p.add_argument("tensor")
    p.add_argument("--mode", type=int, default=0)
    p.add_argument(
        "--thresholds",
        type=_parse_thresholds,
        default=[math.inf, 1024.0, 128.0, 32.0],
        help="comma list of fiber thresholds; 'inf' disables splitting",
    )
    p.add_argument("--sms", type=int, default=56)
    p.add_argument("--block-size", type=int, default=512)
    p.add_argument("--warp-size", type=int, default=32)
    p.add_argument("--blocks-per-sm", type=int, default=1)
    p.add_argument("--out", default="-", help="sweep CSV path (default stdout)")
    add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen", help="write a synthetic tensor")
    p.add_argument("--dims", type=_parse_dims, required=True)
    p.add_argument("--nnz", type=int, required=True)
    p.add_argument("--skew", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_gen)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        _err(exc)
        return 3
    except FileNotFoundError as exc:
        _err(f"cannot read {exc.filename}")
        return 3
    except OSError as exc:
        _err(exc)
        return 3
    except NumericalError as exc:
        _err(exc)
        return 1
    except ValueError as exc:  # includes CapacityError and bad arguments
        _err(exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
