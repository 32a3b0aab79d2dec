"""``cpwlsa`` command line.

Exit codes: 0 success, 1 an invariant or oracle check failed, 2 bad usage
or configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .cpwl import (
    FunctionId,
    approximation_error_report,
    build_segment_table,
    ipf,
    mhp,
    save_table,
)
from .fabric import (
    FabricPathError,
    GridMode,
    ModeInvariantError,
    SystolicConfig,
    calibrate_output_bus_width,
    configure_grid,
    gemm_cycle_model,
    load_config,
    rearrange_kb,
    rearrange_x,
    sim_gemm,
    sim_ipf,
    sim_mhp,
)
from .fixedpoint import Q8_8, FixedPointFormat, QuantizedMatrix, matmul_fixed
from .report import csv_text, metadata_line, write_csv
from .rng import make_rng

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _arrays(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        try:
            r, c = item.lower().split("x")
            out.append((int(r), int(c)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"array sizes look like 8x8, got {item!r}") from exc
    return out


def _config(args) -> SystolicConfig:
    if getattr(args, "config", None):
        try:
            return load_config(args.config)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot load config {args.config}: {exc}") from exc
    return SystolicConfig()


def _emit(args, header, rows, cfg, **meta) -> None:
    line = metadata_line(cfg, **meta)
    if args.out:
        write_csv(args.out, header, rows, line)
    else:
        sys.stdout.write(csv_text(header, rows, line))


def _pool_map(fn, items, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))  # results come back in submission order
    return [fn(item) for item in items]


# ------------------------------------------------------------------ table


def cmd_table(args) -> int:
    fk = FixedPointFormat.parse(args.format_k) if args.format_k else None
    fb = FixedPointFormat.parse(args.format_b) if args.format_b else None
    try:
        table = build_segment_table(args.function, args.granularity, args.x_min, args.x_max, fk, fb)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_table(table, args.out)
    err = approximation_error_report(table, args.samples)
    print(
        f"{table.function_id.value}: num_segments={table.num_segments} "
        f"range=[{table.x_min}, {table.x_max}) k={table.format_k} b={table.format_b} "
        f"max_abs_err={err.max_abs_err:.6g}"
    )
    return EXIT_OK


def cmd_approx_err(args) -> int:
    rows = []
    for fn in args.function.split(","):
        for g in args.granularity:
            try:
                table = build_segment_table(fn.strip().upper(), g)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            r = approximation_error_report(table, args.samples)
            rows.append([table.function_id.value, g, table.num_segments, str(table.format_k),
                         str(table.format_b), r.max_abs_err, r.mean_abs_err, r.argmax_x])
    header = ["function", "granularity", "num_segments", "format_k", "format_b",
              "max_abs_err", "mean_abs_err", "argmax_x"]
    _emit(args, header, rows, SystolicConfig(), samples=args.samples)
    return EXIT_OK


# --------------------------------------------------------------- gemm/mhp

REPORT_HEADER = ["config_id", "mode", "M", "N", "K", "fill", "compute", "drain", "ipf", "total",
                 "mac_ops", "utilization", "gops", "gnfs", "drain_fraction"]


def _report_row(cfg, mode: str, m: int, n: int, k, r) -> list:
    return [cfg.label(), mode, m, n, k, r.fill_cycles, r.compute_cycles, r.drain_cycles, r.ipf_cycles,
            r.total_cycles, r.mac_ops, r.utilization, r.gops, r.gnfs, r.drain_fraction]


def _random_q(rng, rows, cols, fmt=Q8_8):
    return QuantizedMatrix(rng.integers(-32768, 32767, size=(rows, cols), endpoint=True), fmt)


def cmd_gemm(args) -> int:
    cfg = _config(args)
    rng = make_rng(args.seed, "cli-gemm")
    a = _random_q(rng, args.m, args.k)
    w = _random_q(rng, args.k, args.n)
    c, report = sim_gemm(a, w, cfg)
    failures = []
    if c != matmul_fixed(a, w):
        failures.append("output differs from the 32-bit accumulator oracle")
    if report != gemm_cycle_model(args.m, args.n, args.k, cfg):
        failures.append("cycle count differs from the phase model")
    if args.baseline_model:
        c0, r0 = sim_gemm(a, w, cfg, baseline=True)
        if c0 != c or r0 != report:
            failures.append("baseline grid (no nonlinear support) disagrees with the reconfigurable grid")
        else:
            print("baseline grid: outputs and cycles identical")
    print(f"GEMM {args.m}x{args.k}x{args.n} on {cfg.label()}: total={report.total_cycles} "
          f"utilization={report.utilization:.4f} gops={report.gops:.4f}")
    _emit(args, REPORT_HEADER, [_report_row(cfg, "GEMM", args.m, args.n, args.k, report)], cfg, seed=args.seed)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


def cmd_mhp(args) -> int:
    cfg = _config(args)
    try:
        table = build_segment_table(args.function, args.granularity)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rng = make_rng(args.seed, "cli-mhp")
    x = QuantizedMatrix(rng.integers(-2048, 2047, size=(args.rows, args.cols), endpoint=True), Q8_8)
    try:
        k, b, ipf_cycles = sim_ipf(x, table, cfg)
    except FabricPathError as exc:
        raise UsageError(str(exc)) from exc
    grid = configure_grid(cfg, GridMode.MHP)
    if args.inject_fault:
        grid.inject_flag_fault(0, 1, "c1")
    try:
        y, report = sim_mhp(rearrange_x(x, cfg), rearrange_kb(k, b, cfg), cfg, grid=grid)
    except ModeInvariantError as exc:
        print(f"FAIL {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = dataclasses.replace(report, ipf_cycles=ipf_cycles)
    _, k_ref, b_ref = ipf(x, table)
    failures = []
    if y != mhp(x, k_ref, b_ref):
        failures.append("output differs from the functional CPWL evaluation")
    off_diag = int(grid.mac_activity.sum() - np.trace(grid.mac_activity))
    if off_diag or grid.mac_activity.sum() != 2 * x.rows * x.cols:
        failures.append(f"diagonal exclusivity broken: {off_diag} off-diagonal multiplies")
    print(f"MHP {table.function_id.value} {args.rows}x{args.cols} on {cfg.label()}: "
          f"total={report.total_cycles} gnfs={report.gnfs:.4f} multiplies={int(grid.mac_activity.sum())}")
    _emit(args, REPORT_HEADER, [_report_row(cfg, "MHP", args.rows, args.cols, "", report)], cfg, seed=args.seed)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


# --------------------------------------------------------------- networks


def _network(args):
    from .nn import load_network
    from .nn.tasks import load_task

    try:
        net, eval_set = load_task(args.task, args.seed, args.samples)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.manifest:
        try:
            net = load_network(args.manifest)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load manifest {args.manifest}: {exc}") from exc
    return net, eval_set


def cmd_run_net(args) -> int:
    from .nn import save_network
    from .nn.runner import run_network

    cfg = _config(args)
    net, (x, labels) = _network(args)
    if args.granularity is not None:
        net = net.with_granularity(args.granularity)
    if args.save_manifest:
        save_network(net, args.save_manifest)
    trace = []
    try:
        y, report = run_network(net, x, cfg, "functional" if args.functional else "fabric", trace)
    except FabricPathError as exc:
        raise UsageError(str(exc)) from exc
    acc = float(np.mean(y.to_real().argmax(axis=1) == labels))
    print(f"{net.name}: g={net.granularity} samples={len(labels)} accuracy={acc:.4f} "
          f"total_cycles={report.total_cycles} gops={report.gops:.4f} gnfs={report.gnfs:.4f}")
    rows = [[t.index, t.kind.value] + _report_row(cfg, t.mode, *t.dims, t.report) for t in trace]
    _emit(args, ["layer", "kind"] + REPORT_HEADER, rows, cfg, seed=args.seed, granularity=net.granularity)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .nn import accuracy_sweep

    cfg = _config(args)
    net, eval_set = _network(args)
    engine = "functional" if args.functional else "fabric"
    try:
        rep = accuracy_sweep(net, eval_set, args.granularity, cfg, engine, task_id=net.name, workers=args.workers)
    except FabricPathError as exc:
        raise UsageError(f"{exc}; pass --functional to use division-based indexing") from exc
    header = ["task", "samples", "engine", "baseline_float64", "int16_exact"]
    row = [rep.task_id, rep.samples, engine, rep.baseline_metric, rep.int16_metric]
    for g, m, d in zip(rep.granularities, rep.cpwl_metrics, rep.deltas):
        header += [f"cpwl_g{g:g}", f"delta_g{g:g}"]
        row += [m, d]
    for g, a, dev in zip(rep.granularities, rep.argmax_agreement_fraction, rep.mean_abs_deviation):
        header += [f"argmax_agree_g{g:g}", f"mean_abs_dev_g{g:g}"]
        row += [a, dev]
    _emit(args, header, [row], cfg, seed=args.seed)
    print(f"{rep.task_id}: float64={rep.baseline_metric:.4f} int16={rep.int16_metric:.4f} "
          + " ".join(f"delta(g={g:g})={d:+.4f}" for g, d in zip(rep.granularities, rep.deltas)))
    if rep.invariant_failures:
        for f in rep.invariant_failures:
            print(f"FAIL {f}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ------------------------------------------------------------------ cliff


def _cliff_point(job):
    cfg, size, simulate, seed = job
    model = gemm_cycle_model(size, size, size, cfg)
    if simulate:
        rng = make_rng(seed, f"cliff-{cfg.label()}-{size}")
        a = _random_q(rng, size, size)
        w = _random_q(rng, size, size)
        _, sim = sim_gemm(a, w, cfg)
        if sim != model:
            return model, False
    return model, True


def cmd_cliff(args) -> int:
    base = _config(args)
    if args.calibrate:
        base = dataclasses.replace(base, output_bus_width=calibrate_output_bus_width(base=base))
    jobs = []
    for rows, cols in args.arrays:
        for mac in args.macs:
            try:
                cfg = dataclasses.replace(base, pe_rows=rows, pe_cols=cols, macs_per_pe=mac)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            for size in args.sizes:
                jobs.append((cfg, size, args.simulate, args.seed))
    results = _pool_map(_cliff_point, jobs, args.workers)
    rows, mismatches = [], 0
    for (cfg, size, _, _), (r, ok) in zip(jobs, results):
        mismatches += not ok
        rows.append(_report_row(cfg, "GEMM", size, size, size, r)
                    + [cfg.pe_rows, cfg.pe_cols, cfg.macs_per_pe, int(r.compute_cycles >= r.fill_cycles)])
    header = REPORT_HEADER + ["pe_rows", "pe_cols", "macs_per_pe", "compute_bound"]
    _emit(args, header, rows, base, seed=args.seed)
    if mismatches:
        print(f"FAIL {mismatches} grid points: stepped simulation disagrees with the phase model", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ----------------------------------------------------------------- verify


def cmd_verify(args) -> int:
    from .verify import run_verify

    results = run_verify(args.scope, inject_fault=args.inject_fault, seed=args.seed, cases=args.cases)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpwlsa", description="CPWL nonlinearities on a simulated systolic array")
    p.add_argument("--version", action="version", version=f"cpwlsa {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", help="JSON array configuration (unknown keys rejected)")
        sp.add_argument("--seed", type=int, default=0, help="64-bit seed for every random stream")
        sp.add_argument("--out", required=out_required, help="output file (CSV unless noted)")
        return sp

    functions = [f.value for f in FunctionId]

    sp = common(sub.add_parser("table", help="build a segment table file"), out_required=True)
    sp.add_argument("--function", type=str.upper, choices=functions, default="GELU")
    sp.add_argument("--granularity", type=float, default=0.25)
    sp.add_argument("--x-min", type=float)
    sp.add_argument("--x-max", type=float)
    sp.add_argument("--format-k", help="slope format, e.g. Q3.13")
    sp.add_argument("--format-b", help="intercept format, e.g. Q8.8")
    sp.add_argument("--samples", type=int, default=100_000)
    sp.set_defaults(func=cmd_table)

    sp = common(sub.add_parser("approx-err", help="CPWL error against the float64 reference"))
    sp.add_argument("--function", default="GELU", help="comma-separated function names")
    sp.add_argument("--granularity", type=_floats, default=[0.125, 0.25, 0.5, 1.0])
    sp.add_argument("--samples", type=int, default=100_000)
    sp.set_defaults(func=cmd_approx_err)

    sp = common(sub.add_parser("gemm", help="simulate one GEMM and check it"))
    sp.add_argument("--m", type=int, default=32)
    sp.add_argument("--n", type=int, default=32)
    sp.add_argument("--k", type=int, default=32)
    sp.add_argument("--baseline-model", action="store_true", help="also run a grid without nonlinear support")
    sp.set_defaults(func=cmd_gemm)

    sp = common(sub.add_parser("mhp", help="simulate IPF + MHP for one table"))
    sp.add_argument("--rows", type=int, default=16)
    sp.add_argument("--cols", type=int, default=16)
    sp.add_argument("--function", type=str.upper, choices=functions, default="GELU")
    sp.add_argument("--granularity", type=float, default=0.25)
    sp.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_mhp)

    def net_args(sp):
        sp.add_argument("--task", default="blobs", help="blobs or digits")
        sp.add_argument("--manifest", help="network manifest; the task still supplies the eval set")
        sp.add_argument("--samples", type=int, default=10_000, help="eval samples (blobs)")
        sp.add_argument("--functional", action="store_true", help="golden functions instead of the stepped grid")
        sp.add_argument("--workers", type=int, default=1)

    sp = common(sub.add_parser("run-net", help="run a network once"))
    net_args(sp)
    sp.add_argument("--granularity", type=float)
    sp.add_argument("--save-manifest", help="write the network manifest and weight file here")
    sp.set_defaults(func=cmd_run_net)

    sp = common(sub.add_parser("sweep", help="accuracy against granularity"))
    net_args(sp)
    sp.add_argument("--granularity", type=_floats, default=[0.125, 0.25, 0.5, 1.0])
    sp.set_defaults(func=cmd_sweep)

    sp = common(sub.add_parser("cliff", help="GEMM throughput across array and matrix sizes"))
    sp.add_argument("--arrays", type=_arrays, default=[(4, 4), (8, 8), (16, 16)])
    sp.add_argument("--macs", type=_ints, default=[8, 16, 32])
    sp.add_argument("--sizes", type=_ints, default=[32, 64, 128, 256, 512])
    sp.add_argument("--simulate", action="store_true", help="cross-check every point with the stepped grid")
    sp.add_argument("--calibrate", action="store_true", help="fit output_bus_width before running")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_cliff)

    sp = common(sub.add_parser("verify", help="oracle-equivalence and invariant suites"))
    sp.add_argument("--scope", type=str.upper, choices=["ALL", "CPWL", "FABRIC", "NN"], default="ALL")
    sp.add_argument("--cases", type=int, default=200, help="random fabric cases")
    sp.add_argument("--inject-fault", action="store_true", help="test hook: mis-set one PE's C1 flag")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
