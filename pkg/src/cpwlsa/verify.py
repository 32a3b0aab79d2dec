"""Self-checks behind ``cpwlsa verify``.

Each check returns a :class:`CheckResult`; the CLI exits non-zero when any
result failed. ``inject_fault`` flips one control flag on a fresh MHP grid
before simulating, which must trip the mode-invariant guard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpwl import (
    FunctionId,
    build_segment_table,
    ipf,
    mhp,
    segment_index_floor,
    segment_index_shift,
)
from .fabric import (
    GridMode,
    ModeInvariantError,
    SystolicConfig,
    configure_grid,
    gemm_cycle_model,
    mhp_cycle_model,
    rearrange_kb,
    rearrange_x,
    sim_gemm,
    sim_ipf,
    sim_mhp,
)
from .fixedpoint import Q8_8, FixedPointFormat, QuantizedMatrix, matmul_fixed
from .rng import make_rng

SCOPES = ("ALL", "CPWL", "FABRIC", "NN")
EXHAUSTIVE_FUNCTIONS = (FunctionId.GELU, FunctionId.EXP, FunctionId.RSQRT, FunctionId.RECIPROCAL)
EXHAUSTIVE_GRANULARITIES = (0.125, 0.25, 0.5, 1.0)
ALL_INT16 = np.arange(-(1 << 15), 1 << 15, dtype=np.int64)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def exhaustive_index_check(fn: FunctionId, g: float, fmt: FixedPointFormat = Q8_8) -> CheckResult:
    """Shift indexer against the floor formula, plus fabric IPF against functional IPF, on all 65536 inputs."""
    table = build_segment_table(fn, g)
    shift = segment_index_shift(ALL_INT16, fmt, table)
    floor = segment_index_floor(ALL_INT16, fmt, table)
    mismatches = int(np.count_nonzero(shift != floor))
    out_of_range = int(np.count_nonzero((shift < 0) | (shift >= table.num_segments)))
    x = QuantizedMatrix(ALL_INT16.reshape(256, 256), fmt)
    k_sim, b_sim, _ = sim_ipf(x, table, SystolicConfig())
    _, k_ref, b_ref = ipf(x, table)
    ipf_ok = k_sim == k_ref and b_sim == b_ref
    ok = mismatches == 0 and out_of_range == 0 and ipf_ok
    return CheckResult(
        f"cpwl.exhaustive[{fn.value} g={g}]",
        ok,
        f"{ALL_INT16.size} inputs checked, {mismatches} index mismatches, "
        f"{out_of_range} out of range, fabric IPF {'matches' if ipf_ok else 'DIFFERS'}",
    )


def _rand_q(rng, rows, cols, fmt=Q8_8, lo=-32768, hi=32767):
    return QuantizedMatrix(rng.integers(lo, hi, size=(rows, cols), endpoint=True), fmt)


def random_fabric_check(cases: int, seed: int = 0, max_dim: int = 64, configs=None) -> CheckResult:
    """sim_gemm and sim_mhp against the oracles on random shapes, plus diagonal exclusivity."""
    configs = configs or (
        SystolicConfig(),
        SystolicConfig(pe_rows=4, pe_cols=4, macs_per_pe=8),
        SystolicConfig(pe_rows=16, pe_cols=16, macs_per_pe=16),
        SystolicConfig(pe_rows=4, pe_cols=8, macs_per_pe=2),
    )
    rng = make_rng(seed, "verify-fabric")
    failures = []
    for case in range(cases):
        cfg = configs[case % len(configs)]
        m, n, k = (int(v) for v in rng.integers(1, max_dim, size=3, endpoint=True))
        fa, fw, fo = (FixedPointFormat(int(v)) for v in rng.integers(0, 15, size=3, endpoint=True))
        span = 2048 if case % 2 else 32767  # odd cases stay clear of the 32-bit clamp
        a = _rand_q(rng, m, k, fa, -span, span)
        w = _rand_q(rng, k, n, fw, -span, span)
        c_sim, rep = sim_gemm(a, w, cfg, fo)
        if c_sim != matmul_fixed(a, w, fo) or rep != gemm_cycle_model(m, n, k, cfg):
            failures.append(f"gemm case {case} {m}x{k}x{n} on {cfg.label()}")
        fx = FixedPointFormat(int(rng.integers(0, 14, endpoint=True)))
        fk, fb, fy = (FixedPointFormat(int(v)) for v in rng.integers(0, 15, size=3, endpoint=True))
        x, kk, bb = _rand_q(rng, m, n, fx), _rand_q(rng, m, n, fk), _rand_q(rng, m, n, fb)
        grid = configure_grid(cfg, GridMode.MHP)
        y_sim, rep = sim_mhp(rearrange_x(x, cfg), rearrange_kb(kk, bb, cfg), cfg, fy, grid)
        off_diag = grid.mac_activity.sum() - np.trace(grid.mac_activity)
        if y_sim != mhp(x, kk, bb, fy) or rep != mhp_cycle_model(m, n, cfg):
            failures.append(f"mhp case {case} {m}x{n} on {cfg.label()}")
        if off_diag != 0 or grid.mac_activity.sum() != 2 * m * n:
            failures.append(f"diagonal exclusivity case {case}: off-diagonal {off_diag}")
    detail = f"{cases} random GEMM + MHP cases, {len(failures)} failures"
    if failures:
        detail += " (first: " + failures[0] + ")"
    return CheckResult("fabric.random_bit_exact", not failures, detail)


def baseline_check(seed: int = 0) -> CheckResult:
    """GEMM outputs and cycles agree between the reconfigurable and the plain grid."""
    rng = make_rng(seed, "verify-baseline")
    bad = 0
    points = 0
    for rows, cols in ((4, 4), (8, 8), (16, 16)):
        for mac in (8, 16, 32):
            cfg = SystolicConfig(pe_rows=rows, pe_cols=cols, macs_per_pe=mac)
            for size in (1, 7, 32, 50):
                a = _rand_q(rng, size, size)
                w = _rand_q(rng, size, size)
                g1 = configure_grid(cfg)
                g2 = configure_grid(cfg, baseline=True)
                c1, r1 = sim_gemm(a, w, cfg, grid=g1)
                c2, r2 = sim_gemm(a, w, cfg, grid=g2)
                same = (
                    c1 == c2
                    and r1 == r2
                    and g1.cycle == g2.cycle
                    and np.array_equal(g1.mac_activity, g2.mac_activity)
                    and np.array_equal(g1.forwarded, g2.forwarded)
                )
                bad += not same
                points += 1
    return CheckResult("fabric.gemm_non_interference", bad == 0, f"{points} grid points, {bad} differ")


def fault_injection_check(inject: bool) -> CheckResult:
    """Run one MHP; with ``inject`` a transmission PE has its forward flag cleared."""
    cfg = SystolicConfig()
    grid = configure_grid(cfg, GridMode.MHP)
    if inject:
        grid.inject_flag_fault(0, 1, "c1")
    x = QuantizedMatrix.from_real(np.ones((8, 8)), Q8_8)
    try:
        sim_mhp(rearrange_x(x, cfg), rearrange_kb(x, x, cfg), cfg, grid=grid)
    except ModeInvariantError as exc:
        return CheckResult("fabric.mode_invariant", False, str(exc))
    return CheckResult("fabric.mode_invariant", True, "C1/C2 flags agree with PE modes on every cycle")


def nn_checks(seed: int = 0) -> list[CheckResult]:
    from .nn import (
        FunctionalBackend,
        layernorm_reference,
        layernorm_table,
        run_layernorm,
        run_network,
        run_softmax,
        softmax_reference,
        softmax_tables,
    )
    from .nn.tasks import blobs_network, make_blobs

    cfg = SystolicConfig()
    rng = make_rng(seed, "verify-nn")
    out = []
    x = QuantizedMatrix.from_real(rng.uniform(-4, 4, size=(128, 10)), Q8_8)
    tables = softmax_tables(0.25, 10)
    y, _ = run_softmax(x, tables, cfg)
    y_fn, _ = run_softmax(x, tables, backend=FunctionalBackend(cfg))
    sums = np.abs(y.to_real().sum(axis=1) - 1.0).max()
    err = np.abs(y.to_real() - softmax_reference(x.to_real())).max()
    out.append(CheckResult("nn.softmax", y == y_fn and sums <= 0.05, f"max |row sum - 1| = {sums:.4f}, max elem err = {err:.4f}"))
    x = QuantizedMatrix.from_real(rng.uniform(-4, 4, size=(128, 16)), Q8_8)
    table = layernorm_table(0.25)
    y, _ = run_layernorm(x, table, cfg=cfg)
    y_fn, _ = run_layernorm(x, table, backend=FunctionalBackend(cfg))
    err = np.abs(y.to_real() - layernorm_reference(x.to_real())).max()
    out.append(CheckResult("nn.layernorm", y == y_fn and err <= 0.05, f"max elem err = {err:.4f}"))
    net = blobs_network(seed)
    xb, _ = make_blobs(200, seed)
    y_fab, r_fab = run_network(net, xb, cfg, "fabric")
    y_fun, r_fun = run_network(net, xb, cfg, "functional")
    out.append(CheckResult("nn.stage_equivalence", y_fab == y_fun and r_fab == r_fun, "toy network, fabric vs functional engine"))
    return out


def run_verify(scope: str = "ALL", inject_fault: bool = False, seed: int = 0, cases: int = 200) -> list[CheckResult]:
    scope = scope.upper()
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {', '.join(SCOPES)}")
    results = []
    if scope in ("ALL", "CPWL"):
        for fn in EXHAUSTIVE_FUNCTIONS:
            for g in EXHAUSTIVE_GRANULARITIES:
                results.append(exhaustive_index_check(fn, g))
    if scope in ("ALL", "FABRIC"):
        results.append(fault_injection_check(inject_fault))
        results.append(random_fabric_check(cases, seed))
        results.append(baseline_check(seed))
    if scope in ("ALL", "NN"):
        results.extend(nn_checks(seed))
    return results


