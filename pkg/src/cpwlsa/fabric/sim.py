"""Register-level stepping of the PE grid.

Operands live in per-PE registers and hop one PE per cycle when the source
PE's ``c1`` is on; a PE multiplies when its ``c2`` is on and both of its
registers hold valid data. Tiles (GEMM) and row bands (MHP) execute one
after another on the hardware; they are stepped here in lock-step along an
extra leading array axis and their cycle counts are summed.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..cpwl import SegmentTable
from ..fixedpoint import INT32_MAX, INT32_MIN, FixedPointFormat, QuantizedMatrix, requantize
from .config import SystolicConfig
from .cycles import CycleReport, calibration_metadata, ceil_div, ipf_cycle_count, k_chunks
from .grid import GridMode, PEGrid, configure_grid
from .streams import InterleavedStream, StreamKind, rearrange_kb, rearrange_x


class FabricPathError(ValueError):
    """Input that the hardware data path cannot execute."""


class DataflowError(RuntimeError):
    """Operands met at the wrong PE or in the wrong order."""


def _bcast(mask, reg):
    return mask.reshape((1,) + mask.shape + (1,) * (reg.ndim - 3))


def _shift_right(reg, beat, fwd, counts, forwarded):
    """Move every register one PE to the right where the source forwards."""
    moving = fwd[:, :-1] & (beat[:, :-1] >= 0)
    forwarded[:, :-1] += np.where(moving, counts[:, :-1], 0)
    new_reg = np.zeros_like(reg)
    new_reg[:, :, 1:] = np.where(_bcast(moving, reg), reg[:, :, :-1], 0)
    new_beat = np.full_like(beat, -1)
    new_beat[:, 1:] = np.where(moving, beat[:, :-1], -1)
    return new_reg, new_beat


def _shift_down(reg, beat, fwd, counts, forwarded):
    moving = fwd[:-1, :] & (beat[:-1, :] >= 0)
    forwarded[:-1, :] += np.where(moving, counts[:-1, :], 0)
    new_reg = np.zeros_like(reg)
    new_reg[:, 1:, :] = np.where(_bcast(moving, reg), reg[:, :-1, :], 0)
    new_beat = np.full_like(beat, -1)
    new_beat[1:, :] = np.where(moving, beat[:-1, :], -1)
    return new_reg, new_beat


def sim_gemm(
    a: QuantizedMatrix,
    w: QuantizedMatrix,
    cfg: SystolicConfig,
    out_fmt: FixedPointFormat | None = None,
    grid: PEGrid | None = None,
    baseline: bool = False,
) -> tuple[QuantizedMatrix, CycleReport]:
    """Output-stationary GEMM ``A @ W`` on the grid.

    ``A`` streams in from the left (row ``r`` skewed by ``r`` cycles), ``W``
    from the top (column ``c`` skewed by ``c``); each PE consumes ``m``
    reduction elements per beat and keeps a wide accumulator. Results are
    clamped to 32 bits and rounded once into ``out_fmt``.
    """
    if a.cols != w.rows:
        raise ValueError(f"inner dimensions differ: {a.shape} x {w.shape}")
    grid = grid or configure_grid(cfg, GridMode.GEMM, baseline)
    if grid.mode is not GridMode.GEMM:
        raise ValueError("grid is not configured for GEMM")
    out_fmt = out_fmt or a.fmt
    R, C, m = cfg.pe_rows, cfg.pe_cols, cfg.macs_per_pe
    M, K = a.shape
    N = w.cols
    tm, tn = ceil_div(M, R), ceil_div(N, C)

    A = np.zeros((tm * R, K), dtype=np.int64)
    A[:M] = a.data
    A = A.reshape(tm, R, K)
    W = np.zeros((K, tn * C), dtype=np.int64)
    W[:, :N] = w.data
    W = W.reshape(K, tn, C).transpose(1, 0, 2)
    # number of tiles in which PE row r / column c holds a real (unpadded) element
    rows_valid = (np.arange(tm * R) < M).reshape(tm, R).sum(axis=0)
    cols_valid = (np.arange(tn * C) < N).reshape(tn, C).sum(axis=0)
    out_positions = np.outer(rows_valid, cols_valid)

    acc = np.zeros((tm, tn, R, C), dtype=np.int64)
    fwd, comp = grid.forward_enabled, grid.compute_enabled
    ridx, cidx = np.arange(R), np.arange(C)
    fill = compute = 0
    for k0, ck in zip(np.cumsum([0] + k_chunks(K, cfg)[:-1]), k_chunks(K, cfg)):
        nb = ceil_div(ck, m)
        Ab = np.zeros((tm, R, nb * m), dtype=np.int64)
        Ab[..., :ck] = A[..., k0 : k0 + ck]
        Ab = Ab.reshape(tm, R, nb, m)
        Wb = np.zeros((tn, nb * m, C), dtype=np.int64)
        Wb[:, :ck] = W[:, k0 : k0 + ck]
        Wb = Wb.reshape(tn, nb, m, C).transpose(0, 1, 3, 2)
        lanes_valid = np.minimum(m, ck - np.arange(nb) * m)

        a_reg = np.zeros((tm, R, C, m), dtype=np.int64)
        w_reg = np.zeros((tn, R, C, m), dtype=np.int64)
        a_beat = np.full((R, C), -1)
        w_beat = np.full((R, C), -1)
        corner_start = None
        steps = R + C - 2 + nb
        for t in range(steps):
            grid.check_modes()
            a_cnt = np.where(a_beat >= 0, lanes_valid[a_beat] * rows_valid[:, None], 0)
            a_reg, a_beat = _shift_right(a_reg, a_beat, fwd, a_cnt, grid.forwarded)
            w_cnt = np.where(w_beat >= 0, lanes_valid[w_beat] * cols_valid[None, :], 0)
            w_reg, w_beat = _shift_down(w_reg, w_beat, fwd, w_cnt, grid.forwarded)

            b = t - ridx
            ok = (b >= 0) & (b < nb)
            a_reg[:, ok, 0] = Ab[:, ridx[ok], b[ok]]
            a_beat[ok, 0] = b[ok]
            b = t - cidx
            ok = (b >= 0) & (b < nb)
            w_reg[:, 0, ok] = Wb[:, b[ok], cidx[ok]]
            w_beat[0, ok] = b[ok]

            active = comp & (a_beat >= 0) & (w_beat >= 0)
            if np.any(active & (a_beat != w_beat)):
                raise DataflowError(f"operand beats misaligned in cycle {grid.cycle}")
            if active.any():
                prod = np.einsum("arcm,brcm->abrc", a_reg, w_reg)
                acc += np.where(active, prod, 0)
                grid.mac_activity += np.where(active, lanes_valid[np.maximum(a_beat, 0)] * out_positions, 0)
            if corner_start is None and active[R - 1, C - 1]:
                corner_start = t
            grid.cycle += 1
        if corner_start is None:
            raise DataflowError("operands never reached the far corner PE")
        fill += corner_start
        compute += steps - corner_start

    tiles = tm * tn
    drain_per_tile = ceil_div(R * C, cfg.output_bus_width)
    grid.cycle += tiles * drain_per_tile
    grid.accumulator[:] = acc[-1, -1]
    full = acc.transpose(0, 2, 1, 3).reshape(tm * R, tn * C)[:M, :N]
    full = np.clip(full, INT32_MIN, INT32_MAX)
    c = QuantizedMatrix(requantize(full, a.fmt.frac_bits + w.fmt.frac_bits, out_fmt), out_fmt)
    macs = int(grid.mac_activity.sum())
    report = CycleReport(
        fill_cycles=fill * tiles,
        compute_cycles=compute * tiles,
        drain_cycles=drain_per_tile * tiles,
        mac_ops=macs,
        linear_mac_ops=macs,
        peak_macs_per_cycle=cfg.peak_macs_per_cycle,
        clock_mhz=cfg.clock_mhz,
        metadata=calibration_metadata(cfg),
    )
    return c, report


def sim_mhp(
    xs: InterleavedStream,
    kbs: InterleavedStream,
    cfg: SystolicConfig,
    out_fmt: FixedPointFormat | None = None,
    grid: PEGrid | None = None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """Element-wise ``Y = X*K + B`` with diagonal computation PEs.

    Lane ``i`` of the ``(x, 1)`` stream enters row ``i`` from the left and
    lane ``i`` of the ``(k, b)`` stream enters column ``i`` from the top; both
    hop through transmission PEs and meet at PE ``(i, i)``, which multiplies
    ``x*k`` and ``1*b`` on two multipliers and writes the first adder layer's
    sum straight to the output buffer. Each beat carries ``m/2`` pairs.
    """
    if xs.stream_kind is not StreamKind.X_ONE_PAIRS or kbs.stream_kind is not StreamKind.KB_PAIRS:
        raise ValueError("expected an X_ONE_PAIRS stream and a KB_PAIRS stream")
    if (xs.rows, xs.cols, xs.lane_count) != (kbs.rows, kbs.cols, kbs.lane_count):
        raise ValueError("the two streams differ in shape or lane count")
    if [len(p) for p in xs.payload] != [len(p) for p in kbs.payload]:
        raise ValueError("the two streams differ in lane lengths")
    if xs.lane_count != cfg.diagonal:
        raise ValueError(f"streams have {xs.lane_count} lanes, the grid diagonal has {cfg.diagonal}")
    if cfg.macs_per_pe < 2:
        raise FabricPathError("MHP needs at least two multipliers per PE")
    grid = grid or configure_grid(cfg, GridMode.MHP)
    if grid.mode is not GridMode.MHP:
        raise ValueError("grid is not configured for MHP")

    fx, fone = xs.formats
    fk, fb = kbs.formats
    out_fmt = out_fmt or fx
    R, C = cfg.pe_rows, cfg.pe_cols
    D, N, M = xs.lane_count, xs.cols, xs.rows
    p = cfg.macs_per_pe // 2
    nb = ceil_div(N, p)

    xb, band_valid = xs.banded()
    kbb, _ = kbs.banded()
    T = xb.shape[0]
    X = np.zeros((T, D, nb * p, 2), dtype=np.int64)
    X[:, :, :N] = xb
    X = X.reshape(T, D, nb, p, 2)
    KB = np.zeros_like(X)
    KB.reshape(T, D, nb * p, 2)[:, :, :N] = kbb
    lanes_valid = np.minimum(p, N - np.arange(nb) * p)
    bands_per_lane = np.zeros(max(R, C), dtype=np.int64)
    bands_per_lane[:D] = band_valid.sum(axis=0)

    out = np.zeros((T, D, nb, p), dtype=np.int16)
    frac = fx.frac_bits + max(fk.frac_bits, fb.frac_bits)
    shift_xk = frac - fx.frac_bits - fk.frac_bits
    shift_1b = frac - fone.frac_bits - fb.frac_bits

    fwd, comp = grid.forward_enabled, grid.compute_enabled
    lane_idx = np.arange(D)
    x_reg = np.zeros((T, R, C, p, 2), dtype=np.int64)
    kb_reg = np.zeros_like(x_reg)
    x_beat = np.full((R, C), -1)
    kb_beat = np.full((R, C), -1)
    corner_start = None
    steps = D - 1 + nb
    for t in range(steps):
        grid.check_modes()
        x_cnt = np.where(x_beat >= 0, lanes_valid[x_beat] * bands_per_lane[:R, None], 0)
        x_reg, x_beat = _shift_right(x_reg, x_beat, fwd, x_cnt, grid.forwarded)
        kb_cnt = np.where(kb_beat >= 0, lanes_valid[kb_beat] * bands_per_lane[None, :C], 0)
        kb_reg, kb_beat = _shift_down(kb_reg, kb_beat, fwd, kb_cnt, grid.forwarded)
        if t < nb:
            x_reg[:, lane_idx, 0] = X[:, :, t]
            x_beat[lane_idx, 0] = t
            kb_reg[:, 0, lane_idx] = KB[:, :, t]
            kb_beat[0, lane_idx] = t

        active = comp & (x_beat >= 0) & (kb_beat >= 0)
        if active.any():
            ii, jj = np.nonzero(active)
            if np.any(ii != jj) or np.any(x_beat[ii, jj] != kb_beat[ii, jj]):
                raise DataflowError(f"MHP operands met off the diagonal or out of order in cycle {grid.cycle}")
            beats = x_beat[ii, ii]
            xv = x_reg[:, ii, ii]
            kv = kb_reg[:, ii, ii]
            acc = ((xv[..., 0] * kv[..., 0]) << shift_xk) + ((xv[..., 1] * kv[..., 1]) << shift_1b)
            out[:, ii, beats] = requantize(acc, frac, out_fmt)
            grid.mac_activity[ii, ii] += 2 * lanes_valid[beats] * bands_per_lane[ii]
        if corner_start is None and active[D - 1, D - 1]:
            corner_start = t
        grid.cycle += 1

    drain = T * N * ceil_div(D, cfg.output_bus_width)
    grid.cycle += drain
    y = out.reshape(T, D, nb * p)[:, :, :N].reshape(T * D, N)[:M]
    macs = int(grid.mac_activity.sum())
    report = CycleReport(
        fill_cycles=T * corner_start,
        compute_cycles=T * (steps - corner_start),
        drain_cycles=drain,
        mac_ops=macs,
        nonlinear_evals=M * N,
        peak_macs_per_cycle=cfg.peak_macs_per_cycle,
        clock_mhz=cfg.clock_mhz,
        metadata=calibration_metadata(cfg),
    )
    return QuantizedMatrix(y, out_fmt), report


def sim_ipf(x: QuantizedMatrix, table: SegmentTable, cfg: SystolicConfig) -> tuple[QuantizedMatrix, QuantizedMatrix, int]:
    """L3-side parameter fetch: shift, scale (clamp), table lookup, write-back."""
    if not table.supports_shift(x.fmt):
        raise FabricPathError(
            f"granularity {table.granularity} needs division-based indexing; the L3 data shift "
            "module only handles power-of-two segment lengths (use the functional path)"
        )
    offset = x.data.astype(np.int64) - int(np.round(table.x_min * (1 << x.fmt.frac_bits)))
    seg = offset >> (x.fmt.frac_bits + table.shift_exponent)
    seg = np.clip(seg, 0, table.num_segments - 1)
    k = QuantizedMatrix(table.k_values[seg], table.format_k)
    b = QuantizedMatrix(table.b_values[seg], table.format_b)
    return k, b, ipf_cycle_count(x.rows, x.cols, cfg)


def sim_cpwl(
    x: QuantizedMatrix,
    table: SegmentTable,
    cfg: SystolicConfig,
    out_fmt: FixedPointFormat | None = None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """IPF, stream rearrangement and MHP back to back."""
    k, b, ipf_cycles = sim_ipf(x, table, cfg)
    y, report = sim_mhp(rearrange_x(x, cfg), rearrange_kb(k, b, cfg), cfg, out_fmt)
    return y, dataclasses.replace(report, ipf_cycles=report.ipf_cycles + ipf_cycles)


def sim_hadamard(
    x: QuantizedMatrix,
    k: QuantizedMatrix,
    b: QuantizedMatrix,
    cfg: SystolicConfig,
    out_fmt: FixedPointFormat | None = None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """MHP on plain matrices (rearrangement included)."""
    if not (x.shape == k.shape == b.shape):
        raise ValueError(f"shape mismatch: X{x.shape} K{k.shape} B{b.shape}")
    return sim_mhp(rearrange_x(x, cfg), rearrange_kb(k, b, cfg), cfg, out_fmt)
