"""GELU, softmax and layernorm built from the two array primitives.

Softmax, per row of ``X``::

    z = X * 1 + (-rowmax)          MHP   (rowmax found by a host scan)
    E = exp~(z)                    IPF + MHP, table on [-16, 0]
    s = E @ ones                   GEMM
    r = reciprocal~(s)             IPF + MHP, table on [1, n]
    Y = E * bcast(r) + 0           MHP

Layernorm, per row::

    -mu   = X @ (-1/n)             GEMM
    msq   = (X * X + 0) @ (1/n)    MHP, GEMM
    v     = (-mu) * (-mu) * (-1) + (msq + eps)    MHP, MHP, MHP
    r     = rsqrt~(v)              IPF + MHP
    Y     = ((X * 1 + (-mu)) * bcast(r)) * gamma + beta    MHP x3

Every ``~`` stage is a CPWL table; nothing else touches a nonlinearity.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from ..cpwl import FunctionId, SegmentTable, build_segment_table
from ..fabric import CycleReport, SystolicConfig
from ..fixedpoint import (
    Q8_8,
    FixedPointFormat,
    QuantizedMatrix,
    fit_format,
    quantize,
    saturate16,
)
from .backends import FabricBackend

FINE = FixedPointFormat(14)
STAT_FMT = Q8_8
RSQRT_OUT_FMT = FixedPointFormat(11)
EXP_SPAN = 16.0
LAYERNORM_EPS = 2.0 ** -8
RSQRT_MIN = 2.0 ** -4
RSQRT_SPAN = 64.0


def _sum(reports: list[CycleReport], cfg: SystolicConfig) -> CycleReport:
    total = CycleReport.empty(cfg)
    for r in reports:
        total = total + r
    return total


def _const(rows: int, cols: int, value: float, fmt: FixedPointFormat) -> QuantizedMatrix:
    return QuantizedMatrix.full(rows, cols, value, fmt)


def _bcast_col(v: QuantizedMatrix, cols: int) -> QuantizedMatrix:
    return QuantizedMatrix(np.repeat(v.data, cols, axis=1), v.fmt)


def _bcast_row(v: np.ndarray, rows: int, fmt: FixedPointFormat) -> QuantizedMatrix:
    q = np.atleast_1d(quantize(np.asarray(v, dtype=np.float64), fmt)).astype(np.int16)
    return QuantizedMatrix(np.tile(q, (rows, 1)), fmt)


def _backend(cfg, backend):
    return backend if backend is not None else FabricBackend(cfg)


def run_gelu_layer(
    x: QuantizedMatrix,
    table: SegmentTable,
    cfg: SystolicConfig | None = None,
    out_fmt: FixedPointFormat | None = None,
    backend=None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """Any element-wise CPWL table applied to ``x`` (GELU is the usual case)."""
    backend = _backend(cfg, backend)
    return backend.cpwl(x, table, out_fmt or x.fmt)


# ---------------------------------------------------------------- softmax


@dataclasses.dataclass(frozen=True)
class SoftmaxTables:
    exp: SegmentTable
    reciprocal: SegmentTable
    sum_fmt: FixedPointFormat


def softmax_tables(g: float, n: int) -> SoftmaxTables:
    """EXP on ``[-16, 0]`` and RECIPROCAL on ``[1, n]``, both bounds snapped to ``g``.

    Everything below ``-16`` lands on the first EXP segment, whose chord
    quantizes to ``k = b = 0``, so capped inputs map to exactly 0.
    """
    if n < 1:
        raise ValueError("softmax needs at least one column")
    exp_min = -g * math.ceil(EXP_SPAN / g - 1e-9)
    exp = build_segment_table(FunctionId.EXP, g, exp_min, 0.0, max_frac_k=14, max_frac_b=14)
    segs = max(1, math.ceil((n - 1) / g - 1e-9))
    recip = build_segment_table(FunctionId.RECIPROCAL, g, 1.0, 1.0 + segs * g, max_frac_k=14, max_frac_b=14)
    return SoftmaxTables(exp, recip, fit_format([float(n)], max_frac=14))


def run_softmax(
    x: QuantizedMatrix,
    tables: SoftmaxTables,
    cfg: SystolicConfig | None = None,
    out_fmt: FixedPointFormat = Q8_8,
    backend=None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """Row-wise softmax. Rows whose sum reaches zero are listed under
    ``report.metadata["softmax_error_rows"]``."""
    backend = _backend(cfg, backend)
    rows, n = x.shape
    neg_max = QuantizedMatrix(
        np.repeat(saturate16(-x.data.max(axis=1, keepdims=True).astype(np.int64)), n, axis=1), x.fmt
    )
    z, r1 = backend.hadamard(x, _const(rows, n, 1.0, FINE), neg_max, x.fmt)
    e, r2 = backend.cpwl(z, tables.exp, FINE)
    s, r3 = backend.gemm(e, _const(n, 1, 1.0, FixedPointFormat(0)), tables.sum_fmt)
    recip, r4 = backend.cpwl(s, tables.reciprocal, FINE)
    y, r5 = backend.hadamard(e, _bcast_col(recip, n), _const(rows, n, 0.0, FINE), out_fmt)
    report = _sum([r1, r2, r3, r4, r5], backend.cfg)
    bad = np.flatnonzero(s.data[:, 0] <= 0).tolist()
    report.metadata["softmax_error_rows"] = bad
    return y, report


# -------------------------------------------------------------- layernorm


def layernorm_table(g: float, x_max: float = RSQRT_MIN + RSQRT_SPAN) -> SegmentTable:
    segs = math.ceil((x_max - RSQRT_MIN) / g - 1e-9)
    return build_segment_table(FunctionId.RSQRT, g, RSQRT_MIN, RSQRT_MIN + segs * g)


def run_layernorm(
    x: QuantizedMatrix,
    table: SegmentTable,
    gamma=None,
    beta=None,
    cfg: SystolicConfig | None = None,
    out_fmt: FixedPointFormat = Q8_8,
    eps: float = LAYERNORM_EPS,
    backend=None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """Row-wise layernorm.

    Statistics are kept in Q8.8, so squares saturate for ``|x| > 11.3``.
    Rows whose ``var + eps`` lies below the RSQRT table are evaluated on the
    capped first chord and listed in ``report.metadata["rsqrt_capped_rows"]``.
    """
    backend = _backend(cfg, backend)
    rows, n = x.shape
    gamma = np.ones(n) if gamma is None else np.asarray(gamma, dtype=np.float64)
    beta = np.zeros(n) if beta is None else np.asarray(beta, dtype=np.float64)
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ValueError(f"gamma and beta must have shape ({n},)")

    reports = []

    def run(step):
        out, rep = step
        reports.append(rep)
        return out

    inv_n = FINE
    neg_mu = run(backend.gemm(x, _const(n, 1, -1.0 / n, inv_n), STAT_FMT))
    sq = run(backend.hadamard(x, x, _const(rows, n, 0.0, STAT_FMT), STAT_FMT))
    msq = run(backend.gemm(sq, _const(n, 1, 1.0 / n, inv_n), STAT_FMT))
    mu2 = run(backend.hadamard(neg_mu, neg_mu, _const(rows, 1, 0.0, STAT_FMT), STAT_FMT))
    msq_eps = run(backend.hadamard(msq, _const(rows, 1, 1.0, FINE), _const(rows, 1, eps, STAT_FMT), STAT_FMT))
    var_eps = run(backend.hadamard(mu2, _const(rows, 1, -1.0, FINE), msq_eps, STAT_FMT))
    r = run(backend.cpwl(var_eps, table, RSQRT_OUT_FMT))
    centered = run(backend.hadamard(x, _const(rows, n, 1.0, FINE), _bcast_col(neg_mu, n), x.fmt))
    norm_fmt = fit_format([math.sqrt(n) + 1.0], max_frac=12)
    normed = run(backend.hadamard(centered, _bcast_col(r, n), _const(rows, n, 0.0, norm_fmt), norm_fmt))
    g_fmt = fit_format(gamma, max_frac=14)
    b_fmt = fit_format(beta, max_frac=14)
    y = run(backend.hadamard(normed, _bcast_row(gamma, rows, g_fmt), _bcast_row(beta, rows, b_fmt), out_fmt))

    report = _sum(reports, backend.cfg)
    capped = np.flatnonzero(var_eps.to_real()[:, 0] < table.x_min).tolist()
    report.metadata["rsqrt_capped_rows"] = capped
    return y, report


# ------------------------------------------------------ float64 references


def softmax_reference(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def layernorm_reference(x, gamma=None, beta=None, eps: float = LAYERNORM_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * np.asarray(gamma, dtype=np.float64)
    if beta is not None:
        y = y + np.asarray(beta, dtype=np.float64)
    return y
