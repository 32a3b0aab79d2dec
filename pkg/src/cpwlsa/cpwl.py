"""Capped piecewise-linear (CPWL) approximation of scalar nonlinearities.

A table stores one chord (slope ``k``, intercept ``b``) per fixed-length
segment of ``[x_min, x_max)``. Evaluation is three integer steps:

1. map every input to its segment index, clamped to the table range (IPF),
2. gather the slope and intercept matrices ``K`` and ``B`` (IPF),
3. compute ``Y = X * K + B`` element-wise (MHP).

The functions here are the bit-exact golden semantics for the fabric
simulator in :mod:`cpwlsa.fabric`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import special

from .fixedpoint import (
    Q3_13,
    Q8_8,
    FixedPointFormat,
    QuantizedMatrix,
    dequantize,
    fit_format,
    quantize,
    requantize,
)

TABLE_FILE_KIND = "cpwl-segment-table"
TABLE_FILE_VERSION = 1


class FunctionId(str, Enum):
    GELU = "GELU"
    EXP = "EXP"
    RECIPROCAL = "RECIPROCAL"
    RSQRT = "RSQRT"
    TANH = "TANH"
    SIGMOID = "SIGMOID"
    IDENTITY = "IDENTITY"
    RELU = "RELU"


def reference(fn: FunctionId, x):
    """Double-precision reference value of ``fn`` at ``x``."""
    fn = FunctionId(fn)
    x = np.asarray(x, dtype=np.float64)
    if fn is FunctionId.GELU:
        # exact Gaussian-CDF form, not the tanh approximation
        return x * special.ndtr(x)
    if fn is FunctionId.EXP:
        return np.exp(x)
    if fn is FunctionId.RECIPROCAL:
        return 1.0 / x
    if fn is FunctionId.RSQRT:
        return 1.0 / np.sqrt(x)
    if fn is FunctionId.TANH:
        return np.tanh(x)
    if fn is FunctionId.SIGMOID:
        return special.expit(x)
    if fn is FunctionId.IDENTITY:
        return x.copy()
    if fn is FunctionId.RELU:
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown function {fn}")


_POSITIVE_DOMAIN = {FunctionId.RECIPROCAL, FunctionId.RSQRT}

DEFAULT_BOUNDS = {
    FunctionId.GELU: (-8.0, 8.0),
    FunctionId.TANH: (-8.0, 8.0),
    FunctionId.SIGMOID: (-8.0, 8.0),
    FunctionId.IDENTITY: (-8.0, 8.0),
    FunctionId.RELU: (-8.0, 8.0),
    FunctionId.EXP: (-8.0, 4.0),
    FunctionId.RECIPROCAL: (2.0 ** -4, 8.0),
    FunctionId.RSQRT: (2.0 ** -4, 8.0),
}


def default_bounds(fn: FunctionId, g: float) -> tuple[float, float]:
    """Default cap bounds for ``fn``; the upper bound is pushed out to a whole segment."""
    x_min, x_max = DEFAULT_BOUNDS[FunctionId(fn)]
    n = math.ceil((x_max - x_min) / g - 1e-9)
    return x_min, x_min + n * g


def power_of_two_exponent(g: float) -> int | None:
    mant, exp = math.frexp(g)
    if g > 0 and mant == 0.5:
        return exp - 1
    return None


def _segment_count(g: float, x_min: float, x_max: float) -> int:
    if not g > 0:
        raise ValueError(f"granularity must be positive, got {g}")
    ratio = (x_max - x_min) / g
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise ValueError(f"(x_max - x_min) / g = {ratio!r} is not a positive integer")
    return n


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.int16)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SegmentTable:
    function_id: FunctionId
    granularity: float
    x_min: float
    x_max: float
    num_segments: int
    k_values: np.ndarray
    b_values: np.ndarray
    format_k: FixedPointFormat
    format_b: FixedPointFormat
    shift_exponent: int | None

    def __post_init__(self):
        object.__setattr__(self, "function_id", FunctionId(self.function_id))
        object.__setattr__(self, "k_values", _frozen(self.k_values))
        object.__setattr__(self, "b_values", _frozen(self.b_values))
        if _segment_count(self.granularity, self.x_min, self.x_max) != self.num_segments:
            raise ValueError("num_segments disagrees with bounds and granularity")
        if len(self.k_values) != self.num_segments or len(self.b_values) != self.num_segments:
            raise ValueError("k/b arrays must have one entry per segment")
        if self.shift_exponent != power_of_two_exponent(self.granularity):
            raise ValueError("shift_exponent must be present iff granularity is a power of two")

    def __eq__(self, other):
        if not isinstance(other, SegmentTable):
            return NotImplemented
        return (
            self.function_id == other.function_id
            and self.granularity == other.granularity
            and self.x_min == other.x_min
            and self.x_max == other.x_max
            and self.num_segments == other.num_segments
            and self.format_k == other.format_k
            and self.format_b == other.format_b
            and self.shift_exponent == other.shift_exponent
            and np.array_equal(self.k_values, other.k_values)
            and np.array_equal(self.b_values, other.b_values)
        )

    __hash__ = None

    def segment_starts(self) -> np.ndarray:
        return self.x_min + np.arange(self.num_segments) * self.granularity

    def k_real(self) -> np.ndarray:
        return dequantize(self.k_values, self.format_k)

    def b_real(self) -> np.ndarray:
        return dequantize(self.b_values, self.format_b)

    def supports_shift(self, fmt: FixedPointFormat) -> bool:
        """True when the shift-based indexer is exact for inputs in ``fmt``."""
        if self.shift_exponent is None or fmt.frac_bits + self.shift_exponent < 0:
            return False
        return dequantize(quantize(self.x_min, fmt), fmt) == self.x_min


def build_segment_table(
    fn: FunctionId,
    g: float,
    x_min: float | None = None,
    x_max: float | None = None,
    fk: FixedPointFormat | None = None,
    fb: FixedPointFormat | None = None,
    max_frac_k: int = Q3_13.frac_bits,
    max_frac_b: int = Q8_8.frac_bits,
) -> SegmentTable:
    """Precompute the chord of ``fn`` over every segment of ``[x_min, x_max)``.

    Slopes default to Q3.13 and intercepts to Q8.8; when a function's chords
    do not fit those ranges the default narrows to the finest format that
    does. ``max_frac_k``/``max_frac_b`` move the starting point of that
    search. Explicit ``fk``/``fb`` are used as given (saturating).
    """
    fn = FunctionId(fn)
    if x_min is None or x_max is None:
        d_min, d_max = default_bounds(fn, g)
        x_min = d_min if x_min is None else x_min
        x_max = d_max if x_max is None else x_max
    x_min, x_max, g = float(x_min), float(x_max), float(g)
    n = _segment_count(g, x_min, x_max)
    if fn in _POSITIVE_DOMAIN and x_min <= 0:
        raise ValueError(f"{fn.value} requires x_min > 0, got {x_min}")

    edges = x_min + np.arange(n + 1) * g
    f = reference(fn, edges)
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{fn.value} is not finite on [{x_min}, {x_max}]")
    slopes = (f[1:] - f[:-1]) / g
    fk = fk or fit_format(slopes, max_frac=max_frac_k)
    k_q = quantize(slopes, fk)
    intercepts = f[:-1] - dequantize(k_q, fk) * edges[:-1]
    fb = fb or fit_format(intercepts, max_frac=max_frac_b)
    b_q = quantize(intercepts, fb)
    return SegmentTable(
        function_id=fn,
        granularity=g,
        x_min=x_min,
        x_max=x_max,
        num_segments=n,
        k_values=k_q,
        b_values=b_q,
        format_k=fk,
        format_b=fb,
        shift_exponent=power_of_two_exponent(g),
    )


@dataclass(frozen=True)
class SegmentMatrix:
    indices: np.ndarray

    @property
    def rows(self) -> int:
        return self.indices.shape[0]

    @property
    def cols(self) -> int:
        return self.indices.shape[1]


def segment_index_floor(xq, fmt: FixedPointFormat, table: SegmentTable):
    """Division-based indexer, valid for any granularity."""
    x = dequantize(np.asarray(xq, dtype=np.int64), fmt)
    s = np.floor((x - table.x_min) / table.granularity)
    return np.clip(s, 0, table.num_segments - 1).astype(np.int64)


def segment_index_shift(xq, fmt: FixedPointFormat, table: SegmentTable):
    """Shift-based indexer: arithmetic right shift then clamp (data shift + scale modules)."""
    if not table.supports_shift(fmt):
        raise ValueError(
            f"table with granularity {table.granularity} cannot be indexed by shifting "
            f"{fmt} inputs; the shift path needs a power-of-two segment length"
        )
    offset = np.asarray(xq, dtype=np.int64) - quantize(table.x_min, fmt)
    s = offset >> (fmt.frac_bits + table.shift_exponent)
    return np.clip(s, 0, table.num_segments - 1)


def segment_index(xq, fmt: FixedPointFormat, table: SegmentTable):
    """Clamped segment index of quantized input(s) ``xq``.

    Uses the shift indexer whenever the table allows it, else the floor formula.
    """
    if table.supports_shift(fmt):
        s = segment_index_shift(xq, fmt, table)
    else:
        s = segment_index_floor(xq, fmt, table)
    return int(s) if np.ndim(s) == 0 else s


def ipf(x: QuantizedMatrix, table: SegmentTable) -> tuple[SegmentMatrix, QuantizedMatrix, QuantizedMatrix]:
    """Segment matrix plus gathered slope and intercept matrices."""
    s = np.asarray(segment_index(x.data, x.fmt, table)).reshape(x.shape)
    k = QuantizedMatrix(table.k_values[s], table.format_k)
    b = QuantizedMatrix(table.b_values[s], table.format_b)
    return SegmentMatrix(s), k, b


def mhp_raw(x, k, b, fx: int, fk: int, fb: int, out_fmt: FixedPointFormat):
    # product and aligned intercept share the finer of the two scales; both
    # terms stay below 2**46 so int64 holds the exact sum
    frac = max(fx + fk, fb)
    prod = np.asarray(x, dtype=np.int64) * np.asarray(k, dtype=np.int64)
    acc = (prod << (frac - fx - fk)) + (np.asarray(b, dtype=np.int64) << (frac - fb))
    return requantize(acc, frac, out_fmt)


def mhp(
    x: QuantizedMatrix, k: QuantizedMatrix, b: QuantizedMatrix, out_fmt: FixedPointFormat | None = None
) -> QuantizedMatrix:
    """Matrix Hadamard product ``X * K + B`` with a single output rounding."""
    if not (x.shape == k.shape == b.shape):
        raise ValueError(f"shape mismatch: X{x.shape} K{k.shape} B{b.shape}")
    out_fmt = out_fmt or x.fmt
    y = mhp_raw(x.data, k.data, b.data, x.fmt.frac_bits, k.fmt.frac_bits, b.fmt.frac_bits, out_fmt)
    return QuantizedMatrix(y, out_fmt)


def cpwl_eval_q(xq, table: SegmentTable, fmt_in: FixedPointFormat = Q8_8, out_fmt: FixedPointFormat | None = None):
    """Integer-in, integer-out CPWL evaluation (any array shape)."""
    out_fmt = out_fmt or fmt_in
    s = segment_index(xq, fmt_in, table)
    return mhp_raw(
        xq,
        table.k_values[s],
        table.b_values[s],
        fmt_in.frac_bits,
        table.format_k.frac_bits,
        table.format_b.frac_bits,
        out_fmt,
    )


def cpwl_eval(x, table: SegmentTable, fmt_in: FixedPointFormat = Q8_8, out_fmt: FixedPointFormat | None = None):
    """Quantize ``x``, evaluate the capped chord in fixed point, dequantize."""
    out_fmt = out_fmt or fmt_in
    y = cpwl_eval_q(quantize(x, fmt_in), table, fmt_in, out_fmt)
    return dequantize(y, out_fmt)


@dataclass(frozen=True)
class ErrorReport:
    max_abs_err: float
    mean_abs_err: float
    argmax_x: float


def approximation_error_report(
    table: SegmentTable, samples: int, fmt_in: FixedPointFormat = Q8_8, out_fmt: FixedPointFormat | None = None
) -> ErrorReport:
    """Error of the fixed-point CPWL path against the float64 reference on a uniform grid."""
    if samples < 2:
        raise ValueError("need at least two samples")
    xs = np.linspace(table.x_min, table.x_max, samples)
    err = np.abs(cpwl_eval(xs, table, fmt_in, out_fmt) - reference(table.function_id, xs))
    i = int(np.argmax(err))
    return ErrorReport(float(err[i]), float(err.mean()), float(xs[i]))


def table_to_dict(table: SegmentTable) -> dict:
    return {
        "kind": TABLE_FILE_KIND,
        "version": TABLE_FILE_VERSION,
        "function_id": table.function_id.value,
        "granularity": table.granularity,
        "x_min": table.x_min,
        "x_max": table.x_max,
        "num_segments": table.num_segments,
        "shift_exponent": table.shift_exponent,
        "format_k": {"total_bits": 16, "frac_bits": table.format_k.frac_bits},
        "format_b": {"total_bits": 16, "frac_bits": table.format_b.frac_bits},
        "k_values": [int(v) for v in table.k_values],
        "b_values": [int(v) for v in table.b_values],
    }


def table_from_dict(doc: dict) -> SegmentTable:
    if doc.get("kind") != TABLE_FILE_KIND:
        raise ValueError("not a segment-table document")
    if doc.get("version") != TABLE_FILE_VERSION:
        raise ValueError(f"unsupported table version {doc.get('version')}")
    return SegmentTable(
        function_id=FunctionId(doc["function_id"]),
        granularity=float(doc["granularity"]),
        x_min=float(doc["x_min"]),
        x_max=float(doc["x_max"]),
        num_segments=int(doc["num_segments"]),
        k_values=np.array(doc["k_values"], dtype=np.int16),
        b_values=np.array(doc["b_values"], dtype=np.int16),
        format_k=FixedPointFormat(doc["format_k"]["frac_bits"], doc["format_k"]["total_bits"]),
        format_b=FixedPointFormat(doc["format_b"]["frac_bits"], doc["format_b"]["total_bits"]),
        shift_exponent=doc["shift_exponent"],
    )


def save_table(table: SegmentTable, path) -> None:
    text = json.dumps(table_to_dict(table), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_table(path) -> SegmentTable:
    return table_from_dict(json.loads(Path(path).read_text()))
