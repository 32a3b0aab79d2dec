"""INT16 fixed-point primitives.

Every tensor that moves through the array is a 16-bit signed word with an
explicit number of fractional bits. Rounding is round-to-nearest-even and
all narrowing is saturating; nothing ever wraps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INT16_MIN = -(1 << 15)
INT16_MAX = (1 << 15) - 1
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed 16-bit word with ``frac_bits`` fractional bits.

    Printed as ``Qm.n`` with ``m = 16 - n`` (sign bit counted), so the
    default activation format is ``Q8.8``.
    """

    frac_bits: int
    total_bits: int = 16

    def __post_init__(self):
        if self.total_bits != 16:
            raise ValueError("only 16-bit words are supported")
        if not 0 <= self.frac_bits <= 15:
            raise ValueError(f"frac_bits must be in [0, 15], got {self.frac_bits}")

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return -(2.0 ** (15 - self.frac_bits))

    @property
    def max_value(self) -> float:
        return 2.0 ** (15 - self.frac_bits) - self.step

    @property
    def one(self) -> int:
        """Integer code of 1.0 (saturated when 1.0 is not representable)."""
        return min(1 << self.frac_bits, INT16_MAX)

    def __str__(self):
        return f"Q{16 - self.frac_bits}.{self.frac_bits}"

    @classmethod
    def parse(cls, text: str) -> "FixedPointFormat":
        """Parse ``"Q8.8"``-style names or a bare fractional-bit count.

        Only the fractional part is significant.
        """
        text = text.strip()
        if text.upper().startswith("Q"):
            _, frac = text[1:].split(".")
            return cls(int(frac))
        return cls(int(text))


Q8_8 = FixedPointFormat(8)
Q3_13 = FixedPointFormat(13)
Q2_14 = FixedPointFormat(14)
Q1_15 = FixedPointFormat(15)


def saturate16(v):
    return np.clip(v, INT16_MIN, INT16_MAX)


def quantize(x, fmt: FixedPointFormat):
    """Round ``x * 2**frac_bits`` to nearest-even and saturate to int16.

    Scalars return a Python int, arrays an ``int16`` array.
    """
    scaled = np.asarray(x, dtype=np.float64) * (1 << fmt.frac_bits)
    # clip first so rint never sees values beyond int range
    q = np.rint(np.clip(scaled, INT16_MIN - 1.0, INT16_MAX + 1.0))
    q = saturate16(q).astype(np.int16)
    if q.ndim == 0:
        return int(q)
    return q


def dequantize(v, fmt: FixedPointFormat):
    out = np.asarray(v, dtype=np.float64) / (1 << fmt.frac_bits)
    if out.ndim == 0:
        return float(out)
    return out


def round_shift(v, shift: int):
    """Divide integers by ``2**shift`` with round-half-even; negative shift multiplies."""
    v = np.asarray(v, dtype=np.int64)
    if shift <= 0:
        return v << (-shift)
    q = v >> shift
    rem = v - (q << shift)
    half = np.int64(1) << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up.astype(np.int64)


def requantize(acc, acc_frac: int, fmt: FixedPointFormat):
    """Narrow a wide accumulator with ``acc_frac`` fractional bits into ``fmt``."""
    return saturate16(round_shift(acc, acc_frac - fmt.frac_bits)).astype(np.int16)


def fit_format(values, max_frac: int = 15) -> FixedPointFormat:
    """Finest format (at most ``max_frac`` fractional bits) whose range holds ``values``."""
    peak = float(np.max(np.abs(np.asarray(values, dtype=np.float64)), initial=0.0))
    for frac in range(max_frac, -1, -1):
        fmt = FixedPointFormat(frac)
        if fmt.min_value <= -peak and peak <= fmt.max_value:
            return fmt
    return FixedPointFormat(0)


@dataclass(frozen=True)
class QuantizedMatrix:
    """Row-major int16 matrix tagged with its fixed-point format."""

    data: np.ndarray
    fmt: FixedPointFormat

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
        if arr.dtype != np.int16:
            if np.any(arr < INT16_MIN) or np.any(arr > INT16_MAX):
                raise ValueError("values do not fit in 16 signed bits")
            arr = arr.astype(np.int16)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_real(cls, values, fmt: FixedPointFormat) -> "QuantizedMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        elif values.ndim == 1:
            values = values.reshape(1, -1)
        return cls(quantize(values, fmt).reshape(values.shape), fmt)

    @classmethod
    def full(cls, rows: int, cols: int, value: float, fmt: FixedPointFormat) -> "QuantizedMatrix":
        return cls(np.full((rows, cols), quantize(value, fmt), dtype=np.int16), fmt)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def to_real(self) -> np.ndarray:
        return dequantize(self.data, self.fmt).reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, QuantizedMatrix):
            return NotImplemented
        return self.fmt == other.fmt and np.array_equal(self.data, other.data)

    __hash__ = None


def matmul_fixed(a: QuantizedMatrix, w: QuantizedMatrix, out_fmt: FixedPointFormat | None = None) -> QuantizedMatrix:
    """Direct quantized matmul: exact products, 32-bit saturated sum, one rounding."""
    if a.cols != w.rows:
        raise ValueError(f"inner dimensions differ: {a.shape} x {w.shape}")
    out_fmt = out_fmt or a.fmt
    acc = a.data.astype(np.int64) @ w.data.astype(np.int64)
    acc = np.clip(acc, INT32_MIN, INT32_MAX)
    return QuantizedMatrix(requantize(acc, a.fmt.frac_bits + w.fmt.frac_bits, out_fmt), out_fmt)
