"""Merging three MHP operands onto the array's two input channels.

``(k, b)`` pairs enter from the top and ``(x, 1)`` pairs from the left, so a
diagonal PE computes ``x*k + 1*b`` with two multipliers.

Tiling order: with ``D = min(R, C)`` lanes, element ``(r, c)`` of an
``M x N`` matrix goes to lane ``r % D`` at position ``(r // D) * N + c``.
Rows are processed in bands of ``D``; inside a lane a band is column-serial.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..fixedpoint import FixedPointFormat, QuantizedMatrix
from .config import SystolicConfig


class StreamKind(str, Enum):
    KB_PAIRS = "KB_PAIRS"
    X_ONE_PAIRS = "X_ONE_PAIRS"


@dataclass(frozen=True)
class InterleavedStream:
    lane_count: int
    payload: tuple[np.ndarray, ...]  # lane -> (n, 2) int16 pairs
    stream_kind: StreamKind
    rows: int
    cols: int
    formats: tuple[FixedPointFormat, FixedPointFormat]

    @property
    def pair_count(self) -> int:
        return sum(len(lane) for lane in self.payload)

    @property
    def bands(self) -> int:
        return -(-self.rows // self.lane_count)

    def banded(self) -> tuple[np.ndarray, np.ndarray]:
        """Payload as a ``(bands, lanes, cols, 2)`` array plus a ``(bands, lanes)`` valid mask."""
        out = np.zeros((self.bands, self.lane_count, self.cols, 2), dtype=np.int16)
        valid = np.zeros((self.bands, self.lane_count), dtype=bool)
        for lane, pairs in enumerate(self.payload):
            n = len(pairs) // self.cols
            out[:n, lane] = pairs.reshape(n, self.cols, 2)
            valid[:n, lane] = True
        return out, valid


def _interleave(first: np.ndarray, second: np.ndarray, lanes: int):
    rows, cols = first.shape
    pairs = np.stack([first, second], axis=-1).astype(np.int16)
    payload = []
    for lane in range(lanes):
        sel = pairs[lane::lanes]  # rows lane, lane + D, ... in band order
        arr = np.ascontiguousarray(sel.reshape(-1, 2))
        arr.flags.writeable = False
        payload.append(arr)
    return tuple(payload)


def rearrange_kb(k: QuantizedMatrix, b: QuantizedMatrix, cfg: SystolicConfig) -> InterleavedStream:
    if k.shape != b.shape:
        raise ValueError(f"K{k.shape} and B{b.shape} differ in shape")
    lanes = cfg.diagonal
    return InterleavedStream(
        lane_count=lanes,
        payload=_interleave(k.data, b.data, lanes),
        stream_kind=StreamKind.KB_PAIRS,
        rows=k.rows,
        cols=k.cols,
        formats=(k.fmt, b.fmt),
    )


def rearrange_x(x: QuantizedMatrix, cfg: SystolicConfig) -> InterleavedStream:
    """Pair every element of ``X`` with the constant 1 in ``X``'s format."""
    if x.fmt.frac_bits > 14:
        raise ValueError(f"1.0 is not representable in {x.fmt}; the (x, 1) pairing needs frac_bits <= 14")
    lanes = cfg.diagonal
    ones = np.full(x.shape, x.fmt.one, dtype=np.int16)
    return InterleavedStream(
        lane_count=lanes,
        payload=_interleave(x.data, ones, lanes),
        stream_kind=StreamKind.X_ONE_PAIRS,
        rows=x.rows,
        cols=x.cols,
        formats=(x.fmt, x.fmt),
    )


def deinterleave(stream: InterleavedStream) -> tuple[QuantizedMatrix, QuantizedMatrix]:
    """Inverse of the rearrangement: rebuild the two source matrices."""
    first = np.zeros((stream.rows, stream.cols), dtype=np.int16)
    second = np.zeros_like(first)
    for lane, pairs in enumerate(stream.payload):
        grid = pairs.reshape(-1, stream.cols, 2)
        first[lane :: stream.lane_count] = grid[..., 0]
        second[lane :: stream.lane_count] = grid[..., 1]
    return QuantizedMatrix(first, stream.formats[0]), QuantizedMatrix(second, stream.formats[1])
