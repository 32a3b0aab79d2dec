"""Convolution lowering.

``im2col`` unrolls an ``N x C x H x W`` tensor into a ``(C*kh*kw) x (N*OH*OW)``
patch matrix. Row ``(c*kh + i)*kw + j`` holds kernel tap ``(c, i, j)``, column
``(n*OH + oh)*OW + ow`` holds output pixel ``(n, oh, ow)``. With the filters
flattened to rows, ``conv = weights_as_rows @ patches`` and
:func:`col2im_output` folds the ``F x (N*OH*OW)`` product back to
``N x F x OH x OW``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    if kernel < 1 or stride < 1 or padding < 0:
        raise ValueError("kernel and stride must be positive, padding non-negative")
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(f"input {size} with kernel {kernel}, stride {stride}, padding {padding} has no output")
    return out


def im2col(x: np.ndarray, kernel: int | tuple[int, int], stride: int = 1, padding: int = 0) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected N x C x H x W input, got shape {x.shape}")
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # win: n, c, oh, ow, kh, kw -> (c, kh, kw) x (n, oh, ow)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * oh * ow))


def col2im_output(y: np.ndarray, n: int, oh: int, ow: int) -> np.ndarray:
    f = y.shape[0]
    return np.ascontiguousarray(y.reshape(f, n, oh, ow).transpose(1, 0, 2, 3))


def conv2d_direct(x: np.ndarray, weight: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Sliding-window convolution (cross-correlation) in float64, no lowering."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n, c, h, w = x.shape
    f, _, kh, kw = weight.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, f, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            out[:, :, i, j] = np.einsum("nchw,fchw->nf", patch, weight)
    return out
