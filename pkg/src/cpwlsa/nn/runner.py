"""Whole-network execution and accuracy sweeps.

Three integer engines share the same layer plumbing:

``fabric``      GEMMs and CPWL stages on the stepped grid simulator
``functional``  the golden integer functions (bit-identical to ``fabric``)
``int16``       integer GEMMs, exact float64 nonlinearities re-quantized
                to each layer's format (the accuracy baseline)

:func:`reference_forward` is the float64 oracle on the dequantized weights.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..cpwl import build_segment_table, default_bounds, power_of_two_exponent, reference
from ..fabric import CycleReport, FabricPathError, SystolicConfig
from ..fixedpoint import QuantizedMatrix, quantize
from .backends import make_backend
from .im2col import col2im_output, im2col
from .layers import ELEMENTWISE, LayerKind, NetworkSpec
from .ops import (
    layernorm_reference,
    layernorm_table,
    run_layernorm,
    run_softmax,
    softmax_reference,
    softmax_tables,
)

ENGINES = ("fabric", "functional", "int16")


def _check_fabric_granularity(g: float) -> None:
    if power_of_two_exponent(g) is None:
        raise FabricPathError(
            f"granularity {g} is not a power of two; the fabric's shift-based segment "
            "indexing needs a power-of-two segment length (use the functional path)"
        )


def build_tables(net: NetworkSpec, engine: str = "fabric") -> dict:
    """CPWL tables for every nonlinear layer, keyed by layer index."""
    g = net.granularity
    if engine == "fabric":
        _check_fabric_granularity(g)
    shapes = [net.input_shape] + net.shapes()
    tables = {}
    for idx, layer in enumerate(net.layers):
        if layer.kind in ELEMENTWISE:
            fn = ELEMENTWISE[layer.kind]
            lo, hi = net.cap_bounds.get(fn, default_bounds(fn, g))
            tables[idx] = build_segment_table(fn, g, lo, lo + math.ceil((hi - lo) / g - 1e-9) * g)
        elif layer.kind is LayerKind.SOFTMAX:
            tables[idx] = softmax_tables(g, shapes[idx][0])
        elif layer.kind is LayerKind.LAYERNORM:
            tables[idx] = layernorm_table(g)
    return tables


def _as_batch(net: NetworkSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    return x.reshape(x.shape[0], math.prod(net.input_shape))


def _linear(layer, x: QuantizedMatrix, shape_in, net, gemm):
    w = net.weights[layer.weight]
    b = net.weights.get(layer.bias) if layer.bias else None
    if layer.kind is LayerKind.DENSE:
        a, wm = x.data, w.data
        if b is not None:
            a = np.hstack([a, np.full((x.rows, 1), x.fmt.one, dtype=np.int16)])
            wm = np.vstack([wm, b.data[None, :]])
        return gemm(QuantizedMatrix(a, x.fmt), QuantizedMatrix(wm, w.fmt), layer.fmt)
    c, h, wd = shape_in
    n = x.rows
    patches = im2col(x.data.reshape(n, c, h, wd), layer.kernel, layer.stride, layer.padding)
    rows = w.data.reshape(layer.out_channels, -1)
    if b is not None:
        patches = np.vstack([patches, np.full((1, patches.shape[1]), x.fmt.one, dtype=np.int16)])
        rows = np.hstack([rows, b.data[:, None]])
    y, report = gemm(QuantizedMatrix(rows, w.fmt), QuantizedMatrix(patches, x.fmt), layer.fmt)
    oh = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
    ow = (wd + 2 * layer.padding - layer.kernel) // layer.stride + 1
    out = col2im_output(y.data, n, oh, ow).reshape(n, -1)
    return QuantizedMatrix(out, layer.fmt), report


def _gamma_beta(layer, net, n):
    gamma = net.weights[layer.gamma].to_real() if layer.gamma else None
    beta = net.weights[layer.beta].to_real() if layer.beta else None
    return gamma, beta


@dataclass(frozen=True)
class LayerTrace:
    index: int
    kind: LayerKind
    report: CycleReport
    dims: tuple = ()  # (M, N, K) for linear layers, (rows, cols, "") otherwise

    @property
    def mode(self) -> str:
        return "GEMM" if self.kind in (LayerKind.DENSE, LayerKind.CONV2D) else "MHP"


def run_network(
    net: NetworkSpec,
    inputs,
    cfg: SystolicConfig | None = None,
    engine: str = "fabric",
    trace: list | None = None,
) -> tuple[QuantizedMatrix, CycleReport]:
    """Execute ``net`` on a batch; the report sums every layer's phases.

    ``linear_mac_ops`` counts GEMM work only and ``nonlinear_evals`` counts
    CPWL table evaluations, so ``gops`` and ``gnfs`` stay separate. Pass a
    list as ``trace`` to collect per-layer reports.
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    cfg = cfg or SystolicConfig()
    net.validate()
    tables = build_tables(net, engine) if engine != "int16" else {}
    backend = make_backend("functional" if engine == "int16" else engine, cfg)
    shapes = [net.input_shape] + net.shapes()
    x = QuantizedMatrix(np.atleast_2d(quantize(_as_batch(net, inputs), net.input_fmt)), net.input_fmt)
    total = CycleReport.empty(cfg)
    for idx, layer in enumerate(net.layers):
        kind = layer.kind
        dims = (x.rows, x.cols, "")
        if kind in (LayerKind.DENSE, LayerKind.CONV2D):
            calls = []

            def gemm(a, w, fmt):
                calls.append((a.rows, w.cols, a.cols))
                return backend.gemm(a, w, fmt)

            x, report = _linear(layer, x, shapes[idx], net, gemm)
            dims = calls[0]
        elif kind is LayerKind.FLATTEN:
            report = CycleReport.empty(cfg)
        elif engine == "int16":
            x, report = _exact_nonlinear(layer, x, net), CycleReport.empty(cfg)
        elif kind in ELEMENTWISE:
            x, report = backend.cpwl(x, tables[idx], layer.fmt)
        elif kind is LayerKind.SOFTMAX:
            x, report = run_softmax(x, tables[idx], out_fmt=layer.fmt, backend=backend)
        else:
            gamma, beta = _gamma_beta(layer, net, x.cols)
            x, report = run_layernorm(x, tables[idx], gamma, beta, out_fmt=layer.fmt, backend=backend)
        if trace is not None:
            trace.append(LayerTrace(idx, kind, report, dims))
        total = total + report
    return x, total


def _exact_nonlinear(layer, x: QuantizedMatrix, net) -> QuantizedMatrix:
    v = x.to_real()
    if layer.kind in ELEMENTWISE:
        y = reference(ELEMENTWISE[layer.kind], v)
    elif layer.kind is LayerKind.SOFTMAX:
        y = softmax_reference(v)
    else:
        y = layernorm_reference(v, *_gamma_beta(layer, net, x.cols))
    return QuantizedMatrix(quantize(y, layer.fmt).reshape(y.shape), layer.fmt)


def reference_forward(net: NetworkSpec, inputs) -> np.ndarray:
    """Float64 forward pass with exact nonlinearities and dequantized weights."""
    net.validate()
    shapes = [net.input_shape] + net.shapes()
    x = _as_batch(net, inputs)
    for idx, layer in enumerate(net.layers):
        kind = layer.kind
        if kind is LayerKind.DENSE:
            x = x @ net.weights[layer.weight].to_real()
            if layer.bias:
                x = x + net.weights[layer.bias].to_real()
        elif kind is LayerKind.CONV2D:
            c, h, w = shapes[idx]
            n = x.shape[0]
            cols = im2col(x.reshape(n, c, h, w), layer.kernel, layer.stride, layer.padding)
            y = net.weights[layer.weight].to_real().reshape(layer.out_channels, -1) @ cols
            if layer.bias:
                y = y + net.weights[layer.bias].to_real()[:, None]
            oh, ow = shapes[idx + 1][1:]
            x = col2im_output(y, n, oh, ow).reshape(n, -1)
        elif kind in ELEMENTWISE:
            x = reference(ELEMENTWISE[kind], x)
        elif kind is LayerKind.SOFTMAX:
            x = softmax_reference(x)
        elif kind is LayerKind.LAYERNORM:
            x = layernorm_reference(x, *_gamma_beta(layer, net, x.shape[1]))
    return x


# -------------------------------------------------------------- accuracy


@dataclass(frozen=True)
class AccuracyReport:
    task_id: str
    samples: int
    baseline_metric: float
    int16_metric: float
    granularities: tuple[float, ...]
    cpwl_metrics: tuple[float, ...]
    deltas: tuple[float, ...]
    argmax_agreement_fraction: tuple[float, ...]
    mean_abs_deviation: tuple[float, ...]
    invariant_failures: tuple[str, ...] = ()
    cycle_reports: tuple = field(default=(), compare=False)


def _run_batch(args):
    net, xb, cfg, engine = args
    y, report = run_network(net, xb, cfg, engine)
    return y.to_real(), report


def _batched(net, x, cfg, engine, batch_size, workers):
    jobs = [(net, x[i : i + batch_size], cfg, engine) for i in range(0, len(x), batch_size)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_batch, jobs))  # map keeps input order
    else:
        results = [_run_batch(j) for j in jobs]
    total = CycleReport.empty(cfg)
    for _, r in results:
        total = total + r
    return np.vstack([y for y, _ in results]), total


def accuracy_sweep(
    net: NetworkSpec,
    eval_set: tuple[np.ndarray, np.ndarray],
    granularities,
    cfg: SystolicConfig | None = None,
    engine: str = "fabric",
    task_id: str = "task",
    batch_size: int = 512,
    workers: int = 1,
) -> AccuracyReport:
    """Top-1 accuracy of the float64, INT16-exact and CPWL variants.

    ``deltas[i] = cpwl_metrics[i] - int16_metric``. Inputs are cut into
    fixed batches, so results do not depend on ``workers``.
    """
    if engine not in ("fabric", "functional"):
        raise ValueError("CPWL variants run on the fabric or functional engine")
    cfg = cfg or SystolicConfig()
    x, labels = eval_set
    x = _as_batch(net, x)
    labels = np.asarray(labels)
    granularities = tuple(float(g) for g in granularities)
    if engine == "fabric":
        for g in granularities:
            _check_fabric_granularity(g)
    ref = reference_forward(net, x)
    ref_top = ref.argmax(axis=1)
    baseline = float(np.mean(ref_top == labels))
    y16, _ = _batched(net, x, cfg, "int16", batch_size, workers)
    int16 = float(np.mean(y16.argmax(axis=1) == labels))
    ends_in_softmax = bool(net.layers) and net.layers[-1].kind is LayerKind.SOFTMAX
    metrics, agree, dev, reports, failures = [], [], [], [], []
    for g in granularities:
        y, report = _batched(net.with_granularity(g), x, cfg, engine, batch_size, workers)
        if ends_in_softmax:
            if np.any(y < 0):
                failures.append(f"g={g}: negative softmax output")
            if np.any(y.sum(axis=1) <= 0):
                failures.append(f"g={g}: softmax row sum underflowed to zero")
        top = y.argmax(axis=1)
        metrics.append(float(np.mean(top == labels)))
        agree.append(float(np.mean(top == ref_top)))
        dev.append(float(np.mean(np.abs(y - ref))))
        reports.append(report)
    return AccuracyReport(
        task_id=task_id,
        samples=len(labels),
        baseline_metric=baseline,
        int16_metric=int16,
        granularities=granularities,
        cpwl_metrics=tuple(metrics),
        deltas=tuple(m - int16 for m in metrics),
        argmax_agreement_fraction=tuple(agree),
        mean_abs_deviation=tuple(dev),
        invariant_failures=tuple(failures),
        cycle_reports=tuple(reports),
    )
