"""Execution backends shared by every layer.

A backend supplies the three array primitives: ``gemm``, ``hadamard``
(MHP with caller-supplied ``K`` and ``B``) and ``cpwl`` (IPF followed by MHP).
:class:`FabricBackend` steps the simulated grid; :class:`FunctionalBackend`
uses the golden integer functions plus the analytic cycle model and is
bit-identical to it. Only the functional backend accepts granularities that
are not powers of two, indexing those tables by division.
"""

from __future__ import annotations

import dataclasses

from ..cpwl import SegmentTable, ipf, mhp
from ..fabric import (
    CycleReport,
    SystolicConfig,
    gemm_cycle_model,
    ipf_cycle_count,
    mhp_cycle_model,
    sim_cpwl,
    sim_gemm,
    sim_hadamard,
)
from ..fixedpoint import FixedPointFormat, QuantizedMatrix, matmul_fixed


def _no_nonlinear(report: CycleReport) -> CycleReport:
    # plain element-wise arithmetic is not a nonlinear evaluation
    return dataclasses.replace(report, nonlinear_evals=0)


class FabricBackend:
    name = "fabric"

    def __init__(self, cfg: SystolicConfig | None = None):
        self.cfg = cfg or SystolicConfig()

    def gemm(self, a: QuantizedMatrix, w: QuantizedMatrix, out_fmt: FixedPointFormat):
        return sim_gemm(a, w, self.cfg, out_fmt)

    def hadamard(self, x, k, b, out_fmt: FixedPointFormat):
        y, report = sim_hadamard(x, k, b, self.cfg, out_fmt)
        return y, _no_nonlinear(report)

    def cpwl(self, x: QuantizedMatrix, table: SegmentTable, out_fmt: FixedPointFormat):
        return sim_cpwl(x, table, self.cfg, out_fmt)


class FunctionalBackend:
    name = "functional"

    def __init__(self, cfg: SystolicConfig | None = None):
        self.cfg = cfg or SystolicConfig()

    def gemm(self, a, w, out_fmt):
        return matmul_fixed(a, w, out_fmt), gemm_cycle_model(a.rows, w.cols, a.cols, self.cfg)

    def hadamard(self, x, k, b, out_fmt):
        return mhp(x, k, b, out_fmt), _no_nonlinear(mhp_cycle_model(x.rows, x.cols, self.cfg))

    def cpwl(self, x, table, out_fmt):
        _, k, b = ipf(x, table)
        report = mhp_cycle_model(x.rows, x.cols, self.cfg)
        report = dataclasses.replace(report, ipf_cycles=ipf_cycle_count(x.rows, x.cols, self.cfg))
        return mhp(x, k, b, out_fmt), report


def make_backend(name: str, cfg: SystolicConfig | None = None):
    if name == "fabric":
        return FabricBackend(cfg)
    if name == "functional":
        return FunctionalBackend(cfg)
    raise ValueError(f"unknown backend {name!r}")
