"""Phase-level cycle model.

Phases run back to back (no overlap):

* GEMM, per output tile of ``R x C`` results: the reduction is split into
  chunks of ``cfg.k_tile``; every chunk pays a skew fill of ``R + C - 2``
  cycles plus ``ceil(chunk / m)`` compute cycles. Accumulators are
  output-stationary, so the tile drains once, ``ceil(R*C / bus)`` cycles.
* MHP, per band of ``D = min(R, C)`` rows: fill ``D - 1`` (deepest hop to
  the diagonal), compute ``ceil(2N / m)`` (two multipliers per output),
  drain ``N * ceil(D / bus)`` (one result wave per column).
* IPF: ``ceil(M*N / (ports * l3_instances))`` plus pipeline depth plus a
  fixed DRAM round-trip.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .config import SystolicConfig

TARGET_DRAIN_FRACTION = 0.848
CALIBRATION_POINT = {"pe_rows": 16, "pe_cols": 16, "macs_per_pe": 16, "size": 32}


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class CycleReport:
    fill_cycles: int = 0
    compute_cycles: int = 0
    drain_cycles: int = 0
    ipf_cycles: int = 0
    mac_ops: int = 0
    linear_mac_ops: int = 0
    nonlinear_evals: int = 0
    peak_macs_per_cycle: int = 1
    clock_mhz: float = 200.0
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def total_cycles(self) -> int:
        return self.fill_cycles + self.compute_cycles + self.drain_cycles + self.ipf_cycles

    @property
    def seconds(self) -> float:
        return self.total_cycles / (self.clock_mhz * 1e6)

    @property
    def utilization(self) -> float:
        if self.total_cycles == 0:
            return 0.0
        return self.mac_ops / (self.total_cycles * self.peak_macs_per_cycle)

    @property
    def gops(self) -> float:
        """Linear multiply-accumulates per second, in billions."""
        if self.total_cycles == 0:
            return 0.0
        return self.linear_mac_ops / self.seconds / 1e9

    @property
    def gnfs(self) -> float:
        """Nonlinear scalar evaluations per second, in billions."""
        if self.total_cycles == 0:
            return 0.0
        return self.nonlinear_evals / self.seconds / 1e9

    @property
    def drain_fraction(self) -> float:
        return self.drain_cycles / self.total_cycles if self.total_cycles else 0.0

    def __add__(self, other: "CycleReport") -> "CycleReport":
        if not isinstance(other, CycleReport):
            return NotImplemented
        if (self.peak_macs_per_cycle, self.clock_mhz) != (other.peak_macs_per_cycle, other.clock_mhz):
            raise ValueError("cannot add reports from different configurations")
        return dataclasses.replace(
            self,
            fill_cycles=self.fill_cycles + other.fill_cycles,
            compute_cycles=self.compute_cycles + other.compute_cycles,
            drain_cycles=self.drain_cycles + other.drain_cycles,
            ipf_cycles=self.ipf_cycles + other.ipf_cycles,
            mac_ops=self.mac_ops + other.mac_ops,
            linear_mac_ops=self.linear_mac_ops + other.linear_mac_ops,
            nonlinear_evals=self.nonlinear_evals + other.nonlinear_evals,
            metadata={**self.metadata, **other.metadata},
        )

    @classmethod
    def empty(cls, cfg: SystolicConfig) -> "CycleReport":
        return cls(peak_macs_per_cycle=cfg.peak_macs_per_cycle, clock_mhz=cfg.clock_mhz, metadata=_meta(cfg))


def _meta(cfg: SystolicConfig) -> dict:
    return calibration_metadata(cfg)


def k_chunks(k_dim: int, cfg: SystolicConfig) -> list[int]:
    kt = cfg.k_tile
    full, rest = divmod(k_dim, kt)
    return [kt] * full + ([rest] if rest else [])


def gemm_cycle_model(m_dim: int, n_dim: int, k_dim: int, cfg: SystolicConfig) -> CycleReport:
    if min(m_dim, n_dim, k_dim) < 1:
        raise ValueError("dimensions must be positive")
    r, c, m = cfg.pe_rows, cfg.pe_cols, cfg.macs_per_pe
    tiles = ceil_div(m_dim, r) * ceil_div(n_dim, c)
    chunks = k_chunks(k_dim, cfg)
    macs = m_dim * n_dim * k_dim
    return CycleReport(
        fill_cycles=tiles * len(chunks) * (r + c - 2),
        compute_cycles=tiles * sum(ceil_div(ck, m) for ck in chunks),
        drain_cycles=tiles * ceil_div(r * c, cfg.output_bus_width),
        mac_ops=macs,
        linear_mac_ops=macs,
        peak_macs_per_cycle=cfg.peak_macs_per_cycle,
        clock_mhz=cfg.clock_mhz,
        metadata=_meta(cfg),
    )


def mhp_cycle_model(m_dim: int, n_dim: int, cfg: SystolicConfig) -> CycleReport:
    if min(m_dim, n_dim) < 1:
        raise ValueError("dimensions must be positive")
    d = cfg.diagonal
    bands = ceil_div(m_dim, d)
    return CycleReport(
        fill_cycles=bands * (d - 1),
        compute_cycles=bands * ceil_div(2 * n_dim, cfg.macs_per_pe),
        drain_cycles=bands * n_dim * ceil_div(d, cfg.output_bus_width),
        mac_ops=2 * m_dim * n_dim,
        nonlinear_evals=m_dim * n_dim,
        peak_macs_per_cycle=cfg.peak_macs_per_cycle,
        clock_mhz=cfg.clock_mhz,
        metadata=_meta(cfg),
    )


def ipf_cycle_count(m_dim: int, n_dim: int, cfg: SystolicConfig) -> int:
    per_cycle = cfg.ipf_ports * cfg.l3_instances
    return ceil_div(m_dim * n_dim, per_cycle) + cfg.ipf_pipeline_depth + cfg.dram_latency


def ipf_cycle_model(m_dim: int, n_dim: int, cfg: SystolicConfig) -> CycleReport:
    return dataclasses.replace(CycleReport.empty(cfg), ipf_cycles=ipf_cycle_count(m_dim, n_dim, cfg))


def calibrate_output_bus_width(target: float = TARGET_DRAIN_FRACTION, base: SystolicConfig | None = None) -> int:
    """Bus width whose drain fraction at the calibration point is closest to ``target``.

    The point is a 32x32x32 GEMM on 16x16 PEs with 16 MACs each. Ties go to
    the narrower bus.
    """
    base = base or SystolicConfig()
    point = CALIBRATION_POINT
    best = None
    for bus in range(1, point["pe_rows"] * point["pe_cols"] + 1):
        cfg = dataclasses.replace(
            base,
            pe_rows=point["pe_rows"],
            pe_cols=point["pe_cols"],
            macs_per_pe=point["macs_per_pe"],
            output_bus_width=bus,
        )
        frac = gemm_cycle_model(point["size"], point["size"], point["size"], cfg).drain_fraction
        gap = abs(frac - target)
        if best is None or gap < best[0]:
            best = (gap, bus)
    return best[1]


def calibration_metadata(cfg: SystolicConfig) -> dict:
    return {
        "output_bus_width": cfg.output_bus_width,
        "calibration_target_drain_fraction": TARGET_DRAIN_FRACTION,
        "calibration_point": "32x32x32 GEMM on 16x16 PEs, 16 MACs/PE",
    }
