"""Array geometry, buffer sizing and timing knobs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

ELEMENT_BYTES = 2  # INT16


def _kb(kib: float) -> int:
    return round(kib * 1024)


@dataclass(frozen=True)
class SystolicConfig:
    """One array configuration.

    Defaults describe an 8x8 array with 16 MACs per PE and buffers of
    L3 0.28KB x3, L2 0.5KB x24, PE 0.094KB x64 and L1 0.031KB x64.
    ``output_bus_width`` is the single calibration knob of the cycle model.
    """

    pe_rows: int = 8
    pe_cols: int = 8
    macs_per_pe: int = 16
    l1_buffer_bytes: int = _kb(0.031)
    pe_buffer_bytes: int = _kb(0.094)
    l2_bank_bytes: int = _kb(0.5)
    l2_banks: int = 24
    l3_instance_bytes: int = _kb(0.28)
    l3_instances: int = 3
    output_bus_width: int = 1
    ipf_ports: int = 1
    ipf_pipeline_depth: int = 4
    dram_latency: int = 0
    clock_mhz: float = 200.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "dram_latency":
                if value < 0:
                    raise ValueError("dram_latency must be non-negative")
            elif not value > 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        m = self.macs_per_pe
        if m & (m - 1):
            raise ValueError(f"macs_per_pe must be a power of two, got {m}")
        if self.pe_buffer_bytes < ELEMENT_BYTES:
            raise ValueError("pe_buffer_bytes must hold at least one element")

    @property
    def pe_count(self) -> int:
        return self.pe_rows * self.pe_cols

    @property
    def diagonal(self) -> int:
        return min(self.pe_rows, self.pe_cols)

    @property
    def k_tile(self) -> int:
        """Reduction-chunk length staged per pass: one PE buffer of INT16 operands."""
        return self.pe_buffer_bytes // ELEMENT_BYTES

    @property
    def peak_macs_per_cycle(self) -> int:
        return self.pe_count * self.macs_per_pe

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def label(self) -> str:
        return f"{self.pe_rows}x{self.pe_cols}m{self.macs_per_pe}"

    @classmethod
    def from_dict(cls, doc: dict) -> "SystolicConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**doc)


def load_config(path) -> SystolicConfig:
    return SystolicConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: SystolicConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
