"""PE grid state and the two-flag reconfiguration.

Each PE carries two control logics. ``c1`` lets operands pass on to the
next PE, ``c2`` lets the PE multiply-accumulate locally:

============  =====  =====
mode           c1     c2
============  =====  =====
GEMM           on     on
MHP_COMPUTE    off    on
MHP_TRANSMIT   on     off
============  =====  =====

A baseline grid has neither logic; its PEs always forward and compute.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .config import SystolicConfig


class PEMode(Enum):
    GEMM = 0
    MHP_COMPUTE = 1
    MHP_TRANSMIT = 2


class GridMode(str, Enum):
    GEMM = "GEMM"
    MHP = "MHP"


MODE_FLAGS = {
    PEMode.GEMM: (True, True),
    PEMode.MHP_COMPUTE: (False, True),
    PEMode.MHP_TRANSMIT: (True, False),
}


class ModeInvariantError(RuntimeError):
    """A PE's C1/C2 flags disagree with its declared mode."""


@dataclass
class PEState:
    pe_mode: PEMode
    c1: bool
    c2: bool
    accumulator: int
    mac_activity_count: int
    forwarded_count: int


class PEGrid:
    def __init__(self, cfg: SystolicConfig, mode: GridMode = GridMode.GEMM, baseline: bool = False):
        mode = GridMode(mode)
        if baseline and mode is not GridMode.GEMM:
            raise ValueError("a baseline grid has no control logic and only runs GEMM")
        self.cfg = cfg
        self.mode = mode
        self.baseline = baseline
        shape = (cfg.pe_rows, cfg.pe_cols)
        self.pe_modes = np.full(shape, PEMode.GEMM.value, dtype=np.int8)
        if mode is GridMode.MHP:
            self.pe_modes[:] = PEMode.MHP_TRANSMIT.value
            d = np.arange(cfg.diagonal)
            self.pe_modes[d, d] = PEMode.MHP_COMPUTE.value
        if baseline:
            self.c1 = self.c2 = None
        else:
            self.c1 = np.zeros(shape, dtype=bool)
            self.c2 = np.zeros(shape, dtype=bool)
            for pe_mode, (c1, c2) in MODE_FLAGS.items():
                sel = self.pe_modes == pe_mode.value
                self.c1[sel] = c1
                self.c2[sel] = c2
        self.accumulator = np.zeros(shape, dtype=np.int64)
        self.mac_activity = np.zeros(shape, dtype=np.int64)
        self.forwarded = np.zeros(shape, dtype=np.int64)
        self.cycle = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.pe_modes.shape

    @property
    def forward_enabled(self) -> np.ndarray:
        if self.baseline:
            return np.ones(self.shape, dtype=bool)
        return self.c1

    @property
    def compute_enabled(self) -> np.ndarray:
        if self.baseline:
            return np.ones(self.shape, dtype=bool)
        return self.c2

    def pe(self, i: int, j: int) -> PEState:
        c1 = True if self.baseline else bool(self.c1[i, j])
        c2 = True if self.baseline else bool(self.c2[i, j])
        return PEState(
            pe_mode=PEMode(int(self.pe_modes[i, j])),
            c1=c1,
            c2=c2,
            accumulator=int(self.accumulator[i, j]),
            mac_activity_count=int(self.mac_activity[i, j]),
            forwarded_count=int(self.forwarded[i, j]),
        )

    def mode_counts(self) -> dict[PEMode, int]:
        return {m: int(np.sum(self.pe_modes == m.value)) for m in PEMode}

    def check_modes(self) -> None:
        """Raise :class:`ModeInvariantError` if any PE's flags contradict its mode."""
        if self.baseline:
            return
        for pe_mode, (c1, c2) in MODE_FLAGS.items():
            sel = self.pe_modes == pe_mode.value
            bad = sel & ((self.c1 != c1) | (self.c2 != c2))
            if bad.any():
                i, j = (int(v) for v in np.argwhere(bad)[0])
                raise ModeInvariantError(
                    f"mode invariant violated at PE({i},{j}) in cycle {self.cycle}: "
                    f"mode {pe_mode.name} requires c1={c1}, c2={c2}, "
                    f"found c1={bool(self.c1[i, j])}, c2={bool(self.c2[i, j])}"
                )
        if self.mode is GridMode.MHP:
            diag = np.zeros(self.shape, dtype=bool)
            d = np.arange(self.cfg.diagonal)
            diag[d, d] = True
            if not np.array_equal(self.pe_modes == PEMode.MHP_COMPUTE.value, diag):
                raise ModeInvariantError("mode invariant violated: MHP compute PEs must be exactly the diagonal")

    def inject_flag_fault(self, i: int, j: int, flag: str = "c1") -> None:
        """Test hook: flip one control flag without changing the PE's declared mode."""
        if self.baseline:
            raise ValueError("baseline grid has no control flags")
        arr = self.c1 if flag == "c1" else self.c2
        arr[i, j] = not arr[i, j]

    def reset_counters(self) -> None:
        self.accumulator[:] = 0
        self.mac_activity[:] = 0
        self.forwarded[:] = 0
        self.cycle = 0


def configure_grid(cfg: SystolicConfig, mode: GridMode = GridMode.GEMM, baseline: bool = False) -> PEGrid:
    return PEGrid(cfg, mode, baseline)
