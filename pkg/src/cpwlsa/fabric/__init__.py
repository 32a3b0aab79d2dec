"""Cycle-level model of the reconfigurable INT16 systolic array."""

from .config import SystolicConfig, load_config, save_config
from .cycles import (
    CycleReport,
    calibrate_output_bus_width,
    calibration_metadata,
    gemm_cycle_model,
    ipf_cycle_count,
    ipf_cycle_model,
    mhp_cycle_model,
)
from .grid import GridMode, ModeInvariantError, PEGrid, PEMode, PEState, configure_grid
from .sim import DataflowError, FabricPathError, sim_cpwl, sim_gemm, sim_hadamard, sim_ipf, sim_mhp
from .streams import InterleavedStream, StreamKind, deinterleave, rearrange_kb, rearrange_x

__all__ = [
    "CycleReport",
    "DataflowError",
    "FabricPathError",
    "GridMode",
    "InterleavedStream",
    "ModeInvariantError",
    "PEGrid",
    "PEMode",
    "PEState",
    "StreamKind",
    "SystolicConfig",
    "calibrate_output_bus_width",
    "calibration_metadata",
    "configure_grid",
    "deinterleave",
    "gemm_cycle_model",
    "ipf_cycle_count",
    "ipf_cycle_model",
    "load_config",
    "mhp_cycle_model",
    "rearrange_kb",
    "rearrange_x",
    "save_config",
    "sim_cpwl",
    "sim_gemm",
    "sim_hadamard",
    "sim_ipf",
    "sim_mhp",
]
