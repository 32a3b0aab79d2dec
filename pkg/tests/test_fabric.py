import dataclasses
import json

import numpy as np
import pytest

from cpwlsa.cpwl import FunctionId, build_segment_table, ipf, mhp
from cpwlsa.fabric import (
    DataflowError,
    FabricPathError,
    GridMode,
    ModeInvariantError,
    PEMode,
    StreamKind,
    SystolicConfig,
    calibrate_output_bus_width,
    configure_grid,
    deinterleave,
    gemm_cycle_model,
    ipf_cycle_count,
    load_config,
    mhp_cycle_model,
    rearrange_kb,
    rearrange_x,
    save_config,
    sim_cpwl,
    sim_gemm,
    sim_ipf,
    sim_mhp,
)
from cpwlsa.fixedpoint import Q8_8, FixedPointFormat, QuantizedMatrix, matmul_fixed


def rand_q(rng, rows, cols, fmt=Q8_8, span=32767):
    return QuantizedMatrix(rng.integers(-span, span, size=(rows, cols), endpoint=True), fmt)


def scalar(v):
    return QuantizedMatrix.from_real([[v]], Q8_8)


# ----------------------------------------------------------------- config


def test_config_defaults_and_json_round_trip(tmp_path):
    cfg = SystolicConfig()
    assert (cfg.pe_rows, cfg.pe_cols, cfg.macs_per_pe, cfg.output_bus_width) == (8, 8, 16, 1)
    assert cfg.k_tile == 48
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_config_rejects_unknown_keys_and_bad_values(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"pe_rows": 4, "pe_colz": 4}))
    with pytest.raises(ValueError, match="pe_colz"):
        load_config(p)
    with pytest.raises(ValueError):
        SystolicConfig(macs_per_pe=12)
    with pytest.raises(ValueError):
        SystolicConfig(pe_rows=0)


def test_config_hash_tracks_contents():
    a, b = SystolicConfig(), SystolicConfig(pe_rows=16)
    assert a.config_hash() == SystolicConfig().config_hash()
    assert a.config_hash() != b.config_hash()


# ----------------------------------------------------------------- grid


def test_configure_grid_modes():
    counts = configure_grid(SystolicConfig(pe_rows=3, pe_cols=3), GridMode.MHP).mode_counts()
    assert counts[PEMode.MHP_COMPUTE] == 3 and counts[PEMode.MHP_TRANSMIT] == 6
    g = configure_grid(SystolicConfig(), GridMode.GEMM)
    assert g.c1.sum() == 64 and g.c2.sum() == 64
    rect = configure_grid(SystolicConfig(pe_rows=4, pe_cols=8), GridMode.MHP)
    assert rect.mode_counts()[PEMode.MHP_COMPUTE] == 4
    assert rect.pe(2, 2).pe_mode is PEMode.MHP_COMPUTE
    assert rect.pe(2, 3).pe_mode is PEMode.MHP_TRANSMIT
    assert (rect.pe(2, 3).c1, rect.pe(2, 3).c2) == (True, False)


def test_flag_fault_trips_mode_check():
    g = configure_grid(SystolicConfig(), GridMode.MHP)
    g.check_modes()
    g.inject_flag_fault(0, 1, "c1")
    with pytest.raises(ModeInvariantError, match="PE\\(0,1\\)"):
        g.check_modes()


def test_baseline_grid_only_runs_gemm():
    with pytest.raises(ValueError):
        configure_grid(SystolicConfig(), GridMode.MHP, baseline=True)


# ----------------------------------------------------------------- GEMM


def test_gemm_identity(rng):
    cfg = SystolicConfig(pe_rows=4, pe_cols=4)
    w = rand_q(rng, 4, 4)
    c, rep = sim_gemm(QuantizedMatrix.from_real(np.eye(4), Q8_8), w, cfg)
    assert c == w
    assert rep.mac_ops == 64


def test_gemm_scalar(cfg):
    c, _ = sim_gemm(scalar(2.0), scalar(3.0), cfg)
    assert c.to_real()[0, 0] == 6.0


def test_gemm_random_32_cubed_matches_oracle(rng, cfg):
    a, w = rand_q(rng, 32, 32), rand_q(rng, 32, 32)
    c, rep = sim_gemm(a, w, cfg)
    assert c == matmul_fixed(a, w)
    assert rep == gemm_cycle_model(32, 32, 32, cfg)
    # triple loop on a corner
    acc = sum(int(a.data[3, t]) * int(w.data[t, 5]) for t in range(32))
    acc = max(-(2 ** 31), min(2 ** 31 - 1, acc))
    assert c.data[3, 5] == max(-32768, min(32767, round(acc / 256)))


@pytest.mark.parametrize("shape", [(1, 1, 1), (7, 3, 50), (9, 17, 100), (20, 1, 5)])
@pytest.mark.parametrize("geom", [(8, 8, 16), (4, 8, 2), (3, 5, 4)])
def test_gemm_odd_shapes_and_formats(rng, shape, geom):
    m, n, k = shape
    cfg = SystolicConfig(pe_rows=geom[0], pe_cols=geom[1], macs_per_pe=geom[2])
    a = rand_q(rng, m, k, FixedPointFormat(12), 3000)
    w = rand_q(rng, k, n, FixedPointFormat(3), 3000)
    out = FixedPointFormat(6)
    c, rep = sim_gemm(a, w, cfg, out)
    assert c == matmul_fixed(a, w, out)
    assert rep == gemm_cycle_model(m, n, k, cfg)


def test_gemm_counters(rng):
    cfg = SystolicConfig(pe_rows=4, pe_cols=4, macs_per_pe=4)
    grid = configure_grid(cfg)
    sim_gemm(rand_q(rng, 4, 8), rand_q(rng, 8, 4), cfg, grid=grid)
    assert grid.mac_activity.sum() == 4 * 4 * 8
    assert np.all(grid.mac_activity == 8)
    # 8 operands each way; the last column passes nothing right, the last row nothing down
    expect = np.full((4, 4), 16)
    expect[:, -1] -= 8
    expect[-1, :] -= 8
    assert np.array_equal(grid.forwarded, expect)


def test_gemm_rejects_mismatch(cfg):
    with pytest.raises(ValueError):
        sim_gemm(QuantizedMatrix.full(2, 3, 1, Q8_8), QuantizedMatrix.full(2, 3, 1, Q8_8), cfg)


def test_gemm_baseline_is_identical(rng, cfg):
    a, w = rand_q(rng, 20, 30), rand_q(rng, 30, 11)
    assert sim_gemm(a, w, cfg) == sim_gemm(a, w, cfg, baseline=True)


# ----------------------------------------------------------------- streams


def test_rearrange_kb_small_cases():
    cfg1 = SystolicConfig(pe_rows=1, pe_cols=1)
    s = rearrange_kb(scalar(0.5), scalar(-1.0), cfg1)
    assert s.lane_count == 1 and s.pair_count == 1
    assert s.payload[0].tolist() == [[128, -256]]
    cfg2 = SystolicConfig(pe_rows=2, pe_cols=2)
    k = QuantizedMatrix(np.array([[1, 2], [3, 4]]), Q8_8)
    b = QuantizedMatrix(np.array([[5, 6], [7, 8]]), Q8_8)
    s = rearrange_kb(k, b, cfg2)
    assert s.stream_kind is StreamKind.KB_PAIRS
    assert s.payload[0].tolist() == [[1, 5], [2, 6]]
    assert s.payload[1].tolist() == [[3, 7], [4, 8]]


def test_stream_round_trip(rng, cfg):
    k, b = rand_q(rng, 8, 8), rand_q(rng, 8, 8, FixedPointFormat(4))
    assert deinterleave(rearrange_kb(k, b, cfg)) == (k, b)
    x = rand_q(rng, 13, 5)
    x2, ones = deinterleave(rearrange_x(x, cfg))
    assert x2 == x and np.all(ones.data == 256)


def test_rearrange_x_pairs_with_one(cfg):
    s = rearrange_x(scalar(5.0), cfg)
    assert s.payload[0].tolist() == [[1280, 256]]
    s = rearrange_x(QuantizedMatrix.full(4, 4, 0.0, Q8_8), cfg)
    assert all(np.all(lane == [0, 256]) for lane in s.payload if len(lane))
    with pytest.raises(ValueError):
        rearrange_x(QuantizedMatrix.full(1, 1, 0.5, FixedPointFormat(15)), cfg)


# ----------------------------------------------------------------- MHP


def test_mhp_scalar_on_diagonal_corner(cfg):
    grid = configure_grid(cfg, GridMode.MHP)
    y, rep = sim_mhp(rearrange_x(scalar(2.0), cfg), rearrange_kb(scalar(3.0), scalar(1.0), cfg), cfg, grid=grid)
    assert y.to_real()[0, 0] == 7.0
    assert grid.mac_activity[0, 0] == 2
    assert grid.mac_activity.sum() == 2
    assert rep.mac_ops == 2


def test_mhp_8x8_engages_exactly_the_diagonal(rng, cfg):
    grid = configure_grid(cfg, GridMode.MHP)
    x, k, b = rand_q(rng, 8, 8), rand_q(rng, 8, 8), rand_q(rng, 8, 8)
    sim_mhp(rearrange_x(x, cfg), rearrange_kb(k, b, cfg), cfg, grid=grid)
    active = np.argwhere(grid.mac_activity > 0)
    assert len(active) == 8 and np.all(active[:, 0] == active[:, 1])
    off = grid.forwarded.copy()
    np.fill_diagonal(off, 0)
    assert off.sum() > 0  # transmission PEs carried data


def test_mhp_16x16_on_8x8_is_bit_exact(rng, cfg):
    x, k, b = rand_q(rng, 16, 16), rand_q(rng, 16, 16, FixedPointFormat(13)), rand_q(rng, 16, 16)
    grid = configure_grid(cfg, GridMode.MHP)
    y, rep = sim_mhp(rearrange_x(x, cfg), rearrange_kb(k, b, cfg), cfg, grid=grid)
    assert y == mhp(x, k, b)
    assert rep.mac_ops == 2 * 16 * 16 == grid.mac_activity.sum()
    assert rep == mhp_cycle_model(16, 16, cfg)


@pytest.mark.parametrize("geom", [(4, 8, 2), (8, 4, 8), (1, 1, 2), (5, 3, 16)])
@pytest.mark.parametrize("shape", [(1, 1), (7, 9), (17, 3)])
def test_mhp_shapes_and_geometries(rng, geom, shape):
    cfg = SystolicConfig(pe_rows=geom[0], pe_cols=geom[1], macs_per_pe=geom[2])
    x = rand_q(rng, *shape, FixedPointFormat(10))
    k, b = rand_q(rng, *shape, FixedPointFormat(2)), rand_q(rng, *shape, FixedPointFormat(14))
    grid = configure_grid(cfg, GridMode.MHP)
    y, rep = sim_mhp(rearrange_x(x, cfg), rearrange_kb(k, b, cfg), cfg, Q8_8, grid)
    assert y == mhp(x, k, b, Q8_8)
    assert rep == mhp_cycle_model(*shape, cfg)
    assert grid.mac_activity.sum() - np.trace(grid.mac_activity) == 0


def test_mhp_rejects_mismatched_streams(rng, cfg):
    x = rand_q(rng, 4, 4)
    with pytest.raises(ValueError):
        sim_mhp(rearrange_x(x, cfg), rearrange_kb(rand_q(rng, 4, 5), rand_q(rng, 4, 5), cfg), cfg)
    with pytest.raises(ValueError):
        sim_mhp(rearrange_kb(x, x, cfg), rearrange_x(x, cfg), cfg)


def test_mhp_needs_two_multipliers():
    cfg = SystolicConfig(pe_rows=2, pe_cols=2, macs_per_pe=1)
    x = scalar(1.0)
    with pytest.raises(ValueError):
        sim_mhp(rearrange_x(x, cfg), rearrange_kb(x, x, cfg), cfg)


def test_mhp_with_faulty_flag_raises(cfg):
    grid = configure_grid(cfg, GridMode.MHP)
    grid.inject_flag_fault(2, 5, "c2")
    x = scalar(1.0)
    with pytest.raises(ModeInvariantError):
        sim_mhp(rearrange_x(x, cfg), rearrange_kb(x, x, cfg), cfg, grid=grid)


def test_dataflow_error_is_a_runtime_error():
    assert issubclass(DataflowError, RuntimeError)


# ----------------------------------------------------------------- IPF


def test_sim_ipf_examples(gelu_table, cfg):
    k, b, cycles = sim_ipf(scalar(0.0), gelu_table, cfg)
    assert k.data[0, 0] == gelu_table.k_values[32] and b.data[0, 0] == gelu_table.b_values[32]
    assert cycles == 1 + 4
    _, _, cycles = sim_ipf(QuantizedMatrix.full(8, 8, 0.0, Q8_8), gelu_table, cfg)
    assert cycles == 26
    assert ipf_cycle_count(8, 8, dataclasses.replace(cfg, dram_latency=10)) == 36


def test_sim_ipf_bit_exact_32x32(gelu_table, cfg, rng):
    x = rand_q(rng, 32, 32)
    k, b, _ = sim_ipf(x, gelu_table, cfg)
    _, k_ref, b_ref = ipf(x, gelu_table)
    assert k == k_ref and b == b_ref


def test_sim_ipf_rejects_non_power_of_two(cfg):
    table = build_segment_table(FunctionId.GELU, 0.1, -8.0, 8.0)
    with pytest.raises(FabricPathError, match="power-of-two"):
        sim_ipf(scalar(0.0), table, cfg)


def test_sim_cpwl_composes_the_stages(gelu_table, cfg, rng):
    x = rand_q(rng, 10, 12, span=3000)
    y, rep = sim_cpwl(x, gelu_table, cfg)
    _, k, b = ipf(x, gelu_table)
    assert y == mhp(x, k, b)
    assert rep.ipf_cycles == ipf_cycle_count(10, 12, cfg)
    assert rep.nonlinear_evals == 120


# ----------------------------------------------------------------- cycles


def test_gemm_cycle_degenerate_grid():
    cfg = SystolicConfig(pe_rows=1, pe_cols=1, macs_per_pe=1)
    r = gemm_cycle_model(1, 1, 1, cfg)
    assert (r.fill_cycles, r.compute_cycles, r.drain_cycles) == (0, 1, 1)


def test_gemm_cycles_never_grow_with_more_macs():
    for size in (1, 7, 32, 100, 300):
        totals = [gemm_cycle_model(size, size, size, SystolicConfig(macs_per_pe=m)).total_cycles
                  for m in (1, 2, 4, 8, 16, 32, 64)]
        assert all(a >= b for a, b in zip(totals, totals[1:]))


def test_gemm_cycle_tiling_arithmetic():
    cfg = SystolicConfig(pe_rows=16, pe_cols=16, macs_per_pe=16)
    r = gemm_cycle_model(32, 32, 32, cfg)
    assert (r.fill_cycles, r.compute_cycles, r.drain_cycles) == (4 * 30, 4 * 2, 4 * 256)
    r = gemm_cycle_model(16, 16, 100, cfg)  # chunks 48, 48, 4
    assert r.fill_cycles == 3 * 30 and r.compute_cycles == 3 + 3 + 1


def test_calibration_hits_drain_target():
    assert calibrate_output_bus_width() == 1
    r = gemm_cycle_model(32, 32, 32, SystolicConfig(pe_rows=16, pe_cols=16, macs_per_pe=16))
    assert abs(r.drain_fraction - 0.848) <= 0.05
    assert r.metadata["output_bus_width"] == 1


def test_mhp_cycle_model_examples():
    one = SystolicConfig(pe_rows=1, pe_cols=1)
    r = mhp_cycle_model(1, 1, one)
    assert (r.fill_cycles, r.compute_cycles) == (0, 1)
    r = mhp_cycle_model(64, 64, SystolicConfig())
    assert r.compute_cycles == 64
    for geom in ((2, 2), (4, 8), (16, 16)):
        assert mhp_cycle_model(9, 13, SystolicConfig(pe_rows=geom[0], pe_cols=geom[1])).mac_ops == 2 * 9 * 13


def test_report_addition_and_rates():
    cfg = SystolicConfig()
    r = gemm_cycle_model(8, 8, 8, cfg) + mhp_cycle_model(8, 8, cfg)
    assert r.linear_mac_ops == 512 and r.nonlinear_evals == 64
    assert r.gops == pytest.approx(512 / (r.total_cycles / 200e6) / 1e9)
    with pytest.raises(ValueError):
        r + gemm_cycle_model(1, 1, 1, SystolicConfig(pe_rows=4))
