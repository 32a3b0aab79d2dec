import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpwlsa.cpwl import (
    FunctionId,
    approximation_error_report,
    build_segment_table,
    cpwl_eval,
    cpwl_eval_q,
    default_bounds,
    ipf,
    load_table,
    mhp,
    reference,
    save_table,
    segment_index,
    segment_index_floor,
    segment_index_shift,
)
from cpwlsa.fixedpoint import Q8_8, FixedPointFormat, QuantizedMatrix, dequantize, quantize

ALL_INT16 = np.arange(-32768, 32768)

# max |err| of GELU, g=0.25 on [-8, 8), Q8.8 in and out, 1e5 uniform samples
GELU_G025_MAX_ERR = 0.00932421731


def gelu_mp(x):
    x = mpmath.mpf(x)
    return x * (1 + mpmath.erf(x / mpmath.sqrt(2))) / 2


# ------------------------------------------------------------- building


def test_gelu_table_has_64_segments(gelu_table):
    assert gelu_table.num_segments == 64
    assert gelu_table.shift_exponent == -2
    assert str(gelu_table.format_k) == "Q3.13"
    assert str(gelu_table.format_b) == "Q8.8"


@pytest.mark.parametrize("g", [0.125, 0.3, 1.0])
def test_identity_chords_are_exact(g):
    table = build_segment_table(FunctionId.IDENTITY, g, -3.0, -3.0 + 20 * g)
    assert np.all(table.k_real() == 1.0)
    assert np.all(table.b_real() == 0.0)


def test_gelu_slope_matches_high_precision_oracle(gelu_table):
    slope = float((gelu_mp(0.25) - gelu_mp(0)) / mpmath.mpf(0.25))
    assert gelu_table.k_values[32] == quantize(slope, gelu_table.format_k)


def test_reference_gelu_agrees_with_mpmath():
    for x in (-6.5, -1.0, 0.3, 2.75):
        assert reference(FunctionId.GELU, x) == pytest.approx(float(gelu_mp(x)), abs=1e-15)


def test_build_rejects_bad_arguments():
    with pytest.raises(ValueError, match="integer"):
        build_segment_table(FunctionId.GELU, 0.3, -8.0, 8.0)
    with pytest.raises(ValueError, match="x_min > 0"):
        build_segment_table(FunctionId.RECIPROCAL, 0.25, 0.0, 4.0)
    with pytest.raises(ValueError):
        build_segment_table(FunctionId.GELU, 0.0, -8.0, 8.0)


def test_default_bounds_snap_to_whole_segments():
    assert default_bounds(FunctionId.RSQRT, 0.125) == (0.0625, 8.0625)
    assert default_bounds(FunctionId.GELU, 0.25) == (-8.0, 8.0)
    t = build_segment_table(FunctionId.EXP, 0.5)
    assert (t.x_min, t.x_max, t.num_segments) == (-8.0, 4.0, 24)


def test_wide_chords_fall_back_to_coarser_format():
    t = build_segment_table(FunctionId.RECIPROCAL, 0.25)
    # steepest chord near 1/16 is far outside Q3.13
    assert t.format_k.frac_bits < 13
    assert abs(t.k_real()[0] - (1 / 0.3125 - 16) / 0.25) <= t.format_k.step


# ------------------------------------------------------------- indexing


def test_segment_index_examples(gelu_table):
    assert segment_index(quantize(0.0, Q8_8), Q8_8, gelu_table) == 32
    assert segment_index(quantize(100.0, Q8_8), Q8_8, gelu_table) == 63
    assert segment_index(quantize(-0.1, Q8_8), Q8_8, gelu_table) == 31


@pytest.mark.parametrize("fn", [FunctionId.GELU, FunctionId.EXP, FunctionId.RSQRT, FunctionId.RECIPROCAL])
@pytest.mark.parametrize("g", [0.125, 0.25, 0.5, 1.0])
def test_shift_and_floor_agree_on_every_input(fn, g):
    table = build_segment_table(fn, g)
    shift = segment_index_shift(ALL_INT16, Q8_8, table)
    assert np.array_equal(shift, segment_index_floor(ALL_INT16, Q8_8, table))
    assert shift.min() >= 0 and shift.max() <= table.num_segments - 1


def test_non_power_of_two_uses_floor_path():
    table = build_segment_table(FunctionId.GELU, 0.1, -8.0, 8.0)
    assert table.shift_exponent is None
    with pytest.raises(ValueError, match="power-of-two"):
        segment_index_shift(0, Q8_8, table)
    s = segment_index(ALL_INT16, Q8_8, table)
    assert s.min() == 0 and s.max() == table.num_segments - 1
    assert segment_index(quantize(0.05, Q8_8), Q8_8, table) == 80


# ------------------------------------------------------------- ipf / mhp


def test_ipf_examples(gelu_table):
    s, k, b = ipf(QuantizedMatrix.from_real([[0.0]], Q8_8), gelu_table)
    assert s.indices.tolist() == [[32]]
    assert k.data[0, 0] == gelu_table.k_values[32] and k.fmt == gelu_table.format_k
    assert b.data[0, 0] == gelu_table.b_values[32] and b.fmt == gelu_table.format_b
    s, _, _ = ipf(QuantizedMatrix.full(3, 2, 18.0, Q8_8), gelu_table)
    assert np.all(s.indices == 63)


def test_ipf_matches_scalar_loop(gelu_table, rng):
    x = QuantizedMatrix.from_real(rng.uniform(-4, 4, size=(2, 2)), Q8_8)
    _, k, b = ipf(x, gelu_table)
    for i in range(2):
        for j in range(2):
            xr = x.data[i, j] / 256
            seg = min(max(math.floor((xr + 8) / 0.25), 0), 63)
            assert k.data[i, j] == gelu_table.k_values[seg]
            assert b.data[i, j] == gelu_table.b_values[seg]


def test_mhp_examples():
    one = lambda v: QuantizedMatrix.from_real([[v]], Q8_8)  # noqa: E731
    assert mhp(one(2.0), one(3.0), one(1.0)).to_real()[0, 0] == 7.0
    x = QuantizedMatrix.from_real(np.linspace(-3, 3, 16).reshape(4, 4), Q8_8)
    assert mhp(x, QuantizedMatrix.full(4, 4, 1.0, Q8_8), QuantizedMatrix.full(4, 4, 0.0, Q8_8)) == x
    with pytest.raises(ValueError):
        mhp(x, one(1.0), one(0.0))


def _mhp_scalar(x, k, b, fx, fk, fb, fo):
    frac = max(fx + fk, fb)
    acc = (x * k) * 2 ** (frac - fx - fk) + b * 2 ** (frac - fb)
    q = round(acc / 2 ** (frac - fo)) if frac >= fo else acc * 2 ** (fo - frac)
    return max(-32768, min(32767, q))


def test_mhp_matches_scalar_oracle(rng):
    fmts = [FixedPointFormat(f) for f in (8, 13, 5)]
    x, k, b = (QuantizedMatrix(rng.integers(-32768, 32767, size=(4, 4)), f) for f in fmts)
    for out in (Q8_8, FixedPointFormat(14)):
        y = mhp(x, k, b, out)
        for i in range(4):
            for j in range(4):
                want = _mhp_scalar(int(x.data[i, j]), int(k.data[i, j]), int(b.data[i, j]), 8, 13, 5, out.frac_bits)
                assert y.data[i, j] == want


# ------------------------------------------------------------- cpwl_eval


def test_cpwl_eval_examples(gelu_table):
    assert abs(cpwl_eval(0.0, gelu_table)) <= gelu_table.format_b.step
    k63, b63 = gelu_table.k_real()[63], gelu_table.b_real()[63]
    assert abs(cpwl_eval(20.0, gelu_table) - (k63 * 20 + b63)) <= Q8_8.step
    fpp = 1 / math.sqrt(2 * math.pi) * 2  # max |GELU''| is at 0: 2*phi(0)
    bound = 0.25 ** 2 * fpp / 8 + 2.0 ** -(8 - 1)
    assert abs(cpwl_eval(1.3, gelu_table) - float(gelu_mp(1.3))) <= bound


@pytest.mark.parametrize("fn", list(FunctionId))
def test_composition_is_exhaustively_ipf_then_mhp(fn):
    table = build_segment_table(fn, 0.25)
    x = QuantizedMatrix(ALL_INT16.reshape(256, 256), Q8_8)
    _, k, b = ipf(x, table)
    direct = cpwl_eval_q(ALL_INT16, table, Q8_8)
    assert np.array_equal(mhp(x, k, b).data.ravel(), direct)


@pytest.mark.parametrize("fn", list(FunctionId))
@pytest.mark.parametrize("g", [0.125, 0.25, 1.0])
def test_chord_interpolation_at_segment_starts(fn, g):
    table = build_segment_table(fn, g)
    xs = table.segment_starts()
    xs = xs[np.abs(xs) < 127]
    err = np.abs(cpwl_eval(xs, table) - reference(fn, xs))
    bound = max(table.format_b.step, Q8_8.step) + np.abs(xs) * table.format_k.step
    assert np.all(err <= bound)


def test_error_report_identity_and_refinement():
    ident = build_segment_table(FunctionId.IDENTITY, 0.25)
    assert approximation_error_report(ident, 10_000).max_abs_err <= Q8_8.step
    errs = [approximation_error_report(build_segment_table(FunctionId.GELU, g), 20_000).max_abs_err
            for g in (1.0, 0.5, 0.25, 0.125)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    with pytest.raises(ValueError):
        approximation_error_report(ident, 1)


def test_gelu_error_regression_constant(gelu_table):
    r = approximation_error_report(gelu_table, 100_000)
    assert r.max_abs_err == pytest.approx(GELU_G025_MAX_ERR, abs=1e-9)
    assert -8 <= r.argmax_x < 8


# ------------------------------------------------------------- persistence


def test_table_file_round_trip(tmp_path, gelu_table):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_table(gelu_table, p1)
    loaded = load_table(p1)
    assert loaded == gelu_table
    save_table(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_table_rejects_other_documents(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"kind": "something-else"}')
    with pytest.raises(ValueError):
        load_table(p)


# ------------------------------------------------------------- properties


@settings(max_examples=200, deadline=None)
@given(st.integers(-32768, 32767), st.sampled_from([0.125, 0.25, 0.5, 1.0]))
def test_gelu_output_stays_near_reference_inside_caps(xq, g):
    table = build_segment_table(FunctionId.GELU, g)
    x = dequantize(xq, Q8_8)
    y = dequantize(cpwl_eval_q(xq, table, Q8_8), Q8_8)
    if -8 <= x < 8:
        assert abs(y - reference(FunctionId.GELU, x)) <= g * g * 0.8 / 8 + 2 ** -7


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=20))
def test_evaluation_is_deterministic(values):
    table = build_segment_table(FunctionId.TANH, 0.5)
    v = np.array(values)
    assert np.array_equal(cpwl_eval_q(v, table), cpwl_eval_q(v.copy(), table))
