import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpwlsa.fixedpoint import (
    Q1_15,
    Q3_13,
    Q8_8,
    FixedPointFormat,
    QuantizedMatrix,
    dequantize,
    fit_format,
    matmul_fixed,
    quantize,
    round_shift,
)


def test_quantize_examples():
    assert quantize(0.0, Q8_8) == 0
    assert quantize(1.0, Q8_8) == 256
    assert quantize(200.0, Q8_8) == 32767
    assert quantize(-200.0, Q8_8) == -32768


def test_quantize_rounds_half_to_even():
    # 0.5 and 1.5 steps
    assert quantize(2 ** -9, Q8_8) == 0
    assert quantize(3 * 2 ** -9, Q8_8) == 2
    assert quantize(-(2 ** -9), Q8_8) == 0


def test_dequantize_examples():
    assert dequantize(256, Q8_8) == 1.0
    assert dequantize(-128, Q8_8) == -0.5
    assert abs(dequantize(quantize(3.14159, Q8_8), Q8_8) - 3.14159) <= 2 ** -9


@given(st.integers(-32768, 32767), st.integers(0, 15))
def test_representable_values_round_trip(v, frac):
    fmt = FixedPointFormat(frac)
    assert quantize(dequantize(v, fmt), fmt) == v


def test_format_names_and_ranges():
    assert str(Q8_8) == "Q8.8"
    assert str(Q3_13) == "Q3.13"
    assert FixedPointFormat.parse("Q2.14").frac_bits == 14
    assert FixedPointFormat.parse("11").frac_bits == 11
    assert Q8_8.max_value == 128 - 2 ** -8
    assert Q1_15.one == 32767  # 1.0 saturates
    with pytest.raises(ValueError):
        FixedPointFormat(16)


def test_round_shift_matches_rne():
    v = np.arange(-4096, 4096)
    for shift in (1, 3, 8):
        expect = np.rint(v / 2.0 ** shift).astype(np.int64)
        assert np.array_equal(round_shift(v, shift), expect)
    assert np.array_equal(round_shift(np.array([3]), -2), [12])


def test_fit_format_picks_finest_range():
    assert fit_format([1.0]).frac_bits == 14
    assert fit_format([0.5]).frac_bits == 15
    assert fit_format([100.0]).frac_bits == 8
    assert fit_format([3.0], max_frac=13).frac_bits == 13


def test_quantized_matrix_validation():
    with pytest.raises(ValueError):
        QuantizedMatrix(np.zeros(3), Q8_8)
    with pytest.raises(ValueError):
        QuantizedMatrix(np.array([[40000]]), Q8_8)
    m = QuantizedMatrix.from_real([[1.5, -2.0]], Q8_8)
    assert m.data.tolist() == [[384, -512]]
    with pytest.raises(ValueError):
        m.data[0, 0] = 1


def test_matmul_fixed_against_scalar_loop(rng):
    a = QuantizedMatrix(rng.integers(-32768, 32767, size=(5, 7)), Q8_8)
    w = QuantizedMatrix(rng.integers(-32768, 32767, size=(7, 3)), Q8_8)
    c = matmul_fixed(a, w)
    for i in range(5):
        for j in range(3):
            acc = sum(int(a.data[i, t]) * int(w.data[t, j]) for t in range(7))
            acc = max(-(2 ** 31), min(2 ** 31 - 1, acc))
            q = round(acc / 256)  # Python round is half-to-even
            assert c.data[i, j] == max(-32768, min(32767, q))


def test_matmul_fixed_dimension_check():
    a = QuantizedMatrix.full(2, 3, 1.0, Q8_8)
    with pytest.raises(ValueError):
        matmul_fixed(a, a)
