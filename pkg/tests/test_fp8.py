from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mtpipe import fp8

from oracles import e4m3_exact_value

FINITE_CODES = [c for c in range(256) if e4m3_exact_value(c) is not None]
NAN_CODES = [c for c in range(256) if e4m3_exact_value(c) is None]


def test_decode_table_matches_bitfield_construction():
    for code in range(256):
        exact = e4m3_exact_value(code)
        got = fp8.decode_e4m3(code)
        if exact is None:
            assert math.isnan(got)
        else:
            assert got == float(exact), f"code {code:#04x}"


def test_nan_codes_are_exactly_the_two_expected():
    assert NAN_CODES == [0x7F, 0xFF]


def test_max_finite_magnitude_is_448():
    finite = [abs(float(e4m3_exact_value(c))) for c in FINITE_CODES]
    assert max(finite) == 448.0
    assert fp8.decode_e4m3(0x7E) == 448.0


def test_subnormal_step():
    assert fp8.decode_e4m3(0x01) == 2.0**-9
    assert fp8.decode_e4m3(0x81) == -(2.0**-9)


def test_every_finite_code_round_trips_exactly():
    for code in FINITE_CODES:
        value = fp8.decode_e4m3(code)
        assert fp8.encode_e4m3(value) == code, f"code {code:#04x} value {value}"


def test_decode_monotone_over_nonnegative_codes():
    values = [fp8.decode_e4m3(c) for c in range(0x7F)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_encode_zero_and_signed_zero():
    assert fp8.encode_e4m3(0.0) == 0x00
    assert fp8.encode_e4m3(-0.0) == 0x80
    assert fp8.decode_e4m3(0x00) == 0.0


def test_encode_saturates_above_max():
    assert fp8.encode_e4m3(1000.0) == 0x7E
    assert fp8.encode_e4m3(-1000.0) == 0xFE
    assert fp8.encode_e4m3(float("inf")) == 0x7E


def test_encode_nan():
    code = fp8.encode_e4m3(float("nan"))
    assert code == fp8.NAN_CODE
    assert math.isnan(fp8.decode_e4m3(code))


def test_round_to_nearest_even_on_ties():
    # Midpoint between codes 0x08 (2**-6) and 0x09 (1.125 * 2**-6) rounds to
    # the even code; midpoint between 0x09 and 0x0A rounds up to even 0x0A.
    lo, hi = fp8.decode_e4m3(0x08), fp8.decode_e4m3(0x09)
    assert fp8.encode_e4m3((lo + hi) / 2) == 0x08
    lo, hi = fp8.decode_e4m3(0x09), fp8.decode_e4m3(0x0A)
    assert fp8.encode_e4m3((lo + hi) / 2) == 0x0A
    # First subnormal midpoint ties down to zero.
    assert fp8.encode_e4m3(2.0**-10) == 0x00


@given(st.floats(allow_nan=False, allow_infinity=False, width=32))
def test_encode_picks_a_nearest_grid_value(x):
    code = fp8.encode_e4m3(x)
    decoded = fp8.decode_e4m3(code)
    clamped = max(-448.0, min(448.0, x))
    best = min(abs(float(e4m3_exact_value(c)) - clamped) for c in FINITE_CODES)
    assert abs(decoded - clamped) == pytest.approx(best, abs=0.0)


def test_compute_scale_all_zero_convention():
    assert fp8.compute_scale([0.0, 0.0]) == 1.0
    assert fp8.compute_scale([]) == 1.0


def test_compute_scale_amax_at_format_max():
    assert fp8.compute_scale([448.0, -224.0]) == 1.0


def test_compute_scale_single_value():
    assert fp8.compute_scale([1.0]) == pytest.approx(1.0 / 448.0, rel=0, abs=0)


def test_compute_scale_rejects_non_finite():
    with pytest.raises(fp8.NonFiniteInput):
        fp8.compute_scale([1.0, float("inf")])
    with pytest.raises(fp8.NonFiniteInput):
        fp8.compute_scale([float("nan")])


def test_encode_array_matches_scalar_encode(rng):
    values = rng.uniform(-500.0, 500.0, size=257)
    codes = fp8.encode_array(values)
    assert [int(c) for c in codes] == [fp8.encode_e4m3(float(v)) for v in values]
