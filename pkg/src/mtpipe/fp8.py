"""8-bit float codec: sign(1) / exponent(4, bias 7) / mantissa(3), finite-only.

The format has no infinities. The two codes with exponent field 1111 and
mantissa 111 are NaN; the largest finite magnitude is 448 (exponent 1111,
mantissa 110). Exponent field 0 holds signed zero and subnormals with a step
of 2**-9.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ToolError

E4M3_MAX = 448.0
NAN_CODE = 0x7F

_EXP_BIAS = 7
_SUBNORMAL_STEP = 2.0**-9


class NonFiniteInput(ToolError):
    """An infinity or NaN reached an operation that requires finite values."""


def _decode_one(code: int) -> float:
    sign = -1.0 if code & 0x80 else 1.0
    exp = (code >> 3) & 0xF
    mant = code & 0x7
    if exp == 0xF and mant == 0x7:
        return math.nan
    if exp == 0:
        return sign * mant * _SUBNORMAL_STEP
    return sign * (1.0 + mant / 8.0) * 2.0 ** (exp - _EXP_BIAS)


DECODE_TABLE = np.array([_decode_one(c) for c in range(256)], dtype=np.float64)

# Non-negative finite values for codes 0x00..0x7E, strictly increasing.
_POS_GRID = DECODE_TABLE[:NAN_CODE].copy()


def decode_e4m3(code: int) -> float:
    """Decode one 8-bit code to its float value (NaN for the NaN codes)."""
    if not 0 <= code <= 255:
        raise ValueError(f"code out of byte range: {code}")
    return float(DECODE_TABLE[code])


def decode_array(codes: np.ndarray) -> np.ndarray:
    """Vectorized decode of a uint8 code array to float64."""
    return DECODE_TABLE[np.asarray(codes, dtype=np.uint8)]


def encode_array(values: np.ndarray) -> np.ndarray:
    """Round values onto the 8-bit value grid and return their uint8 codes.

    Rounding is to nearest with ties to even (even mantissa code wins a tie).
    Magnitudes above 448 saturate to +-448, NaN maps to the NaN code, and the
    sign of zero is preserved. Total over any float input.
    """
    v = np.asarray(values, dtype=np.float64)
    nan_mask = np.isnan(v)
    neg_mask = np.signbit(v) & ~nan_mask
    mag = np.abs(np.where(nan_mask, 0.0, v))
    mag = np.minimum(mag, E4M3_MAX)

    hi = np.searchsorted(_POS_GRID, mag, side="left")
    hi = np.minimum(hi, len(_POS_GRID) - 1)
    lo = np.maximum(hi - 1, 0)
    # 2*mag and grid[lo]+grid[hi] are exact in float64 (few-bit mantissas),
    # so the midpoint comparison and the tie test are exact.
    doubled = 2.0 * mag
    span = _POS_GRID[lo] + _POS_GRID[hi]
    take_hi = (doubled > span) | ((doubled == span) & (hi % 2 == 0))
    codes = np.where(take_hi, hi, lo).astype(np.uint8)
    codes = np.where(neg_mask, codes | 0x80, codes)
    codes = np.where(nan_mask, np.uint8(NAN_CODE), codes)
    return codes


def encode_e4m3(x: float) -> int:
    """Encode one float to its nearest 8-bit code (see encode_array)."""
    return int(encode_array(np.array([x]))[0])


def compute_scale(values: Sequence[float] | np.ndarray) -> float:
    """Dynamic per-tensor scale: max(|v|) / 448, or 1.0 for all-zero input.

    Raises NonFiniteInput if any value is NaN or infinite.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        raise NonFiniteInput("scale computation requires finite values")
    amax = float(np.max(np.abs(arr))) if arr.size else 0.0
    if amax == 0.0:
        return 1.0
    return amax / E4M3_MAX
