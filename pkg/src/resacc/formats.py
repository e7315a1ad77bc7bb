"""Bit-exact numeric formats and single-bit flips.

Values live in one of three storage formats (FP32, FP16, INT8). A fault is a
single toggled bit in the stored pattern; flips are performed on the raw
integer view so that IEEE-754 / two's-complement semantics fall out for free.
"""

from __future__ import annotations

import enum

import numpy as np


class NumericFormat(enum.Enum):
    FP32 = "FP32"
    FP16 = "FP16"
    INT8 = "INT8"

    @property
    def width(self) -> int:
        return _WIDTH[self]

    @property
    def dtype(self) -> np.dtype:
        return _DTYPE[self]

    @property
    def bits_dtype(self) -> np.dtype:
        """Unsigned integer dtype of the same width, used as the bit view."""
        return _BITS[self]


_WIDTH = {NumericFormat.FP32: 32, NumericFormat.FP16: 16, NumericFormat.INT8: 8}
_DTYPE = {
    NumericFormat.FP32: np.dtype(np.float32),
    NumericFormat.FP16: np.dtype(np.float16),
    NumericFormat.INT8: np.dtype(np.int8),
}
_BITS = {
    NumericFormat.FP32: np.dtype(np.uint32),
    NumericFormat.FP16: np.dtype(np.uint16),
    NumericFormat.INT8: np.dtype(np.uint8),
}

# (first exponent bit, number of exponent bits) for the float formats.
_EXP_FIELD = {NumericFormat.FP32: (23, 8), NumericFormat.FP16: (10, 5)}


def flip_bit(value, bit_pos: int, fmt: NumericFormat):
    """Toggle one bit of the stored pattern of a scalar, returning a scalar.

    The result may be Inf/NaN for float formats; it propagates through
    subsequent arithmetic under the usual IEEE rules.
    """
    if not 0 <= bit_pos < fmt.width:
        raise ValueError(f"bit_pos {bit_pos} out of range for {fmt.value}")
    v = np.asarray(value, dtype=fmt.dtype)
    bits = v.view(fmt.bits_dtype) ^ fmt.bits_dtype.type(1 << bit_pos)
    return bits.view(fmt.dtype)[()]


def flip_bit_array(values: np.ndarray, bit_pos: int, fmt: NumericFormat) -> np.ndarray:
    """Vectorised :func:`flip_bit` over an array (used by tests and tools)."""
    if not 0 <= bit_pos < fmt.width:
        raise ValueError(f"bit_pos {bit_pos} out of range for {fmt.value}")
    v = np.ascontiguousarray(values, dtype=fmt.dtype)
    bits = v.view(fmt.bits_dtype) ^ fmt.bits_dtype.type(1 << bit_pos)
    return bits.view(fmt.dtype)


def bit_field(fmt: NumericFormat, bit_pos: int) -> str:
    """Classify a bit position as 'sign', 'exponent' or 'fraction'.

    For INT8 the sign bit is reported as 'sign' and everything else as
    'fraction' (there is no exponent field).
    """
    if not 0 <= bit_pos < fmt.width:
        raise ValueError(f"bit_pos {bit_pos} out of range for {fmt.value}")
    if bit_pos == fmt.width - 1:
        return "sign"
    if fmt in _EXP_FIELD:
        lo, n = _EXP_FIELD[fmt]
        if lo <= bit_pos < lo + n:
            return "exponent"
    return "fraction"


def default_bp_drop(fmt: NumericFormat) -> dict[int, float]:
    """Default per-bit assumed accuracy drops for the bit-position sampling
    heuristic: 15 points for the most significant exponent bit, 8 points for
    the next four exponent bits, zero elsewhere.

    INT8 has no exponent; the sign bit and the next four magnitude bits play
    the analogous roles.
    """
    if fmt in _EXP_FIELD:
        lo, n = _EXP_FIELD[fmt]
        msb = lo + n - 1
        drops = {msb: 0.15}
        for b in range(msb - 1, max(lo - 1, msb - 5), -1):
            drops[b] = 0.08
        return drops
    # INT8
    drops = {7: 0.15}
    for b in range(6, 2, -1):
        drops[b] = 0.08
    return drops
