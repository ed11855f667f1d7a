"""Brute-force reference oracles shared by the test suite.

These deliberately avoid the library's encode/rounding paths: the nearest
encoding is found by scanning the full table of decoded values (bisect over
the sorted table), with ties broken toward the even mantissa.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from fractions import Fraction

from mxsim.formats import ElementFormat, decode_bits


def finite_encodings(fmt: ElementFormat) -> list[tuple[Fraction, int]]:
    """All (value, bits) pairs with finite decoded value, sorted by value.

    Signed zeros decode to Fraction(0); the positive-zero encoding is kept.
    """
    table = []
    for bits in range(1 << fmt.width):
        v = decode_bits(bits, fmt)
        if isinstance(v, float):
            if math.isnan(v) or math.isinf(v):
                continue
            if math.copysign(1.0, v) < 0:
                continue  # drop -0, keep +0
            v = Fraction(0)
        table.append((v, bits))
    table.sort(key=lambda t: t[0])
    return table


class NearestOracle:
    """Nearest finite encoding by exhaustive-table lookup, ties to even mantissa."""

    def __init__(self, fmt: ElementFormat):
        self.fmt = fmt
        self.table = finite_encodings(fmt)
        self.values = [t[0] for t in self.table]

    def __call__(self, value) -> int:
        value = Fraction(value)
        i = bisect_left(self.values, value)
        if i == 0:
            return self.table[0][1]
        if i == len(self.table):
            return self.table[-1][1]
        lo_v, lo_b = self.table[i - 1]
        hi_v, hi_b = self.table[i]
        d_lo = value - lo_v
        d_hi = hi_v - value
        if d_lo < d_hi:
            return lo_b
        if d_hi < d_lo:
            return hi_b
        if self.fmt.mantissa_bits == 0:
            # exponent-only format: tie to the even byte
            return lo_b if lo_b % 2 == 0 else hi_b
        mant_mask = (1 << self.fmt.mantissa_bits) - 1
        return lo_b if (lo_b & mant_mask) % 2 == 0 else hi_b
