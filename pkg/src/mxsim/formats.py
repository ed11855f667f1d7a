"""Bit-exact scalar codecs for narrow floating-point formats.

Covers the element formats FP8 (E5M2, E4M3) and FP4 (E2M1), the E8M0
exponent-only block-scale format, and the wider FP16 / BF16 / FP32 formats
used for intermediate values and accumulators.

Decoded values are exact: finite nonzero values come back as
``fractions.Fraction``, while zeros (signed), infinities and NaN come back
as Python floats.  All rounding is round-to-nearest-even, computed with
exact rational arithmetic, so results are independent of the host FPU.

See FORMATS.md for per-encoding tables and byte layouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


class EncodingError(ValueError):
    """A value or bit pattern cannot be represented in the target format."""


@dataclass(frozen=True)
class ElementFormat:
    """A small floating-point storage format.

    ``has_sign`` is False only for E8M0.  ``single_nan`` marks formats like
    E4M3 where the sole NaN pattern is all-ones exponent + all-ones mantissa
    and the remaining top-exponent patterns are ordinary normal numbers.
    """

    name: str
    exponent_bits: int
    mantissa_bits: int
    bias: int
    has_sign: bool = True
    has_inf: bool = True
    has_nan: bool = True
    single_nan: bool = False

    @property
    def width(self) -> int:
        return (1 if self.has_sign else 0) + self.exponent_bits + self.mantissa_bits

    @property
    def emin(self) -> int:
        """Exponent of the smallest normal value."""
        return 1 - self.bias

    @property
    def emax(self) -> int:
        """Exponent of the largest normal value."""
        if self.has_inf:
            return (1 << self.exponent_bits) - 2 - self.bias
        return (1 << self.exponent_bits) - 1 - self.bias

    @property
    def exp_mask(self) -> int:
        return (1 << self.exponent_bits) - 1

    @property
    def mant_mask(self) -> int:
        return (1 << self.mantissa_bits) - 1

    @property
    def max_normal(self) -> Fraction:
        """Largest finite magnitude."""
        top_mant = self.mant_mask
        if self.single_nan:
            top_mant -= 1  # all-ones mantissa at top exponent is NaN
        return (1 + Fraction(top_mant, 1 << self.mantissa_bits)) * _pow2(self.emax)

    @property
    def max_normal_bits(self) -> int:
        top_mant = self.mant_mask
        if self.single_nan:
            top_mant -= 1
        if self.has_inf:
            exp_field = self.exp_mask - 1
        else:
            exp_field = self.exp_mask
        return (exp_field << self.mantissa_bits) | top_mant

    @property
    def inf_bits(self) -> int:
        if not self.has_inf:
            raise EncodingError(f"{self.name} has no infinity encoding")
        return self.exp_mask << self.mantissa_bits

    @property
    def nan_bits(self) -> int:
        """Canonical quiet-NaN pattern (sign 0)."""
        if not self.has_nan:
            raise EncodingError(f"{self.name} has no NaN encoding")
        if self.single_nan:
            return (self.exp_mask << self.mantissa_bits) | self.mant_mask
        # quiet NaN: top exponent, mantissa MSB set
        return (self.exp_mask << self.mantissa_bits) | (1 << (self.mantissa_bits - 1))


FP8_E5M2 = ElementFormat("fp8_e5m2", 5, 2, 15)
FP8_E4M3 = ElementFormat("fp8_e4m3", 4, 3, 7, has_inf=False, single_nan=True)
FP4_E2M1 = ElementFormat("fp4_e2m1", 2, 1, 1, has_inf=False, has_nan=False)
E8M0 = ElementFormat("e8m0", 8, 0, 127, has_sign=False, has_inf=False)
BF16 = ElementFormat("bf16", 8, 7, 127)
FP16 = ElementFormat("fp16", 5, 10, 15)
FP32 = ElementFormat("fp32", 8, 23, 127)

E8M0_NAN = 0xFF

FORMATS = {
    f.name: f for f in (FP8_E5M2, FP8_E4M3, FP4_E2M1, E8M0, BF16, FP16, FP32)
}

ELEMENT_FORMATS = (FP8_E5M2, FP8_E4M3, FP4_E2M1)
ACCUMULATOR_FORMATS = (FP32, BF16)


def _pow2(e: int) -> Fraction:
    if e >= 0:
        return Fraction(1 << e)
    return Fraction(1, 1 << -e)


def _floor_log2(x: Fraction) -> int:
    # exact: 2^e <= x < 2^(e+1) for positive x
    n, d = x.numerator, x.denominator
    e = n.bit_length() - d.bit_length()
    below = (n << -e) < d if e < 0 else n < (d << e)
    if below:
        e -= 1
    return e


def _rne_shift(n: int, shift: int) -> int:
    # RNE of n / 2^shift for n >= 0
    if shift <= 0:
        return n << -shift
    m = n >> shift
    rem = n & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    if rem > half or (rem == half and m & 1):
        m += 1
    return m


def decode_bits(bits: int, fmt: ElementFormat):
    """Decode a bit pattern to its exact value.

    Returns a Fraction for finite nonzero values; 0.0/-0.0, +/-inf and nan
    are returned as floats.
    """
    if not 0 <= bits < (1 << fmt.width):
        raise EncodingError(f"0x{bits:x} does not fit in {fmt.width}-bit {fmt.name}")

    if fmt is E8M0:
        if bits == E8M0_NAN:
            return math.nan
        return _pow2(bits - E8M0.bias)

    mant = bits & fmt.mant_mask
    exp = (bits >> fmt.mantissa_bits) & fmt.exp_mask
    sign = (bits >> (fmt.exponent_bits + fmt.mantissa_bits)) & 1 if fmt.has_sign else 0

    if exp == fmt.exp_mask:
        if fmt.has_inf:
            if mant == 0:
                return -math.inf if sign else math.inf
            return math.nan
        if fmt.single_nan and mant == fmt.mant_mask:
            return math.nan
        # no inf, remaining patterns are normal numbers (E4M3, E2M1)

    if exp == 0:
        if mant == 0:
            return -0.0 if sign else 0.0
        e2 = fmt.emin - fmt.mantissa_bits  # value = mant * 2^e2
    else:
        mant += 1 << fmt.mantissa_bits
        e2 = exp - fmt.bias - fmt.mantissa_bits
    value = Fraction(mant << e2) if e2 >= 0 else Fraction(mant, 1 << -e2)
    return -value if sign else value


def _as_sign_magnitude(value):
    """Split into (negative, magnitude Fraction or special float)."""
    if not isinstance(value, (int, float, Fraction)):
        value = float(value)  # numpy scalars and friends
    if isinstance(value, float):
        if math.isnan(value):
            return False, math.nan
        if math.isinf(value):
            return value < 0, math.inf
        neg = math.copysign(1.0, value) < 0
        return neg, Fraction(abs(value))
    mag = Fraction(value)
    return mag < 0, abs(mag)


def _encode_e8m0(value, saturate: bool) -> int:
    neg, mag = _as_sign_magnitude(value)
    if isinstance(mag, float) and math.isnan(mag):
        return E8M0_NAN
    if isinstance(mag, float) and math.isinf(mag):
        if saturate:
            return 254
        raise EncodingError("cannot encode infinity as e8m0")
    if neg or mag == 0:
        raise EncodingError("e8m0 encodes positive powers of two only")
    e = _floor_log2(mag)
    lo, hi = _pow2(e), _pow2(e + 1)
    if mag - lo > hi - mag:
        e += 1
    elif mag - lo == hi - mag:
        # tie halfway between two powers: round to the even byte
        if (e + E8M0.bias) & 1:
            e += 1
    byte = e + E8M0.bias
    return min(max(byte, 0), 254)


def encode_value(value, fmt: ElementFormat, saturate: bool = False) -> int:
    """Encode a value (int, float or Fraction) with round-to-nearest-even.

    Overflow of finite values goes to infinity for formats that have one and
    clamps to the largest normal otherwise; with ``saturate=True`` it always
    clamps.  Infinity inputs are an error for formats without an infinity
    unless ``saturate`` is set; NaN into a NaN-free format is always an error.
    """
    if fmt is E8M0:
        return _encode_e8m0(value, saturate)

    # split into sign and exact magnitude num/den without building Fractions
    neg = False
    if isinstance(value, Fraction):
        num, den = value.numerator, value.denominator
    elif isinstance(value, int):
        num, den = value, 1
    else:
        value = float(value)
        if math.isnan(value):
            if not fmt.has_nan:
                raise EncodingError(f"cannot encode NaN as {fmt.name}")
            return fmt.nan_bits
        neg = math.copysign(1.0, value) < 0
        sign_bit = (1 << (fmt.exponent_bits + fmt.mantissa_bits)) if (neg and fmt.has_sign) else 0
        if math.isinf(value):
            if fmt.has_inf:
                return sign_bit | fmt.inf_bits
            if saturate:
                return sign_bit | fmt.max_normal_bits
            raise EncodingError(f"cannot encode infinity as {fmt.name}")
        num, den = abs(value).as_integer_ratio()
        return _encode_magnitude(num, den, sign_bit, fmt, saturate)
    if num < 0:
        neg = True
        num = -num
    sign_bit = (1 << (fmt.exponent_bits + fmt.mantissa_bits)) if (neg and fmt.has_sign) else 0
    return _encode_magnitude(num, den, sign_bit, fmt, saturate)


def _encode_magnitude(num: int, den: int, sign_bit: int, fmt: ElementFormat,
                      saturate: bool) -> int:
    """RNE-encode the exact magnitude num/den (num >= 0, den > 0)."""
    if num == 0:
        return sign_bit

    # floor(log2(num/den))
    e = num.bit_length() - den.bit_length()
    below = (num << -e) < den if e < 0 else num < (den << e)
    if below:
        e -= 1
    if e < fmt.emin:
        e = fmt.emin

    # scaled significand: m = RNE(num / (den * 2^q)), q = e - mantissa_bits
    q = e - fmt.mantissa_bits
    if den & (den - 1) == 0:
        m = _rne_shift(num, q + den.bit_length() - 1)
    else:
        divisor_num, divisor_den = (den << q, 1) if q >= 0 else (den, 1 << -q)
        m, r = divmod(num * divisor_den, divisor_num)
        r2 = 2 * r
        if r2 > divisor_num or (r2 == divisor_num and m & 1):
            m += 1
    if m == 0:
        return sign_bit  # underflow to zero
    if m >= (2 << fmt.mantissa_bits):
        m >>= 1  # rounding carried into the next binade
        e += 1

    if m < (1 << fmt.mantissa_bits):
        return sign_bit | m  # subnormal (exp field 0)

    exp_field = e + fmt.bias
    mant_field = m - (1 << fmt.mantissa_bits)
    overflow = e > fmt.emax or (
        fmt.single_nan and e == fmt.emax and mant_field == fmt.mant_mask
    )
    if overflow:
        if fmt.has_inf and not saturate:
            return sign_bit | fmt.inf_bits
        return sign_bit | fmt.max_normal_bits
    return sign_bit | (exp_field << fmt.mantissa_bits) | mant_field


def convert_bits(bits: int, src: ElementFormat, dst: ElementFormat) -> int:
    """Re-encode a value in another format (RNE, IEEE-style overflow).

    NaN converts to the destination's canonical quiet NaN.
    """
    value = decode_bits(bits, src)
    if isinstance(value, float) and math.isnan(value):
        if not dst.has_nan:
            raise EncodingError(f"cannot convert NaN to {dst.name}")
        return dst.nan_bits
    return encode_value(value, dst)


def e8m0_to_fp32_bits(scale_byte: int) -> int:
    """Expand an E8M0 scale byte to FP32 bits via the integer shift trick.

    The FP32 pattern of 2^(b-127) is simply ``b << 23``: removing the E8M0
    bias and re-applying the FP32 bias cancel out.  Byte 0 would need an FP32
    subnormal and byte 255 is the E8M0 NaN; both are rejected.
    """
    if not 0 <= scale_byte <= 0xFF:
        raise EncodingError(f"scale byte 0x{scale_byte:x} out of range")
    if scale_byte == E8M0_NAN:
        raise EncodingError("scale byte 0xff is the e8m0 NaN")
    if scale_byte == 0:
        raise EncodingError("scale 2^-127 is not a normal fp32 value")
    return scale_byte << 23


@dataclass(frozen=True)
class EncodedScalar:
    """A bit pattern together with the format that interprets it."""

    bits: int
    fmt: ElementFormat

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.fmt.width):
            raise EncodingError(
                f"0x{self.bits:x} does not fit in {self.fmt.width}-bit {self.fmt.name}"
            )

    @property
    def value(self):
        return decode_bits(self.bits, self.fmt)


def decode(x: EncodedScalar):
    """Exact value of an encoded scalar."""
    return decode_bits(x.bits, x.fmt)


def encode(value, fmt: ElementFormat, saturate: bool = False) -> EncodedScalar:
    """Encode a value, returning an EncodedScalar."""
    return EncodedScalar(encode_value(value, fmt, saturate), fmt)


def convert(x: EncodedScalar, dst: ElementFormat) -> EncodedScalar:
    """Convert an encoded scalar to another format."""
    return EncodedScalar(convert_bits(x.bits, x.fmt, dst), dst)


def to_float(bits: int, fmt: ElementFormat) -> float:
    """Decoded value as a host float (rounds E8M0 extremes; fine for display)."""
    v = decode_bits(bits, fmt)
    return v if isinstance(v, float) else float(v)
