"""Codec tests: exhaustive round trips, brute-force RNE checks, conversions."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brute import NearestOracle
from mxsim.formats import (
    BF16,
    E8M0,
    E8M0_NAN,
    FP4_E2M1,
    FP8_E4M3,
    FP8_E5M2,
    FP16,
    FP32,
    EncodedScalar,
    EncodingError,
    convert_bits,
    decode_bits,
    e8m0_to_fp32_bits,
    encode_value,
)

NARROW = [FP8_E5M2, FP8_E4M3, FP4_E2M1, E8M0]
ALL_FORMATS = NARROW + [FP16, BF16, FP32]


def is_nan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)


# ---------------------------------------------------------------------------
# decode: frozen values
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "fmt,bits,expected",
    [
        (E8M0, 127, Fraction(1)),
        (E8M0, 130, Fraction(8)),
        (E8M0, 0, Fraction(1, 1 << 127)),
        (FP4_E2M1, 0x0, 0.0),
        (FP4_E2M1, 0x7, Fraction(6)),
        (FP4_E2M1, 0x1, Fraction(1, 2)),  # min subnormal
        (FP4_E2M1, 0x9, Fraction(-1, 2)),
        (FP8_E4M3, 0x38, Fraction(1)),
        (FP8_E4M3, 0x7E, Fraction(448)),  # max normal
        (FP8_E4M3, 0x01, Fraction(1, 512)),  # min subnormal 2^-9
        (FP8_E5M2, 0x3C, Fraction(1)),
        (FP8_E5M2, 0x7B, Fraction(57344)),  # max normal
        (FP8_E5M2, 0x01, Fraction(1, 1 << 16)),  # min subnormal 2^-16
        (FP16, 0x3C00, Fraction(1)),
        (BF16, 0x3F80, Fraction(1)),
        (FP32, 0x3F800000, Fraction(1)),
    ],
)
def test_decode_known_values(fmt, bits, expected):
    assert decode_bits(bits, fmt) == expected


def test_decode_specials():
    assert decode_bits(0x7C, FP8_E5M2) == math.inf
    assert decode_bits(0xFC, FP8_E5M2) == -math.inf
    assert is_nan(decode_bits(0x7E, FP8_E5M2))
    assert is_nan(decode_bits(0x7F, FP8_E4M3))
    assert is_nan(decode_bits(0xFF, FP8_E4M3))
    assert is_nan(decode_bits(E8M0_NAN, E8M0))
    neg_zero = decode_bits(0x80, FP8_E4M3)
    assert neg_zero == 0.0 and math.copysign(1.0, neg_zero) < 0


def test_decode_rejects_wide_bits():
    with pytest.raises(EncodingError):
        decode_bits(0x100, FP8_E4M3)
    with pytest.raises(EncodingError):
        decode_bits(0x10, FP4_E2M1)
    with pytest.raises(EncodingError):
        EncodedScalar(0x100, FP8_E5M2)


# ---------------------------------------------------------------------------
# encode: frozen values and policies
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "value,fmt,expected",
    [
        (Fraction(1), FP8_E4M3, 0x38),
        (0.0, FP8_E4M3, 0x00),
        (0.0, FP4_E2M1, 0x0),
        (Fraction(2) ** 200, FP8_E5M2, 0x7C),  # overflow to +inf
        (Fraction(1), FP16, 0x3C00),
        (Fraction(6), FP4_E2M1, 0x7),
        (Fraction(7), FP4_E2M1, 0x7),  # clamp: no inf in the format
        (Fraction(500), FP8_E4M3, 0x7E),  # 480 pattern is NaN; clamp to 448
        (Fraction(1), E8M0, 127),
        (Fraction(8), E8M0, 130),
    ],
)
def test_encode_known_values(value, fmt, expected):
    assert encode_value(value, fmt) == expected


def test_encode_negative_zero_keeps_sign():
    assert encode_value(-0.0, FP8_E4M3) == 0x80
    assert encode_value(-0.0, FP4_E2M1) == 0x8
    assert encode_value(0.0, FP8_E5M2) == 0x00


def test_encode_special_policies():
    with pytest.raises(EncodingError):
        encode_value(math.inf, FP8_E4M3)
    assert encode_value(math.inf, FP8_E4M3, saturate=True) == 0x7E
    assert encode_value(-math.inf, FP8_E4M3, saturate=True) == 0xFE
    assert encode_value(math.inf, FP8_E5M2) == 0x7C
    assert encode_value(2.0**30, FP8_E5M2, saturate=True) == 0x7B
    with pytest.raises(EncodingError):
        encode_value(math.nan, FP4_E2M1)
    assert encode_value(math.nan, FP8_E4M3) == 0x7F
    assert encode_value(math.nan, FP8_E5M2) == 0x7E
    with pytest.raises(EncodingError):
        encode_value(Fraction(-1), E8M0)
    with pytest.raises(EncodingError):
        encode_value(0.0, E8M0)


def test_encode_rne_tie_to_even():
    # 2.5 lies halfway between 2 (mantissa 0, even) and 3 (mantissa 1)
    assert encode_value(Fraction(5, 2), FP4_E2M1) == 0x4
    # 3.5 halfway between 3 and 4 (mantissa 0 at next binade)
    assert encode_value(Fraction(7, 2), FP4_E2M1) == 0x6
    # e8m0 tie: 1.5 between 2^0 (byte 127, odd) and 2^1 (byte 128, even)
    assert encode_value(Fraction(3, 2), E8M0) == 128
    # 3 is halfway between 2 and 4: tie -> even byte 128
    assert encode_value(Fraction(3), E8M0) == 128
    assert encode_value(Fraction(2, 3), E8M0) == 126  # nearer 0.5 than 1.0


def test_encode_e8m0_clamps_to_range():
    assert encode_value(Fraction(2) ** 300, E8M0) == 254
    assert encode_value(Fraction(1, 2**300), E8M0) == 0


# ---------------------------------------------------------------------------
# exhaustive round trip + brute-force nearest agreement (acceptance #1 core)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("fmt", NARROW, ids=lambda f: f.name)
def test_exhaustive_roundtrip(fmt):
    for bits in range(1 << fmt.width):
        v = decode_bits(bits, fmt)
        if is_nan(v):
            assert is_nan(decode_bits(encode_value(v, fmt), fmt))
        else:
            assert encode_value(v, fmt) == bits, f"bits 0x{bits:02x}"


@pytest.mark.parametrize("fmt", NARROW, ids=lambda f: f.name)
def test_exhaustive_matches_nearest_oracle(fmt):
    oracle = NearestOracle(fmt)
    for bits in range(1 << fmt.width):
        v = decode_bits(bits, fmt)
        if isinstance(v, float):
            continue  # zeros and specials have their own tests
        got = encode_value(v, fmt)
        want = oracle(v)
        assert decode_bits(got, fmt) == decode_bits(want, fmt), f"bits 0x{bits:02x}"


@pytest.mark.parametrize("fmt", NARROW + [FP16, BF16], ids=lambda f: f.name)
def test_monotonic_same_sign(fmt):
    prev = None
    sign_bits = fmt.width - 1 if fmt.has_sign else fmt.width
    for bits in range(1 << sign_bits):  # positive half (or all of e8m0)
        v = decode_bits(bits, fmt)
        if is_nan(v) or (isinstance(v, float) and math.isinf(v)):
            continue
        v = Fraction(v) if isinstance(v, float) else v
        if prev is not None:
            assert v > prev, f"bits 0x{bits:x} not increasing"
        prev = v


def test_monotonic_fp32_sampled():
    import random

    rng = random.Random(7)
    for _ in range(20_000):
        a = rng.randrange(0x7F800000)  # positive finite encodings
        b = rng.randrange(0x7F800000)
        if a == b:
            continue
        lo, hi = sorted((a, b))
        assert decode_bits(lo, FP32) < decode_bits(hi, FP32)


# ---------------------------------------------------------------------------
# RNE vs brute force on random values
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("fmt", NARROW + [FP16, BF16], ids=lambda f: f.name)
def test_rne_matches_brute_force_random(fmt):
    import random

    rng = random.Random(0xC0DEC + fmt.width)
    oracle = NearestOracle(fmt)
    span_lo = fmt.emin - fmt.mantissa_bits - 3
    span_hi = fmt.emax + 2
    for _ in range(100_000):
        e = rng.uniform(span_lo, span_hi)
        v = rng.uniform(1.0, 2.0) * 2.0**e
        if fmt.has_sign and rng.random() < 0.5:
            v = -v
        got = encode_value(v, fmt, saturate=True)
        want = oracle(v)
        assert decode_bits(got, fmt) == decode_bits(want, fmt), f"value {v!r}"


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------


def test_convert_known():
    assert convert_bits(0x38, FP8_E4M3, FP16) == 0x3C00
    assert convert_bits(0x7C, FP8_E5M2, FP16) == 0x7C00  # +inf
    assert is_nan(decode_bits(convert_bits(0x7F, FP8_E4M3, FP16), FP16))


@pytest.mark.parametrize("src", [FP8_E5M2, FP8_E4M3, FP4_E2M1], ids=lambda f: f.name)
@pytest.mark.parametrize("dst", [FP16, BF16, FP32], ids=lambda f: f.name)
def test_widening_conversion_is_exact(src, dst):
    for bits in range(1 << src.width):
        v = decode_bits(bits, src)
        out = convert_bits(bits, src, dst)
        w = decode_bits(out, dst)
        if is_nan(v):
            assert is_nan(w)
        else:
            assert w == v, f"bits 0x{bits:02x}"
            if isinstance(v, float) and v == 0.0:
                assert math.copysign(1.0, w) == math.copysign(1.0, v)


def test_e4m3_roundtrips_through_fp16_bitexact():
    for bits in range(256):
        through = convert_bits(bits, FP8_E4M3, FP16)
        back = convert_bits(through, FP16, FP8_E4M3)
        if is_nan(decode_bits(bits, FP8_E4M3)):
            assert is_nan(decode_bits(back, FP8_E4M3))
        else:
            assert back == bits


# ---------------------------------------------------------------------------
# e8m0 -> fp32 integer expansion
# ---------------------------------------------------------------------------


def test_e8m0_to_fp32_bits():
    assert e8m0_to_fp32_bits(127) == 0x3F800000
    assert e8m0_to_fp32_bits(130) == 0x41000000  # 8.0
    assert e8m0_to_fp32_bits(1) == 0x00800000  # smallest normal
    with pytest.raises(EncodingError):
        e8m0_to_fp32_bits(0xFF)
    with pytest.raises(EncodingError):
        e8m0_to_fp32_bits(0)


def test_e8m0_expansion_agrees_with_encode():
    for byte in range(1, 255):
        want = encode_value(decode_bits(byte, E8M0), FP32)
        assert e8m0_to_fp32_bits(byte) == want


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@given(st.sampled_from(ALL_FORMATS), st.data())
@settings(max_examples=300, deadline=None)
def test_roundtrip_property(fmt, data):
    bits = data.draw(st.integers(0, (1 << fmt.width) - 1))
    v = decode_bits(bits, fmt)
    if is_nan(v):
        assert is_nan(decode_bits(encode_value(v, fmt), fmt))
    else:
        assert encode_value(v, fmt) == bits


@given(
    st.floats(allow_nan=False, allow_infinity=False, min_value=-1e5, max_value=1e5),
    st.sampled_from([FP8_E5M2, FP8_E4M3, FP4_E2M1, FP16, BF16]),
)
@settings(max_examples=300, deadline=None)
def test_encode_is_idempotent(value, fmt):
    first = encode_value(value, fmt, saturate=True)
    again = encode_value(decode_bits(first, fmt), fmt, saturate=True)
    assert again == first
