"""Microscaling (MX) block-format arithmetic, RVV simulation and cycle modeling."""

from mxsim.formats import (
    BF16,
    E8M0,
    FP4_E2M1,
    FP8_E4M3,
    FP8_E5M2,
    FP16,
    FP32,
    ElementFormat,
    EncodedScalar,
    EncodingError,
    convert,
    decode,
    encode,
)

__all__ = [
    "BF16",
    "E8M0",
    "FP4_E2M1",
    "FP8_E4M3",
    "FP8_E5M2",
    "FP16",
    "FP32",
    "ElementFormat",
    "EncodedScalar",
    "EncodingError",
    "convert",
    "decode",
    "encode",
]

__version__ = "0.1.0"
