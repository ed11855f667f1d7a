"""MX blocks, block quantization and exact reference dot products.

An MX block is k narrow elements sharing one E8M0 scale; its decoded value i
is scale * element_i.  The block dot product here is the golden model the
simulator instructions are checked against: products and the k-term sum are
computed exactly (rational arithmetic) and rounding happens only when a
result is materialized in the accumulator format.

Exact zero results canonicalize to +0; the scale is a positive power of two,
so a zero sum of products can never carry a negative sign through scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np

from mxsim.formats import (
    E8M0_NAN,
    FP32,
    ElementFormat,
    EncodingError,
    decode_bits,
    encode_value,
)


class BlockAxis(Enum):
    """Direction blocks run in a matrix.

    ROW: each row is split into blocks of k consecutive elements (scale shape
    rows x cols/k) -- the layout for the left operand of a matmul.
    COL: blocks run down each column (scale shape rows/k x cols) -- the
    layout for the right operand.
    """

    ROW = "row"
    COL = "col"


@lru_cache(maxsize=None)
def _element_values(fmt: ElementFormat) -> tuple:
    return tuple(decode_bits(b, fmt) for b in range(1 << fmt.width))


def _is_nan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)


def _is_inf(v) -> bool:
    return isinstance(v, float) and math.isinf(v)


def exact_add(a, b):
    """Sum of two exact values (Fraction or special float)."""
    if type(a) is not float and type(b) is not float:
        return a + b
    if _is_nan(a) or _is_nan(b):
        return math.nan
    if _is_inf(a) or _is_inf(b):
        if _is_inf(a) and _is_inf(b) and (a > 0) != (b > 0):
            return math.nan
        return a if _is_inf(a) else b
    a = Fraction(0) if isinstance(a, float) else a  # signed zero -> 0
    b = Fraction(0) if isinstance(b, float) else b
    return a + b


def exact_mul(a, b):
    """Product of two exact values (Fraction or special float)."""
    if type(a) is not float and type(b) is not float:
        return a * b
    if _is_nan(a) or _is_nan(b):
        return math.nan
    if _is_inf(a) or _is_inf(b):
        fin = b if _is_inf(a) else a
        if fin == 0:
            return math.nan
        neg = (a < 0) != (b < 0)
        return -math.inf if neg else math.inf
    a = Fraction(0) if isinstance(a, float) else a
    b = Fraction(0) if isinstance(b, float) else b
    return a * b


def _pow2(e: int) -> Fraction:
    return Fraction(1 << e) if e >= 0 else Fraction(1, 1 << -e)


@dataclass(frozen=True)
class MxBlock:
    """k elements in one narrow format plus a shared E8M0 scale byte."""

    scale: int
    element_bits: tuple
    fmt: ElementFormat

    def __post_init__(self):
        if not 0 <= self.scale <= 0xFF:
            raise EncodingError(f"scale byte {self.scale} out of range")
        if len(self.element_bits) < 1:
            raise ValueError("block needs at least one element")
        top = 1 << self.fmt.width
        if any(not 0 <= b < top for b in self.element_bits):
            raise EncodingError(f"element bits out of range for {self.fmt.name}")

    @property
    def k(self) -> int:
        return len(self.element_bits)

    def element_values(self) -> list:
        lut = _element_values(self.fmt)
        return [lut[b] for b in self.element_bits]


def ocp_shared_exponent(values, fmt: ElementFormat) -> int:
    """OCP-style shared scale: floor(log2 max|v|) - emax, biased and clamped.

    ``values`` are finite floats; all-zero input gets the neutral byte 127.
    """
    amax = max(abs(float(v)) for v in values)
    if amax == 0.0:
        return 127
    m, e = math.frexp(amax)  # amax = m * 2^e, 0.5 <= m < 1
    return min(max((e - 1) - fmt.emax + 127, 0), 254)


def quantize_block(values, fmt: ElementFormat, *, nan_policy: str = "strict",
                   scale_rule=ocp_shared_exponent) -> MxBlock:
    """Quantize k floats into an MX block.

    The shared scale comes from ``scale_rule`` over the finite inputs;
    elements are the inputs divided by the scale, rounded RNE with
    saturation to the largest normal.  Non-finite inputs raise under the
    default strict policy; permissive mode maps NaN to the format's NaN
    (largest normal if it has none) and infinities to +/-inf or the signed
    largest normal, excluding them from the scale computation.
    """
    values = [float(v) for v in values]
    if len(values) < 1:
        raise ValueError("block needs at least one element")
    finite = [v for v in values if math.isfinite(v)]
    if len(finite) != len(values):
        if nan_policy != "permissive":
            raise ValueError("non-finite input to quantize_block in strict mode")
    scale = scale_rule(finite, fmt) if finite else 127
    inv = _pow2(127 - scale)
    bits = []
    for v in values:
        if math.isnan(v):
            bits.append(fmt.nan_bits if fmt.has_nan else fmt.max_normal_bits)
        elif math.isinf(v):
            sign = (1 << (fmt.width - 1)) if v < 0 else 0
            bits.append(sign | (fmt.inf_bits if fmt.has_inf else fmt.max_normal_bits))
        else:
            bits.append(encode_value(Fraction(v) * inv, fmt, saturate=True))
    return MxBlock(scale, tuple(bits), fmt)


def dequantize_block(block: MxBlock) -> np.ndarray:
    """Scaled element values as float32 (exact product, one FP32 rounding)."""
    if block.scale == E8M0_NAN:
        raise EncodingError("cannot dequantize a block with NaN scale")
    s = _pow2(block.scale - 127)
    out = np.empty(block.k, dtype=np.float32)
    for i, v in enumerate(block.element_values()):
        scaled = exact_mul(s, v)
        out[i] = np.uint32(encode_value(scaled, FP32)).view(np.float32)
    return out


@dataclass
class RefAccumulator:
    """Exact running value rounded once to the target format on finalize."""

    target_format: ElementFormat
    value: object = field(default_factory=lambda: Fraction(0))

    def finalize_bits(self) -> int:
        v = Fraction(0) if isinstance(self.value, float) and self.value == 0 else self.value
        return encode_value(v, self.target_format)

    def finalize(self) -> float:
        bits = self.finalize_bits()
        v = decode_bits(bits, self.target_format)
        return v if isinstance(v, float) else float(v)


def mxdp_reference(a: MxBlock, b: MxBlock, acc: RefAccumulator) -> RefAccumulator:
    """Scaled block dot product accumulated exactly into ``acc``.

    Adds 2^(sA+sB-254) * sum_i A_i*B_i to the accumulator with no
    intermediate rounding; ``acc.finalize()`` performs the single rounding.
    This is the golden model for the vmxdotp instructions.
    """
    if a.k != b.k:
        raise ValueError(f"block size mismatch: {a.k} vs {b.k}")
    if a.fmt is not b.fmt:
        raise ValueError(f"element format mismatch: {a.fmt.name} vs {b.fmt.name}")
    if a.scale == E8M0_NAN or b.scale == E8M0_NAN:
        raise EncodingError("NaN scale in mxdp_reference")

    total = Fraction(0)
    for x, y in zip(a.element_values(), b.element_values()):
        total = exact_add(total, exact_mul(x, y))
    contrib = exact_mul(_pow2(a.scale + b.scale - 254), total)
    return RefAccumulator(acc.target_format, exact_add(acc.value, contrib))


@dataclass(frozen=True)
class MxMatrix:
    """A matrix of narrow elements blocked along one axis with E8M0 scales."""

    rows: int
    cols: int
    k: int
    block_axis: BlockAxis
    fmt: ElementFormat
    elements: np.ndarray  # uint8 (rows, cols); fp4 stores one nibble per entry
    scales: np.ndarray  # uint8; (rows, cols/k) for ROW, (rows/k, cols) for COL

    def __post_init__(self):
        n = self.cols if self.block_axis is BlockAxis.ROW else self.rows
        if n % self.k:
            raise ValueError(f"blocked dimension {n} not divisible by k={self.k}")
        want = (
            (self.rows, self.cols // self.k)
            if self.block_axis is BlockAxis.ROW
            else (self.rows // self.k, self.cols)
        )
        if self.elements.shape != (self.rows, self.cols) or self.scales.shape != want:
            raise ValueError("element/scale array shape mismatch")

    @property
    def n_blocks(self) -> int:
        n = self.cols if self.block_axis is BlockAxis.ROW else self.rows
        return n // self.k

    def row_block(self, m: int, b: int) -> MxBlock:
        if self.block_axis is not BlockAxis.ROW:
            raise ValueError("matrix is not row-blocked")
        sl = self.elements[m, b * self.k : (b + 1) * self.k]
        return MxBlock(int(self.scales[m, b]), tuple(int(x) for x in sl), self.fmt)

    def col_block(self, p: int, b: int) -> MxBlock:
        if self.block_axis is not BlockAxis.COL:
            raise ValueError("matrix is not column-blocked")
        sl = self.elements[b * self.k : (b + 1) * self.k, p]
        return MxBlock(int(self.scales[b, p]), tuple(int(x) for x in sl), self.fmt)

    def dequantize(self) -> np.ndarray:
        """Full matrix as float32."""
        out = np.empty((self.rows, self.cols), dtype=np.float32)
        if self.block_axis is BlockAxis.ROW:
            for m in range(self.rows):
                for b in range(self.n_blocks):
                    blk = self.row_block(m, b)
                    out[m, b * self.k : (b + 1) * self.k] = dequantize_block(blk)
        else:
            for p in range(self.cols):
                for b in range(self.n_blocks):
                    blk = self.col_block(p, b)
                    out[b * self.k : (b + 1) * self.k, p] = dequantize_block(blk)
        return out


def quantize_matrix(array, fmt: ElementFormat, k: int, axis: BlockAxis,
                    *, nan_policy: str = "strict") -> MxMatrix:
    """Quantize a float matrix into MX blocks along the given axis."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    rows, cols = arr.shape
    n = cols if axis is BlockAxis.ROW else rows
    if n % k:
        raise ValueError(f"blocked dimension {n} not divisible by k={k}")
    elements = np.zeros((rows, cols), dtype=np.uint8)
    if axis is BlockAxis.ROW:
        scales = np.zeros((rows, cols // k), dtype=np.uint8)
        for m in range(rows):
            for b in range(cols // k):
                blk = quantize_block(arr[m, b * k : (b + 1) * k], fmt, nan_policy=nan_policy)
                scales[m, b] = blk.scale
                elements[m, b * k : (b + 1) * k] = blk.element_bits
    else:
        scales = np.zeros((rows // k, cols), dtype=np.uint8)
        for p in range(cols):
            for b in range(rows // k):
                blk = quantize_block(arr[b * k : (b + 1) * k, p], fmt, nan_policy=nan_policy)
                scales[b, p] = blk.scale
                elements[b * k : (b + 1) * k, p] = blk.element_bits
    return MxMatrix(rows, cols, k, axis, fmt, elements, scales)


def _round_to(value, fmt: ElementFormat):
    """One rounding into fmt, result as exact value (Fraction/float)."""
    if isinstance(value, float) and value == 0:
        value = Fraction(0)
    return decode_bits(encode_value(value, fmt), fmt)


def mx_matmul_reference(a: MxMatrix, b: MxMatrix, acc_fmt: ElementFormat = FP32,
                        mode: str = "exact", hw_block: int | None = None) -> np.ndarray:
    """Blocked-matrix product against exact MX dot-product semantics.

    ``exact`` mode sums every contribution exactly and rounds once per
    output element.  ``hardware`` mode rounds once per ``hw_block``-wide
    accumulation step (the fused dot-product issue granularity), reusing
    each enclosing block's scales across its sub-blocks; ``hw_block``
    defaults to the matrices' own block size and must divide it.
    """
    if a.block_axis is not BlockAxis.ROW or b.block_axis is not BlockAxis.COL:
        raise ValueError("matmul expects a row-blocked A and a column-blocked B")
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {b.rows}")
    if a.k != b.k:
        raise ValueError(f"block sizes differ: {a.k} vs {b.k}")
    if a.fmt is not b.fmt:
        raise ValueError("element formats differ")
    if mode not in ("exact", "hardware"):
        raise ValueError(f"unknown mode {mode!r}")
    hw = a.k if hw_block is None else hw_block
    if a.k % hw:
        raise ValueError(f"hw_block {hw} does not divide block size {a.k}")

    lut = _element_values(a.fmt)
    out = np.empty((a.rows, b.cols), dtype=np.float32)
    for m in range(a.rows):
        for p in range(b.cols):
            acc = Fraction(0)
            for blk in range(a.n_blocks):
                sa = int(a.scales[m, blk])
                sb = int(b.scales[blk, p])
                if sa == E8M0_NAN or sb == E8M0_NAN:
                    raise EncodingError("NaN scale in mx_matmul_reference")
                scale = _pow2(sa + sb - 254)
                base = blk * a.k
                for sub in range(0, a.k, hw):
                    total = Fraction(0)
                    for j in range(base + sub, base + sub + hw):
                        x = lut[a.elements[m, j]]
                        y = lut[b.elements[j, p]]
                        total = exact_add(total, exact_mul(x, y))
                    acc = exact_add(acc, exact_mul(scale, total))
                    if mode == "hardware":
                        acc = _round_to(acc, acc_fmt)
            out[m, p] = RefAccumulator(acc_fmt, acc).finalize()
    return out
