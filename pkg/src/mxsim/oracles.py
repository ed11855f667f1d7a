"""Rounding-faithful matmul references for each kernel family.

The simulator executes instruction programs against register files and
memory; these oracles compute the same results straight from the matrix
data, reproducing each kernel's rounding structure with exact rational
arithmetic.  Any divergence exposes a bug in the kernel builder, the
machine, or the data plumbing.

Rounding structures:

* emulated (rvv_baseline): one rounding per element FMA into the per-block
  accumulator, then one per block fold (accumulator * expanded scale).
* emulated pairs (spatz_baseline): one rounding per two-element dot step.
* fused (vmxdotp): one rounding per hardware block; handled by
  ``blocks.mx_matmul_reference(mode="hardware")``.
* plain: one rounding per element FMA.

The emulated oracles also replicate the kernels' integer scale expansion at
the bit level ((combined biased exponent) << mantissa_bits, wrapped at the
vector element width), so they stay faithful even for out-of-range scales.
"""

from __future__ import annotations

import numpy as np

from mxsim.blocks import (
    MxMatrix,
    _element_values,
    exact_add,
    exact_mul,
    mx_matmul_reference,
)
from mxsim.formats import FP32, ElementFormat, decode_bits, encode_value


def _round(value, fmt: ElementFormat):
    if isinstance(value, float) and value == 0:
        return 0.0  # exact zero canonicalizes to +0
    return decode_bits(encode_value(value, fmt), fmt)


def fma_round(a, b, c, fmt: ElementFormat):
    """a*b + c with one rounding; exact operands in, exact value out."""
    return _round(exact_add(exact_mul(a, b), c), fmt)


def dot2_round(a0, b0, a1, b1, c, fmt: ElementFormat):
    """a0*b0 + a1*b1 + c with one terminal rounding."""
    s = exact_add(exact_mul(a0, b0), exact_mul(a1, b1))
    return _round(exact_add(s, c), fmt)


def _expanded_scale(sa: int, sb: int, acc_fmt: ElementFormat):
    """Value of the kernels' integer scale expansion for one block.

    FP32 path: 32-bit (sb + sa - 127) << 23; BF16 path: 16-bit << 7.
    """
    combined = sb + sa - 127
    if acc_fmt is FP32:
        bits = (combined << 23) & 0xFFFFFFFF
    else:
        bits = ((combined & 0xFFFF) << 7) & 0xFFFF
    return decode_bits(bits, acc_fmt)


def _finalize(value, acc_fmt: ElementFormat) -> float:
    v = _round(value, acc_fmt)
    return v if isinstance(v, float) else float(v)


def emulated_matmul_reference(a: MxMatrix, b: MxMatrix, acc_fmt: ElementFormat,
                              pairwise: bool = False) -> np.ndarray:
    """Baseline-emulation result: per-FMA rounding plus bit-level scaling.

    ``pairwise`` selects the two-term dot-product step used by the
    spatz_baseline kernel; otherwise every element FMA rounds individually.
    """
    lut = _element_values(a.fmt)
    k = a.k
    out = np.empty((a.rows, b.cols), dtype=np.float32)
    for m in range(a.rows):
        for p in range(b.cols):
            acc = 0.0
            for blk in range(a.n_blocks):
                scale = _expanded_scale(int(a.scales[m, blk]), int(b.scales[blk, p]), acc_fmt)
                base = blk * k
                u = 0.0
                if pairwise:
                    for j in range(base, base + k, 2):
                        u = dot2_round(
                            lut[a.elements[m, j]], lut[b.elements[j, p]],
                            lut[a.elements[m, j + 1]], lut[b.elements[j + 1, p]],
                            u, acc_fmt,
                        )
                else:
                    for j in range(base, base + k):
                        u = fma_round(lut[a.elements[m, j]], lut[b.elements[j, p]], u, acc_fmt)
                acc = fma_round(u, scale, acc, acc_fmt)
            out[m, p] = _finalize(acc, acc_fmt)
    return out


def plain_matmul_reference(a: np.ndarray, b: np.ndarray,
                           acc_fmt: ElementFormat) -> np.ndarray:
    """Wide-format matmul rounded once per FMA step, in kernel order."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    m_dim, n_dim = a.shape
    p_dim = b.shape[1]
    out = np.empty((m_dim, p_dim), dtype=np.float32)
    from fractions import Fraction

    a_vals = [[Fraction(float(x)) for x in row] for row in a]
    b_vals = [[Fraction(float(x)) for x in row] for row in b]
    for m in range(m_dim):
        for p in range(p_dim):
            acc = 0.0
            for n in range(n_dim):
                acc = fma_round(a_vals[m][n], b_vals[n][p], acc, acc_fmt)
            out[m, p] = _finalize(acc, acc_fmt)
    return out


def matmul_oracle(kind: str, a, b, acc_fmt: ElementFormat,
                  hw_block: int | None = None) -> np.ndarray:
    """Reference output for a kernel kind (same operands run_kernel takes)."""
    if kind == "rvv_baseline":
        return emulated_matmul_reference(a, b, acc_fmt, pairwise=False)
    if kind == "spatz_baseline":
        return emulated_matmul_reference(a, b, acc_fmt, pairwise=True)
    if kind == "vmxdotp":
        return mx_matmul_reference(a, b, acc_fmt, mode="hardware", hw_block=hw_block)
    if kind in ("plain_fp32", "plain_bf16"):
        return plain_matmul_reference(a, b, acc_fmt)
    raise ValueError(f"unknown kernel kind {kind!r}")
