"""Self-check suite: codec exhaustion, instruction fuzz, kernel-vs-oracle.

Each check returns ``{"passed": bool, "detail": str}``; ``run_all`` bundles
them for the CLI.  All randomness is seeded, so results are reproducible.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from fractions import Fraction

import numpy as np

from mxsim import formats
from mxsim.blocks import (
    BlockAxis,
    MxBlock,
    RefAccumulator,
    mxdp_reference,
    quantize_matrix,
)
from mxsim.formats import (
    BF16,
    E8M0,
    FP4_E2M1,
    FP8_E4M3,
    FP8_E5M2,
    FP32,
    decode_bits,
)
from mxsim.machine import VectorMachine, ins

NARROW_FORMATS = (FP8_E5M2, FP8_E4M3, FP4_E2M1, E8M0)

# legal vmxdotp width suffixes per FLEN: (suffix, accumulator format)
SUFFIXES = {
    64: (("w", FP32), ("q", BF16)),
    32: (("v", FP32), ("w", BF16)),
}


def _is_nan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)


# ---------------------------------------------------------------------------
# codec exhaustion
# ---------------------------------------------------------------------------


def check_codecs() -> dict:
    """Round-trip every narrow encoding and re-check nearest-value rounding.

    On failure the detail names the offending format and encoding.
    """
    for fmt in NARROW_FORMATS:
        table = []
        for bits in range(1 << fmt.width):
            v = formats.decode_bits(bits, fmt)
            if _is_nan(v):
                rt = formats.decode_bits(formats.encode_value(v, fmt), fmt)
                if not _is_nan(rt):
                    return {"passed": False,
                            "detail": f"{fmt.name} NaN round trip broke at 0x{bits:02x}"}
                continue
            back = formats.encode_value(v, fmt)
            if back != bits:
                return {"passed": False,
                        "detail": f"{fmt.name} 0x{bits:02x} round-trips to 0x{back:02x}"}
            if isinstance(v, float):
                continue  # zeros / infs
            table.append((v, bits))
        # nearest-value agreement on perturbed points around each encoding
        table.sort()
        values = [t[0] for t in table]
        for v, bits in table:
            for probe in (v * Fraction(255, 256), v * Fraction(257, 256), v):
                got = formats.encode_value(probe, fmt, saturate=True)
                want = _nearest(probe, values, table, fmt)
                if formats.decode_bits(got, fmt) != formats.decode_bits(want, fmt):
                    return {
                        "passed": False,
                        "detail": f"{fmt.name} rounding of {probe} near 0x{bits:02x}: "
                        f"got 0x{got:02x}, nearest is 0x{want:02x}",
                    }
    return {"passed": True, "detail": "784 encodings round-trip and round to nearest"}


def _nearest(value, values, table, fmt):
    i = bisect_left(values, value)
    if i == 0:
        return table[0][1]
    if i == len(table):
        return table[-1][1]
    lo_v, lo_b = table[i - 1]
    hi_v, hi_b = table[i]
    if value - lo_v < hi_v - value:
        return lo_b
    if hi_v - value < value - lo_v:
        return hi_b
    if fmt.mantissa_bits == 0:
        return lo_b if lo_b % 2 == 0 else hi_b
    mask = fmt.mant_mask
    return lo_b if (lo_b & mask) % 2 == 0 else hi_b


# ---------------------------------------------------------------------------
# vmxdotp instruction fuzz (driver shared with the test suite)
# ---------------------------------------------------------------------------


def pack_elements(element_bits, width: int, flen: int) -> bytes:
    """Pack k elements little-endian (element j at bits [j*w, (j+1)*w))."""
    chunk = 0
    for j, b in enumerate(element_bits):
        chunk |= (b & ((1 << width) - 1)) << (j * width)
    return chunk.to_bytes(flen // 8, "little")


def run_vmxdotp_case(machine: VectorMachine, suffix: str, scalar: bool, vl: int,
                     a_blocks, b_blocks, s3, s4, vd_init) -> list[int]:
    """Execute one vmxdotp with explicit operands; returns vd lanes (bits)."""
    ratio = {"v": 1, "w": 2, "q": 4}[suffix]
    sew = machine.flen // ratio
    fmt = machine.elem_fmt
    machine.vsetvli(vl, sew, 1)
    vd, vs1, vs2, vs3, vs4 = 0, 8, 16, 24, 25
    machine.write_elems(vd, sew, list(vd_init))
    machine.write_vreg(
        vs2, b"".join(pack_elements(b, fmt.width, machine.flen) for b in b_blocks)
    )
    machine.write_elems(vs4, 8, list(s4))
    if scalar:
        machine.f[1] = int.from_bytes(
            pack_elements(a_blocks[0], fmt.width, machine.flen), "little"
        )
        machine.f[2] = s3[0]
        instr = ins(f"vmxdotp.{suffix}f", vd, 1, vs2, 2, vs4)
    else:
        machine.write_vreg(
            vs1, b"".join(pack_elements(a, fmt.width, machine.flen) for a in a_blocks)
        )
        machine.write_elems(vs3, 8, list(s3))
        instr = ins(f"vmxdotp.{suffix}{suffix}", vd, vs1, vs2, vs3, vs4)
    machine.execute(instr)
    return machine.read_elems(vd, sew, vl)


def reference_lanes(fmt, acc_fmt, a_blocks, b_blocks, s3, s4, vd_init, vl,
                    scalar: bool) -> list[int]:
    """Expected vd lanes via mxdp_reference (exact, one terminal rounding)."""
    out = []
    for i in range(vl):
        a_bits = a_blocks[0] if scalar else a_blocks[i]
        sa = s3[0] if scalar else s3[i]
        blk_a = MxBlock(sa, tuple(a_bits), fmt)
        blk_b = MxBlock(s4[i], tuple(b_blocks[i]), fmt)
        acc = RefAccumulator(acc_fmt, decode_bits(vd_init[i], acc_fmt))
        out.append(mxdp_reference(blk_a, blk_b, acc).finalize_bits())
    return out


def bits_equal_mod_nan(got: int, want: int, acc_fmt) -> bool:
    g = decode_bits(got, acc_fmt)
    w = decode_bits(want, acc_fmt)
    if _is_nan(g) or _is_nan(w):
        return _is_nan(g) and _is_nan(w)
    return got == want


def random_case(rng: np.random.Generator, fmt, k: int, vl: int, scalar: bool):
    """Random operands for one instruction: element bits, scales."""
    top = 1 << fmt.width
    n_a = 1 if scalar else vl
    a_blocks = [tuple(int(x) for x in rng.integers(0, top, k)) for _ in range(n_a)]
    b_blocks = [tuple(int(x) for x in rng.integers(0, top, k)) for _ in range(vl)]
    s3 = [int(x) for x in rng.integers(90, 165, 1 if scalar else vl)]
    s4 = [int(x) for x in rng.integers(90, 165, vl)]
    return a_blocks, b_blocks, s3, s4


def check_vmxdotp(seed: int = 0, cases_per_family: int = 1500) -> dict:
    """Fuzz both instruction families against the block dot-product oracle."""
    rng = np.random.default_rng(seed)
    count = 0
    for scalar in (False, True):
        per_combo = -(-cases_per_family // 12)  # 3 formats x 2 flens x 2 suffixes
        for flen in (64, 32):
            for fmt in (FP8_E5M2, FP8_E4M3, FP4_E2M1):
                k = flen // fmt.width
                for suffix, acc_fmt in SUFFIXES[flen]:
                    machine = VectorMachine(flen=flen, elem_fmt=fmt, mem_size=4096)
                    for _ in range(per_combo):
                        vl = int(rng.integers(1, 5))
                        a, b, s3, s4 = random_case(rng, fmt, k, vl, scalar)
                        vd = [int(x) for x in rng.integers(0, 1 << acc_fmt.width, vl)]
                        got = run_vmxdotp_case(machine, suffix, scalar, vl, a, b, s3, s4, vd)
                        want = reference_lanes(fmt, acc_fmt, a, b, s3, s4, vd, vl, scalar)
                        count += 1
                        for lane, (g, w) in enumerate(zip(got, want)):
                            if not bits_equal_mod_nan(g, w, acc_fmt):
                                return {
                                    "passed": False,
                                    "detail": f"vmxdotp.{suffix}{'f' if scalar else suffix} "
                                    f"({fmt.name}, flen {flen}) lane {lane}: "
                                    f"got 0x{g:x}, oracle 0x{w:x}",
                                }
    return {"passed": True, "detail": f"{count} instruction cases bit-equal the oracle"}


# ---------------------------------------------------------------------------
# kernel-vs-oracle
# ---------------------------------------------------------------------------


def check_kernels(seed: int = 0, m: int = 8, n: int = 64, p: int = 48) -> dict:
    """Run every kernel kind on synthetic data and compare bit-exactly."""
    from mxsim.kernels import KernelConfig, run_kernel, to_bf16_array
    from mxsim.oracles import matmul_oracle

    rng = np.random.default_rng(seed)
    mag_a = rng.lognormal(0.0, 1.5, (m, n)) * rng.choice([-1.0, 1.0], (m, n))
    mag_b = rng.lognormal(0.0, 1.5, (n, p)) * rng.choice([-1.0, 1.0], (n, p))
    a = quantize_matrix(mag_a.astype(np.float32), FP8_E4M3, 32, BlockAxis.ROW)
    b = quantize_matrix(mag_b.astype(np.float32), FP8_E4M3, 32, BlockAxis.COL)
    plain_a = a.dequantize()
    plain_b = b.dequantize()
    for kind, acc in (
        ("rvv_baseline", FP32),
        ("rvv_baseline", BF16),
        ("spatz_baseline", FP32),
        ("spatz_baseline", BF16),
        ("vmxdotp", FP32),
        ("vmxdotp", BF16),
        ("plain_fp32", FP32),
        ("plain_bf16", BF16),
    ):
        cfg = KernelConfig(kind, m, n, p, acc_fmt=acc)
        if kind.startswith("plain"):
            ka = plain_a if acc is FP32 else to_bf16_array(plain_a)
            kb = plain_b if acc is FP32 else to_bf16_array(plain_b)
        else:
            ka, kb = a, b
        got, _, _ = run_kernel(cfg, ka, kb)
        want = matmul_oracle(kind, ka, kb, acc, hw_block=cfg.hw_block)
        if not np.array_equal(got.view(np.uint32), want.view(np.uint32)):
            bad = np.argwhere(got.view(np.uint32) != want.view(np.uint32))[0]
            return {
                "passed": False,
                "detail": f"{kind}/{acc.name} diverges from the oracle at "
                f"C[{bad[0]},{bad[1]}]",
            }
    return {"passed": True, "detail": "8 kernel/accumulator combinations bit-equal"}


def run_all(seed: int = 0, cases_per_family: int = 1500) -> dict:
    return {
        "codecs": check_codecs(),
        "vmxdotp": check_vmxdotp(seed, cases_per_family),
        "kernels": check_kernels(seed),
    }
