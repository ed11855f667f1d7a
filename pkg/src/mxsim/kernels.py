"""Matmul program builders for the vector machine.

Four kernel families, all outer-product shaped (output columns live in
vector lanes, rows of the output tile in separate accumulator groups):

* ``rvv_baseline`` -- software MX emulation: per element, expand FP8 to
  16 bit and widening-FMA into per-block accumulators; per block, expand the
  E8M0 scales with integer instructions (zero-extend, add the unbiased
  A-scale, shift into FP exponent position) and fold the block into the
  global accumulators with a vector-vector FMA.
* ``spatz_baseline`` -- same structure, but the inner loop consumes element
  PAIRS with the expanding two-term dot product (``vfwdotp``), halving FMA
  issues; with BF16 accumulation it runs directly on FP8 with no conversions.
  B is stored with row pairs interleaved so that the two reduction partners
  of each lane are adjacent (plain row-major cannot feed the pair reduction
  without segment loads, which this machine does not model).
* ``vmxdotp`` -- one MX dot-product-accumulate instruction per hardware
  block: packed A elements and the A scale ride in scalar FP registers,
  B is column-major so a strided FLEN-bit load gathers one block per lane,
  and scales are loaded once per software block and reused.
* ``plain_fp32`` / ``plain_bf16`` -- ordinary matmul on wide data for
  baseline comparisons.

Programs are fully unrolled with resolved addresses.  Every instruction in a
steady-state loop body carries an ``iter_group`` tag for the cycle model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mxsim.blocks import BlockAxis, MxMatrix
from mxsim.formats import (
    BF16,
    FP4_E2M1,
    FP8_E4M3,
    FP8_E5M2,
    FP16,
    FP32,
    ElementFormat,
    encode_value,
)
from mxsim.machine import (
    FP16FMT_CODES,
    MXFMT_CODES,
    Instruction,
    VectorMachine,
    run_program,
)
from mxsim.mxt import pack_nibbles, unpack_nibbles

KERNEL_KINDS = ("rvv_baseline", "spatz_baseline", "vmxdotp", "plain_fp32", "plain_bf16")

MX_KINDS = ("rvv_baseline", "spatz_baseline", "vmxdotp")

_MXFMT_BY_FORMAT = {v: c for c, v in MXFMT_CODES.items()}
_FP16FMT_BY_FORMAT = {v: c for c, v in FP16FMT_CODES.items()}


class KernelConfigError(ValueError):
    """Invalid kernel configuration."""


@dataclass(frozen=True)
class KernelConfig:
    """Shape, format and tiling choices for one matmul program."""

    kind: str
    m: int
    n: int
    p: int
    elem_fmt: ElementFormat = FP8_E4M3
    acc_fmt: ElementFormat = FP32
    k_sw: int = 32  # software (quantization) block size
    m_tile: int | None = None
    p_tile: int | None = None
    flen: int = 64
    vlen: int = 512
    unroll: int = 1  # metadata only; does not change emitted semantics

    def validated(self) -> "KernelConfig":
        if self.kind not in KERNEL_KINDS:
            raise KernelConfigError(f"unknown kernel kind {self.kind!r}")
        if min(self.m, self.n, self.p) < 1:
            raise KernelConfigError("matrix dimensions must be positive")
        if self.acc_fmt not in (FP32, BF16):
            raise KernelConfigError("accumulator must be fp32 or bf16")
        if self.flen not in (32, 64):
            raise KernelConfigError("flen must be 32 or 64")
        if self.kind in MX_KINDS:
            if self.n % self.k_sw:
                raise KernelConfigError(
                    f"inner dimension {self.n} not divisible by block size {self.k_sw}"
                )
            if self.kind in ("rvv_baseline", "spatz_baseline"):
                if self.elem_fmt not in (FP8_E5M2, FP8_E4M3):
                    raise KernelConfigError(f"{self.kind} supports FP8 elements only")
            if self.elem_fmt not in (FP8_E5M2, FP8_E4M3, FP4_E2M1):
                raise KernelConfigError("element format must be fp8/fp4")
            if self.kind == "vmxdotp":
                k_hw = self.flen // self.elem_fmt.width
                if self.k_sw % k_hw:
                    raise KernelConfigError(
                        f"software block {self.k_sw} not a multiple of hardware block {k_hw}"
                    )
            if self.kind == "spatz_baseline" and self.k_sw % 2:
                raise KernelConfigError("spatz_baseline needs an even block size")
        elif (self.acc_fmt is FP32) != (self.kind == "plain_fp32"):
            raise KernelConfigError("plain kernel accumulator must match its kind")
        return self

    @property
    def hw_block(self) -> int:
        return self.flen // self.elem_fmt.width

    @property
    def flops(self) -> int:
        return 2 * self.m * self.n * self.p


# per-kind accumulator vtype: (sew, lmul)
def _acc_vtype(cfg: KernelConfig) -> tuple[int, int]:
    if cfg.kind == "vmxdotp":
        return (32, 2) if cfg.acc_fmt is FP32 else (16, 2)
    if cfg.kind in ("plain_fp32", "rvv_baseline", "spatz_baseline") and cfg.acc_fmt is FP32:
        return (32, 4)
    return (16, 2)


def _default_m_tile(kind: str) -> int:
    return {"rvv_baseline": 2, "spatz_baseline": 2, "vmxdotp": 8}.get(kind, 4)


@dataclass
class MemoryPlan:
    """Where each operand region lives in machine memory."""

    regions: dict = field(default_factory=dict)  # name -> (addr, size)
    b_layout: str = "row"  # row | pair | col
    total: int = 0

    def add(self, name: str, size: int, align: int = 64) -> int:
        addr = (self.total + align - 1) // align * align
        self.regions[name] = (addr, size)
        self.total = addr + size
        return addr

    def addr(self, name: str) -> int:
        return self.regions[name][0]


@dataclass
class KernelProgram:
    """Unrolled instruction sequence plus layout and workload metadata."""

    cfg: KernelConfig
    instructions: list
    plan: MemoryPlan
    register_map: dict = field(default_factory=dict)
    n_iter_groups: int = 0

    @property
    def flops(self) -> int:
        return self.cfg.flops


class _Emitter:
    def __init__(self):
        self.out = []
        self.group = -1
        self.next_group = 0

    def begin_group(self):
        self.group = self.next_group
        self.next_group += 1

    def end_group(self):
        self.group = -1

    def emit(self, mnemonic, *args):
        self.out.append(Instruction(mnemonic, tuple(args), self.group))


def _elem_bytes(fmt: ElementFormat, count: int) -> int:
    return count * fmt.width // 8


def _mx_plan(cfg: KernelConfig, b_layout: str) -> MemoryPlan:
    plan = MemoryPlan(b_layout=b_layout)
    n_block = cfg.n // cfg.k_sw
    acc_b = cfg.acc_fmt.width // 8
    plan.add("A", _elem_bytes(cfg.elem_fmt, cfg.m * cfg.n))
    plan.add("As", cfg.m * n_block)
    plan.add("B", _elem_bytes(cfg.elem_fmt, cfg.n * cfg.p))
    plan.add("Bs", n_block * cfg.p)
    plan.add("C", cfg.m * cfg.p * acc_b)
    return plan


def _plain_plan(cfg: KernelConfig) -> MemoryPlan:
    plan = MemoryPlan(b_layout="row")
    w = cfg.acc_fmt.width // 8
    plan.add("A", cfg.m * cfg.n * w)
    plan.add("B", cfg.n * cfg.p * w)
    plan.add("C", cfg.m * cfg.p * w)
    return plan


def _tiles(total: int, tile: int):
    for start in range(0, total, tile):
        yield start, min(tile, total - start)


def _emit_format_csrs(e: _Emitter, cfg: KernelConfig, fp16_fmt: ElementFormat):
    if cfg.kind in MX_KINDS:
        e.emit("csrw.mxfmt", _MXFMT_BY_FORMAT[cfg.elem_fmt])
    e.emit("csrw.fp16fmt", _FP16FMT_BY_FORMAT[fp16_fmt])


# ---------------------------------------------------------------------------
# baseline emulation kernels
# ---------------------------------------------------------------------------


def build_rvv_baseline(cfg: KernelConfig) -> KernelProgram:
    """Software-emulated MX matmul (per-element converts, integer scaling)."""
    cfg = cfg.validated()
    if cfg.kind != "rvv_baseline":
        raise KernelConfigError("config kind mismatch")
    fp32 = cfg.acc_fmt is FP32
    sew, lmul = _acc_vtype(cfg)
    p_tile = cfg.p_tile or cfg.vlen * lmul // sew
    m_tile = cfg.m_tile or _default_m_tile(cfg.kind)
    if m_tile > 2:
        raise KernelConfigError("rvv_baseline register allocation supports m_tile <= 2")
    if p_tile > cfg.vlen * lmul // sew:
        raise KernelConfigError(f"p_tile {p_tile} exceeds VLMAX at SEW={sew} LMUL={lmul}")
    plan = _mx_plan(cfg, "row")
    n_block = cfg.n // cfg.k_sw
    acc_b = cfg.acc_fmt.width // 8
    astride = lmul  # registers per accumulator group (also the scale-group EMUL)

    regs = {
        "acc": [0 + astride * r for r in range(m_tile)],
        "bacc": [8 + astride * r for r in range(m_tile)],
        "scale": [16 + astride * r for r in range(m_tile)],
        "b16": 24,
        "b8": 28,
        "bs8": 29,
        "bs16": 30,
    }
    e = _Emitter()
    _emit_format_csrs(e, cfg, BF16 if not fp32 else FP16)
    for p0, pw in _tiles(cfg.p, p_tile):
        for m0, mh in _tiles(cfg.m, m_tile):
            e.emit("vsetvli", pw, sew, lmul)
            for r in range(mh):
                e.emit("vmv.v.i", regs["acc"][r], 0)
            for blk in range(n_block):
                for r in range(mh):
                    e.emit("vmv.v.i", regs["bacc"][r], 0)
                for elem in range(cfg.k_sw):
                    e.begin_group()
                    idx = blk * cfg.k_sw + elem
                    for r in range(mh):
                        e.emit("flb", 1, plan.addr("A") + (m0 + r) * cfg.n + idx)
                        e.emit("fcvt.h.b" if fp32 else "fcvt.bf.b", 2 + r, 1)
                    e.emit("vsetvli", pw, 8, 1)
                    e.emit("vle8.v", regs["b8"], plan.addr("B") + idx * cfg.p + p0)
                    e.emit("vfwcvt.f.f.v", regs["b16"], regs["b8"])
                    e.emit("vsetvli", pw, 16, 2)
                    for r in range(mh):
                        if fp32:
                            e.emit("vfwmacc.vf", regs["bacc"][r], 2 + r, regs["b16"])
                        else:
                            e.emit("vfmacc.vf", regs["bacc"][r], 2 + r, regs["b16"])
                    e.end_group()
                # block scales: integer expansion then vector-vector FMA
                e.begin_group()
                for r in range(mh):
                    e.emit("lbu", 5, plan.addr("As") + (m0 + r) * n_block + blk)
                    e.emit("addi", 6 + r, 5, -127)
                e.emit("vsetvli", pw, 8, 1)
                e.emit("vle8.v", regs["bs8"], plan.addr("Bs") + blk * cfg.p + p0)
                e.emit("vwcvtu.x.x.v", regs["bs16"], regs["bs8"])
                e.emit("vsetvli", pw, 16, 2)
                for r in range(mh):
                    if fp32:
                        e.emit("vwadd.vx", regs["scale"][r], regs["bs16"], 6 + r)
                    else:
                        e.emit("vadd.vx", regs["scale"][r], regs["bs16"], 6 + r)
                if fp32:
                    e.emit("vsetvli", pw, 32, 4)
                for r in range(mh):
                    e.emit("vsll.vi", regs["scale"][r], regs["scale"][r], 23 if fp32 else 7)
                for r in range(mh):
                    e.emit("vfmacc.vv", regs["acc"][r], regs["bacc"][r], regs["scale"][r])
                e.end_group()
            for r in range(mh):
                e.emit(
                    "vse32.v" if fp32 else "vse16.v",
                    regs["acc"][r],
                    plan.addr("C") + ((m0 + r) * cfg.p + p0) * acc_b,
                )
    prog = KernelProgram(cfg, e.out, plan, regs, e.next_group)
    return prog


def build_spatz_baseline(cfg: KernelConfig) -> KernelProgram:
    """Emulated MX matmul using the expanding two-term dot product.

    FP32 accumulation converts FP8 pairs to FP16 and uses ``vfwdotp``; BF16
    accumulation feeds FP8 straight into ``vfwdotp`` with no conversions.
    """
    cfg = cfg.validated()
    if cfg.kind != "spatz_baseline":
        raise KernelConfigError("config kind mismatch")
    fp32 = cfg.acc_fmt is FP32
    sew, lmul = _acc_vtype(cfg)
    p_tile = cfg.p_tile or cfg.vlen * lmul // sew
    m_tile = cfg.m_tile or _default_m_tile(cfg.kind)
    if m_tile > 2:
        raise KernelConfigError("spatz_baseline register allocation supports m_tile <= 2")
    if p_tile > cfg.vlen * lmul // sew:
        raise KernelConfigError(f"p_tile {p_tile} exceeds VLMAX at SEW={sew} LMUL={lmul}")
    plan = _mx_plan(cfg, "pair")
    n_block = cfg.n // cfg.k_sw
    acc_b = cfg.acc_fmt.width // 8
    astride = lmul

    regs = {
        "acc": [0 + astride * r for r in range(m_tile)],
        "bacc": [8 + astride * r for r in range(m_tile)],
        "scale": [16 + astride * r for r in range(m_tile)],
        "b16": 24,
        "bpair8": 28,
        "bs8": 28,  # reused between inner loop and scale expansion
        "bs16": 30,
    }
    e = _Emitter()
    _emit_format_csrs(e, cfg, FP16 if fp32 else BF16)
    for p0, pw in _tiles(cfg.p, p_tile):
        for m0, mh in _tiles(cfg.m, m_tile):
            e.emit("vsetvli", pw, sew, lmul)
            for r in range(mh):
                e.emit("vmv.v.i", regs["acc"][r], 0)
            for blk in range(n_block):
                for r in range(mh):
                    e.emit("vmv.v.i", regs["bacc"][r], 0)
                for pair in range(cfg.k_sw // 2):
                    e.begin_group()
                    elem = blk * cfg.k_sw + 2 * pair
                    for r in range(mh):
                        e.emit("flh", 1 if fp32 else 2 + r,
                               plan.addr("A") + (m0 + r) * cfg.n + elem)
                        if fp32:
                            e.emit("fcvt.ph.pb", 2 + r, 1)
                    e.emit("vsetvli", 2 * pw, 8, 2)
                    e.emit(
                        "vle8.v",
                        regs["bpair8"],
                        plan.addr("B") + (elem // 2) * 2 * cfg.p + 2 * p0,
                    )
                    if fp32:
                        e.emit("vfwcvt.f.f.v", regs["b16"], regs["bpair8"])
                        e.emit("vsetvli", 2 * pw, 16, 4)
                        src = regs["b16"]
                    else:
                        src = regs["bpair8"]
                    for r in range(mh):
                        e.emit("vfwdotp.vf", regs["bacc"][r], 2 + r, src)
                    e.end_group()
                e.begin_group()
                for r in range(mh):
                    e.emit("lbu", 5, plan.addr("As") + (m0 + r) * n_block + blk)
                    e.emit("addi", 6 + r, 5, -127)
                e.emit("vsetvli", pw, 8, 1)
                e.emit("vle8.v", regs["bs8"], plan.addr("Bs") + blk * cfg.p + p0)
                e.emit("vwcvtu.x.x.v", regs["bs16"], regs["bs8"])
                e.emit("vsetvli", pw, 16, 2)
                for r in range(mh):
                    if fp32:
                        e.emit("vwadd.vx", regs["scale"][r], regs["bs16"], 6 + r)
                    else:
                        e.emit("vadd.vx", regs["scale"][r], regs["bs16"], 6 + r)
                if fp32:
                    e.emit("vsetvli", pw, 32, 4)
                for r in range(mh):
                    e.emit("vsll.vi", regs["scale"][r], regs["scale"][r], 23 if fp32 else 7)
                for r in range(mh):
                    e.emit("vfmacc.vv", regs["acc"][r], regs["bacc"][r], regs["scale"][r])
                e.end_group()
            for r in range(mh):
                e.emit(
                    "vse32.v" if fp32 else "vse16.v",
                    regs["acc"][r],
                    plan.addr("C") + ((m0 + r) * cfg.p + p0) * acc_b,
                )
    return KernelProgram(cfg, e.out, plan, regs, e.next_group)


# ---------------------------------------------------------------------------
# accelerated kernel
# ---------------------------------------------------------------------------


def build_vmxdotp(cfg: KernelConfig) -> KernelProgram:
    """MX matmul around the fused MX dot-product-accumulate instruction."""
    cfg = cfg.validated()
    if cfg.kind != "vmxdotp":
        raise KernelConfigError("config kind mismatch")
    fp32 = cfg.acc_fmt is FP32
    sew, lmul = _acc_vtype(cfg)
    p_tile = cfg.p_tile or cfg.vlen * lmul // sew
    m_tile = cfg.m_tile or _default_m_tile(cfg.kind)
    if m_tile > 8:
        raise KernelConfigError("vmxdotp register allocation supports m_tile <= 8")
    if p_tile > cfg.vlen * lmul // sew:
        raise KernelConfigError(f"p_tile {p_tile} exceeds VLMAX at SEW={sew} LMUL={lmul}")
    plan = _mx_plan(cfg, "col")
    k_hw = cfg.hw_block
    n_block = cfg.n // cfg.k_sw
    acc_b = cfg.acc_fmt.width // 8
    # w = half-width (FP32 acc), q = quarter-width (BF16) at FLEN=64;
    # v / w at FLEN=32
    ratio = cfg.flen // sew
    mnem = {1: "vmxdotp.vf", 2: "vmxdotp.wf", 4: "vmxdotp.qf"}[ratio]
    col_bytes = _elem_bytes(cfg.elem_fmt, cfg.n)  # one B column, column-major
    a_row_bytes = _elem_bytes(cfg.elem_fmt, cfg.n)
    stride_load = "vlse64.v" if cfg.flen == 64 else "vlse32.v"

    regs = {
        "acc": [2 * r for r in range(m_tile)],  # v0..v15
        "belem": 16,
        "bscale": 24,
    }
    e = _Emitter()
    _emit_format_csrs(e, cfg, BF16 if not fp32 else FP16)
    for p0, pw in _tiles(cfg.p, p_tile):
        for m0, mh in _tiles(cfg.m, m_tile):
            e.emit("vsetvli", pw, sew, lmul)
            for r in range(mh):
                e.emit("vmv.v.i", regs["acc"][r], 0)
            for n in range(0, cfg.n, k_hw):
                e.begin_group()
                for r in range(mh):
                    e.emit(
                        "fld" if cfg.flen == 64 else "flw",
                        2 + r,
                        plan.addr("A") + (m0 + r) * a_row_bytes + _elem_bytes(cfg.elem_fmt, n),
                    )
                e.emit(
                    stride_load,
                    regs["belem"],
                    plan.addr("B") + p0 * col_bytes + _elem_bytes(cfg.elem_fmt, n),
                    col_bytes,
                )
                if n % cfg.k_sw == 0:
                    blk = n // cfg.k_sw
                    for r in range(mh):
                        e.emit("flb", 12 + r, plan.addr("As") + (m0 + r) * n_block + blk)
                    e.emit("vle8.v", regs["bscale"], plan.addr("Bs") + blk * cfg.p + p0)
                for r in range(mh):
                    e.emit(mnem, regs["acc"][r], 2 + r, regs["belem"], 12 + r,
                           regs["bscale"])
                e.end_group()
            for r in range(mh):
                e.emit(
                    "vse32.v" if fp32 else "vse16.v",
                    regs["acc"][r],
                    plan.addr("C") + ((m0 + r) * cfg.p + p0) * acc_b,
                )
    return KernelProgram(cfg, e.out, plan, regs, e.next_group)


# ---------------------------------------------------------------------------
# plain wide-format kernels
# ---------------------------------------------------------------------------


def build_plain(cfg: KernelConfig) -> KernelProgram:
    """Standard FP32/BF16 matmul (outer product, vector-scalar FMA)."""
    cfg = cfg.validated()
    if cfg.kind not in ("plain_fp32", "plain_bf16"):
        raise KernelConfigError("config kind mismatch")
    fp32 = cfg.kind == "plain_fp32"
    sew, lmul = _acc_vtype(cfg)
    p_tile = cfg.p_tile or cfg.vlen * lmul // sew
    m_tile = cfg.m_tile or _default_m_tile(cfg.kind)
    if m_tile > 4:
        raise KernelConfigError("plain kernel register allocation supports m_tile <= 4")
    if p_tile > cfg.vlen * lmul // sew:
        raise KernelConfigError(f"p_tile {p_tile} exceeds VLMAX at SEW={sew} LMUL={lmul}")
    plan = _plain_plan(cfg)
    w = cfg.acc_fmt.width // 8
    regs = {"acc": [lmul * r for r in range(m_tile)], "b": 16}
    e = _Emitter()
    _emit_format_csrs(e, cfg, BF16 if not fp32 else FP16)
    for p0, pw in _tiles(cfg.p, p_tile):
        for m0, mh in _tiles(cfg.m, m_tile):
            e.emit("vsetvli", pw, sew, lmul)
            for r in range(mh):
                e.emit("vmv.v.i", regs["acc"][r], 0)
            for n in range(cfg.n):
                e.begin_group()
                e.emit(
                    "vle32.v" if fp32 else "vle16.v",
                    regs["b"],
                    plan.addr("B") + (n * cfg.p + p0) * w,
                )
                for r in range(mh):
                    e.emit("flw" if fp32 else "flh", 2 + r,
                           plan.addr("A") + ((m0 + r) * cfg.n + n) * w)
                    e.emit("vfmacc.vf", regs["acc"][r], 2 + r, regs["b"])
                e.end_group()
            for r in range(mh):
                e.emit(
                    "vse32.v" if fp32 else "vse16.v",
                    regs["acc"][r],
                    plan.addr("C") + ((m0 + r) * cfg.p + p0) * w,
                )
    return KernelProgram(cfg, e.out, plan, regs, e.next_group)


_BUILDERS = {
    "rvv_baseline": build_rvv_baseline,
    "spatz_baseline": build_spatz_baseline,
    "vmxdotp": build_vmxdotp,
    "plain_fp32": build_plain,
    "plain_bf16": build_plain,
}


def build_kernel(cfg: KernelConfig) -> KernelProgram:
    cfg = cfg.validated()
    return _BUILDERS[cfg.kind](cfg)


# ---------------------------------------------------------------------------
# data placement and execution
# ---------------------------------------------------------------------------


def _mx_element_bytes(matrix: MxMatrix, layout: str) -> bytes:
    el = matrix.elements
    if layout == "row":
        flat = el
    elif layout == "col":
        flat = el.T
    elif layout == "pair":
        # interleave row pairs: [r0c0 r1c0 r0c1 r1c1 ...]
        flat = el.reshape(el.shape[0] // 2, 2, el.shape[1]).transpose(0, 2, 1)
    else:
        raise KernelConfigError(f"unknown B layout {layout!r}")
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    if matrix.fmt is FP4_E2M1:
        return pack_nibbles(flat)
    return flat.tobytes()


def _wide_bits(arr: np.ndarray, fmt: ElementFormat) -> bytes:
    if fmt is FP32:
        return np.ascontiguousarray(arr, dtype=np.float32).tobytes()
    out = np.empty(arr.size, dtype=np.uint16)
    flat = np.asarray(arr, dtype=np.float32).ravel()
    for i, v in enumerate(flat):
        out[i] = encode_value(float(v), BF16)
    return out.tobytes()


def to_bf16_array(arr: np.ndarray) -> np.ndarray:
    """Round float32 values to BF16, returned as float32."""
    flat = np.asarray(arr, dtype=np.float32).ravel()
    bits = np.array([encode_value(float(v), BF16) for v in flat], dtype=np.uint32)
    return (bits << 16).view(np.float32).reshape(np.asarray(arr).shape)


def load_mx_inputs(machine: VectorMachine, program: KernelProgram,
                   a: MxMatrix, b: MxMatrix) -> None:
    cfg = program.cfg
    if a.block_axis is not BlockAxis.ROW or b.block_axis is not BlockAxis.COL:
        raise KernelConfigError(
            "matmul needs a row-blocked A and a column-blocked B "
            "(quantize B with the col axis)"
        )
    if (a.rows, a.cols, b.rows, b.cols) != (cfg.m, cfg.n, cfg.n, cfg.p):
        raise KernelConfigError("matrix shapes do not match the kernel config")
    if a.k != cfg.k_sw or b.k != cfg.k_sw:
        raise KernelConfigError(
            f"matrix block size {a.k}/{b.k} does not match config k_sw={cfg.k_sw}"
        )
    if a.fmt is not cfg.elem_fmt or b.fmt is not cfg.elem_fmt:
        raise KernelConfigError("matrix element format does not match the config")
    machine.write_mem(program.plan.addr("A"), _mx_element_bytes(a, "row"))
    machine.write_mem(program.plan.addr("As"), a.scales.tobytes())
    machine.write_mem(program.plan.addr("B"), _mx_element_bytes(b, program.plan.b_layout))
    machine.write_mem(program.plan.addr("Bs"), b.scales.tobytes())


def load_plain_inputs(machine: VectorMachine, program: KernelProgram,
                      a: np.ndarray, b: np.ndarray) -> None:
    cfg = program.cfg
    if a.shape != (cfg.m, cfg.n) or b.shape != (cfg.n, cfg.p):
        raise KernelConfigError("array shapes do not match the kernel config")
    machine.write_mem(program.plan.addr("A"), _wide_bits(a, cfg.acc_fmt))
    machine.write_mem(program.plan.addr("B"), _wide_bits(b, cfg.acc_fmt))


def read_result(machine: VectorMachine, program: KernelProgram) -> np.ndarray:
    """Output matrix as float32 (BF16 results are widened exactly)."""
    cfg = program.cfg
    addr, size = program.plan.regions["C"]
    raw = machine.read_mem(addr, size)
    if cfg.acc_fmt is FP32:
        return np.frombuffer(raw, dtype="<f4").reshape(cfg.m, cfg.p).copy()
    bits = np.frombuffer(raw, dtype="<u2").astype(np.uint32)
    return (bits << 16).view(np.float32).reshape(cfg.m, cfg.p).copy()


def extract_mx_operand(machine: VectorMachine, program: KernelProgram,
                       name: str) -> MxMatrix:
    """Rebuild the A or B operand from machine memory.

    Together with ``machine.dump_registers_json`` and ``mxt.write_mxt`` this
    lets a machine snapshot be persisted: registers as JSON, memory-resident
    MX tensors as MXT files.
    """
    cfg = program.cfg
    if cfg.kind not in MX_KINDS or name not in ("A", "B"):
        raise KernelConfigError(f"no MX operand {name!r} in this program")
    rows, cols = (cfg.m, cfg.n) if name == "A" else (cfg.n, cfg.p)
    layout = "row" if name == "A" else program.plan.b_layout
    addr, size = program.plan.regions[name]
    raw = machine.read_mem(addr, size)
    if cfg.elem_fmt is FP4_E2M1:
        flat = unpack_nibbles(raw, rows * cols)
    else:
        flat = np.frombuffer(raw, dtype=np.uint8).copy()
    if layout == "row":
        elements = flat.reshape(rows, cols)
    elif layout == "col":
        elements = flat.reshape(cols, rows).T.copy()
    else:  # pair-interleaved rows
        elements = (
            flat.reshape(rows // 2, cols, 2).transpose(0, 2, 1).reshape(rows, cols).copy()
        )
    s_addr, s_size = program.plan.regions["As" if name == "A" else "Bs"]
    scales = np.frombuffer(machine.read_mem(s_addr, s_size), dtype=np.uint8)
    axis = BlockAxis.ROW if name == "A" else BlockAxis.COL
    shape = (rows, cols // cfg.k_sw) if name == "A" else (rows // cfg.k_sw, cols)
    return MxMatrix(rows, cols, cfg.k_sw, axis, cfg.elem_fmt,
                    elements, scales.reshape(shape).copy())


def make_machine(cfg: KernelConfig, program: KernelProgram) -> VectorMachine:
    mem = max(128 * 1024, 1 << (program.plan.total - 1).bit_length())
    return VectorMachine(vlen=cfg.vlen, flen=cfg.flen, mem_size=mem,
                         elem_fmt=cfg.elem_fmt if cfg.kind in MX_KINDS else FP8_E4M3)


def run_kernel(cfg: KernelConfig, a, b, peak_flop_per_cycle: float = 0.0):
    """Build, load and execute a kernel; returns (C, trace, program).

    MX kernels take MxMatrix operands; plain kernels take float arrays.
    """
    program = build_kernel(cfg)
    machine = make_machine(cfg, program)
    if cfg.kind in MX_KINDS:
        load_mx_inputs(machine, program, a, b)
    else:
        load_plain_inputs(machine, program, np.asarray(a), np.asarray(b))
    trace = run_program(machine, program.instructions)
    trace.flops = program.flops
    trace.peak_flop_per_cycle = peak_flop_per_cycle
    trace.label = f"{cfg.kind}/{cfg.elem_fmt.name}/{cfg.acc_fmt.name}/n{cfg.n}"
    return read_result(machine, program), trace, program
