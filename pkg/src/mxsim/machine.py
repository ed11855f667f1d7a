"""Functional simulator for the RVV subset used by the MX matmul kernels.

Models a vector machine with 32 VLEN-bit registers, vtype (SEW/LMUL) and vl
state, scalar integer and FP register files, a flat little-endian memory,
and a CSR selecting the narrow element format.  On top of standard loads,
stores, converts and FMAs it implements the widening two-element
dot-product-accumulate (``vfwdotp``) and the six-operand MX dot-product
family (``vmxdotp.*``) in vector-vector and vector-scalar forms.

FP arithmetic is bit-exact: products and sums are evaluated in exact integer
arithmetic and rounded once (RNE) into the destination format.  Exact-zero
arithmetic results canonicalize to +0.  Instructions are symbolic (mnemonic
plus register/immediate arguments); there is no binary encoding layer.

Width suffixes of the MX dot product map the element-vector width (one
FLEN-bit block per lane) to the accumulator SEW: ``v`` same width, ``w``
half, ``q`` quarter.  With FLEN=64 the legal forms are ``ww/wf`` (FP32
accumulation, SEW=32) and ``qq/qf`` (BF16, SEW=16); with FLEN=32 they are
``vv/vf`` (FP32) and ``ww/wf`` (BF16).  The hardware block size is
FLEN / element-width: 8 FP8 or 16 FP4 elements at FLEN=64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

from mxsim.formats import (
    BF16,
    E8M0_NAN,
    FP4_E2M1,
    FP8_E4M3,
    FP8_E5M2,
    FP16,
    FP32,
    ElementFormat,
    convert_bits,
)

SEW_VALUES = (8, 16, 32, 64)
LMUL_VALUES = tuple(
    Fraction(n, d) for n, d in ((1, 8), (1, 4), (1, 2), (1, 1), (2, 1), (4, 1), (8, 1))
)

MX_ELEMENT_FORMATS = (FP8_E5M2, FP8_E4M3, FP4_E2M1)


class SimulationError(Exception):
    """Illegal operation, operand or machine state."""


class MemoryFault(SimulationError):
    def __init__(self, addr: int, element: int):
        super().__init__(f"memory access at 0x{addr:x} out of bounds (element {element})")
        self.addr = addr
        self.element = element


class ProgramError(SimulationError):
    """An instruction failed; carries the program index and machine snapshot."""

    def __init__(self, index: int, instr, cause: Exception, snapshot: dict):
        super().__init__(f"instruction {index} ({instr}): {cause}")
        self.index = index
        self.instr = instr
        self.snapshot = snapshot


# ---------------------------------------------------------------------------
# exact integer floating-point core
# ---------------------------------------------------------------------------

_FIN, _INF, _NAN = 0, 1, 2


def _split(bits: int, fmt: ElementFormat):
    """Classify bits as (_FIN, sign, mant, exp) with value (-1)^s*mant*2^exp,
    or an (_INF, sign, ...) / (_NAN, ...) marker."""
    mb = fmt.mantissa_bits
    m = bits & fmt.mant_mask
    e = (bits >> mb) & fmt.exp_mask
    s = (bits >> (mb + fmt.exponent_bits)) & 1 if fmt.has_sign else 0
    if e == fmt.exp_mask:
        if fmt.has_inf:
            return (_NAN, 0, 0, 0) if m else (_INF, s, 0, 0)
        if fmt.single_nan and m == fmt.mant_mask:
            return (_NAN, 0, 0, 0)
    if e == 0:
        return (_FIN, s, m, fmt.emin - mb)
    return (_FIN, s, (1 << mb) | m, e - fmt.bias - mb)


@lru_cache(maxsize=None)
def _split_lut(fmt: ElementFormat):
    return tuple(_split(b, fmt) for b in range(1 << fmt.width))


@lru_cache(maxsize=None)
def _convert_lut(src: ElementFormat, dst: ElementFormat):
    return tuple(convert_bits(b, src, dst) for b in range(1 << src.width))


def _pack(sign: int, mant: int, exp: int, fmt: ElementFormat) -> int:
    """Round (-1)^sign * mant * 2^exp (mant > 0) once into fmt, RNE."""
    sign_bit = sign << (fmt.exponent_bits + fmt.mantissa_bits)
    e_top = exp + mant.bit_length() - 1
    e = e_top if e_top > fmt.emin else fmt.emin
    shift = (e - fmt.mantissa_bits) - exp
    if shift <= 0:
        m = mant << -shift
    else:
        m = mant >> shift
        rem = mant & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and (m & 1)):
            m += 1
    if m == 0:
        return 0  # rounded away to +0
    if m >= (2 << fmt.mantissa_bits):
        m >>= 1
        e += 1
    if m < (1 << fmt.mantissa_bits):
        return sign_bit | m  # subnormal
    if e > fmt.emax:
        return sign_bit | fmt.inf_bits  # arithmetic formats all have inf
    return sign_bit | ((e + fmt.bias) << fmt.mantissa_bits) | (m - (1 << fmt.mantissa_bits))


def _pack_signed(acc: int, exp: int, fmt: ElementFormat) -> int:
    if acc == 0:
        return 0  # exact zero -> +0
    if acc < 0:
        return _pack(1, -acc, exp, fmt)
    return _pack(0, acc, exp, fmt)


def _add_aligned(parts):
    """Sum signed (mant, exp) terms exactly; returns (acc, exp)."""
    acc, e0 = 0, 0
    started = False
    for m, e in parts:
        if m == 0:
            continue
        if not started:
            acc, e0, started = m, e, True
        elif e < e0:
            acc = (acc << (e0 - e)) + m
            e0 = e
        else:
            acc += m << (e - e0)
    return acc, e0


def _fma_rounded(va, vb, vc, dst: ElementFormat) -> int:
    """va*vb + vc with a single rounding; operands are _split tuples."""
    if va[0] == _NAN or vb[0] == _NAN or vc[0] == _NAN:
        return dst.nan_bits
    ps = va[1] ^ vb[1]
    if va[0] == _INF or vb[0] == _INF:
        if (va[0] == _FIN and va[2] == 0) or (vb[0] == _FIN and vb[2] == 0):
            return dst.nan_bits  # inf * 0
        if vc[0] == _INF and vc[1] != ps:
            return dst.nan_bits  # inf - inf
        return (ps << (dst.width - 1)) | dst.inf_bits
    if vc[0] == _INF:
        return (vc[1] << (dst.width - 1)) | dst.inf_bits
    prod = va[2] * vb[2]
    acc, e0 = _add_aligned(
        ((-prod if ps else prod, va[3] + vb[3]), (-vc[2] if vc[1] else vc[2], vc[3]))
    )
    return _pack_signed(acc, e0, dst)


def _dot_acc_rounded(pairs, vc, dst: ElementFormat, scale_exp: int = 0) -> int:
    """sum(a_i*b_i) * 2^scale_exp + vc with a single rounding.

    ``pairs`` is a sequence of (_split, _split) operand tuples.
    """
    if vc[0] == _NAN:
        return dst.nan_bits
    inf_sign = None
    for va, vb in pairs:
        if va[0] == _NAN or vb[0] == _NAN:
            return dst.nan_bits
        if va[0] == _INF or vb[0] == _INF:
            if (va[0] == _FIN and va[2] == 0) or (vb[0] == _FIN and vb[2] == 0):
                return dst.nan_bits  # inf * 0
            s = va[1] ^ vb[1]
            if inf_sign is None:
                inf_sign = s
            elif inf_sign != s:
                return dst.nan_bits  # +inf + -inf
    if inf_sign is not None:
        if vc[0] == _INF and vc[1] != inf_sign:
            return dst.nan_bits
        return (inf_sign << (dst.width - 1)) | dst.inf_bits
    if vc[0] == _INF:
        return (vc[1] << (dst.width - 1)) | dst.inf_bits
    parts = []
    for va, vb in pairs:
        prod = va[2] * vb[2]
        parts.append((-prod if va[1] ^ vb[1] else prod, va[3] + vb[3] + scale_exp))
    parts.append((-vc[2] if vc[1] else vc[2], vc[3]))
    acc, e0 = _add_aligned(parts)
    return _pack_signed(acc, e0, dst)


# ---------------------------------------------------------------------------
# symbolic instructions
# ---------------------------------------------------------------------------

# operand roles: v=vector reg, f=fp reg, x=int reg, i=immediate,
# a=address, s=stride (bytes), n=avl, w=sew, m=lmul
SCHEMAS = {
    "vsetvli": ("n", "w", "m"),
    "vle8.v": ("v", "a"),
    "vle16.v": ("v", "a"),
    "vle32.v": ("v", "a"),
    "vlse32.v": ("v", "a", "s"),
    "vlse64.v": ("v", "a", "s"),
    "vse16.v": ("v", "a"),
    "vse32.v": ("v", "a"),
    "vmv.v.i": ("v", "i"),
    "vfwcvt.f.f.v": ("v", "v"),
    "vwcvtu.x.x.v": ("v", "v"),
    "vwadd.vx": ("v", "v", "x"),
    "vadd.vx": ("v", "v", "x"),
    "vsll.vi": ("v", "v", "i"),
    "vfmacc.vv": ("v", "v", "v"),
    "vfmacc.vf": ("v", "f", "v"),
    "vfwmacc.vf": ("v", "f", "v"),
    "vfwdotp.vv": ("v", "v", "v"),
    "vfwdotp.vf": ("v", "f", "v"),
    "vmxdotp.vv": ("v", "v", "v", "v", "v"),
    "vmxdotp.ww": ("v", "v", "v", "v", "v"),
    "vmxdotp.qq": ("v", "v", "v", "v", "v"),
    "vmxdotp.vf": ("v", "f", "v", "f", "v"),
    "vmxdotp.wf": ("v", "f", "v", "f", "v"),
    "vmxdotp.qf": ("v", "f", "v", "f", "v"),
    "fcvt.h.b": ("f", "f"),
    "fcvt.bf.b": ("f", "f"),
    "fcvt.ph.pb": ("f", "f"),
    "flb": ("f", "a"),
    "flh": ("f", "a"),
    "flw": ("f", "a"),
    "fld": ("f", "a"),
    "lbu": ("x", "a"),
    "addi": ("x", "x", "i"),
    "csrw.mxfmt": ("i",),
    "csrw.fp16fmt": ("i",),
}

_LMUL_NAMES = {
    Fraction(1, 8): "mf8",
    Fraction(1, 4): "mf4",
    Fraction(1, 2): "mf2",
    Fraction(1): "m1",
    Fraction(2): "m2",
    Fraction(4): "m4",
    Fraction(8): "m8",
}
_LMUL_BY_NAME = {v: k for k, v in _LMUL_NAMES.items()}

MXFMT_CODES = {0: FP8_E5M2, 1: FP8_E4M3, 2: FP4_E2M1}
FP16FMT_CODES = {0: FP16, 1: BF16}


@dataclass(frozen=True)
class Instruction:
    """A symbolic instruction; ``iter_group`` tags the loop iteration it
    belongs to for the cycle model (-1 = prologue/epilogue)."""

    mnemonic: str
    args: tuple
    iter_group: int = -1

    def __post_init__(self):
        roles = SCHEMAS.get(self.mnemonic)
        if roles is None:
            raise SimulationError(f"unknown mnemonic {self.mnemonic!r}")
        if len(roles) != len(self.args):
            raise SimulationError(
                f"{self.mnemonic} expects {len(roles)} operands, got {len(self.args)}"
            )

    def __str__(self):
        return format_instruction(self)


def ins(mnemonic: str, *args, group: int = -1) -> Instruction:
    return Instruction(mnemonic, tuple(args), group)


def format_instruction(instr: Instruction) -> str:
    out = []
    for role, val in zip(SCHEMAS[instr.mnemonic], instr.args):
        if role == "v":
            out.append(f"v{val}")
        elif role == "f":
            out.append(f"f{val}")
        elif role == "x":
            out.append(f"x{val}")
        elif role == "w":
            out.append(f"e{val}")
        elif role == "m":
            out.append(_LMUL_NAMES[Fraction(val)])
        else:
            out.append(str(val))
    return f"{instr.mnemonic} " + ", ".join(out) if out else instr.mnemonic


def parse_program(text: str) -> list[Instruction]:
    """Parse the one-instruction-per-line assembler form."""
    program = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        mnemonic = parts[0]
        roles = SCHEMAS.get(mnemonic)
        if roles is None:
            raise SimulationError(f"line {lineno}: unknown mnemonic {mnemonic!r}")
        tokens = [t.strip() for t in parts[1].split(",")] if len(parts) > 1 else []
        if len(tokens) != len(roles):
            raise SimulationError(f"line {lineno}: operand count mismatch")
        args = []
        for role, tok in zip(roles, tokens):
            if role in "vfx":
                if not tok.startswith(role):
                    raise SimulationError(f"line {lineno}: expected {role}-register, got {tok!r}")
                args.append(int(tok[1:]))
            elif role == "w":
                args.append(int(tok.lstrip("e")))
            elif role == "m":
                if tok not in _LMUL_BY_NAME:
                    raise SimulationError(f"line {lineno}: bad lmul {tok!r}")
                args.append(_LMUL_BY_NAME[tok])
            else:
                args.append(int(tok, 0))
        program.append(Instruction(mnemonic, tuple(args)))
    return program


def format_program(program) -> str:
    return "\n".join(format_instruction(i) for i in program) + "\n"


# ---------------------------------------------------------------------------
# machine state
# ---------------------------------------------------------------------------


@dataclass
class VType:
    sew: int = 32
    lmul: Fraction = Fraction(1)
    vill: bool = False


@dataclass(frozen=True)
class TraceEntry:
    instr: Instruction
    sew: int
    lmul: Fraction
    vl: int


@dataclass
class Trace:
    """Retired-instruction trace plus workload metadata for the cycle model."""

    entries: list = field(default_factory=list)
    flops: int = 0
    peak_flop_per_cycle: float = 0.0  # cluster-level peak for the workload
    label: str = ""

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


class VectorMachine:
    """One core complex: vector unit plus scalar integer/FP registers."""

    def __init__(self, vlen: int = 512, flen: int = 64, mem_size: int = 128 * 1024,
                 elem_fmt: ElementFormat = FP8_E4M3, fp16_fmt: ElementFormat = FP16):
        if vlen % 64 or vlen < 64:
            raise SimulationError("vlen must be a positive multiple of 64")
        if flen not in (32, 64):
            raise SimulationError("flen must be 32 or 64")
        if elem_fmt not in MX_ELEMENT_FORMATS:
            raise SimulationError(f"{elem_fmt.name} is not an MX element format")
        self.vlen = vlen
        self.flen = flen
        self.vlenb = vlen // 8
        self.vrf = bytearray(32 * self.vlenb)
        self.x = [0] * 32
        self.f = [0] * 32
        self.mem = bytearray(mem_size)
        self.vtype = VType()
        self.vl = 0
        self.elem_fmt = elem_fmt
        self.fp16_fmt = fp16_fmt

    # -- configuration ------------------------------------------------------

    def vlmax(self, sew: int, lmul) -> int:
        return int(self.vlen * Fraction(lmul) / sew)

    def _fp_format(self, sew: int) -> ElementFormat:
        if sew == 8:
            if self.elem_fmt.width != 8:
                raise SimulationError("8-bit FP ops need an FP8 element format CSR")
            return self.elem_fmt
        if sew == 16:
            return self.fp16_fmt
        if sew == 32:
            return FP32
        raise SimulationError(f"no FP arithmetic at SEW={sew}")

    # -- register helpers ----------------------------------------------------

    def _check_group(self, reg: int, emul: Fraction, what: str):
        if not 0 <= reg < 32:
            raise SimulationError(f"{what}: bad register v{reg}")
        if emul > 8 or emul < Fraction(1, 8):
            raise SimulationError(f"{what}: EMUL {emul} out of range")
        if emul >= 1:
            n = int(emul)
            if reg % n:
                raise SimulationError(f"{what}: v{reg} not aligned to EMUL={n}")
            if reg + n > 32:
                raise SimulationError(f"{what}: group v{reg}..v{reg + n - 1} exceeds the VRF")

    def read_elems(self, reg: int, eew: int, count: int) -> list[int]:
        step = eew // 8
        base = reg * self.vlenb
        end = base + count * step
        if end > len(self.vrf):
            raise SimulationError(f"register group at v{reg} overruns the VRF")
        buf = self.vrf
        return [
            int.from_bytes(buf[o : o + step], "little") for o in range(base, end, step)
        ]

    def write_elems(self, reg: int, eew: int, values) -> None:
        step = eew // 8
        base = reg * self.vlenb
        if base + len(values) * step > len(self.vrf):
            raise SimulationError(f"register group at v{reg} overruns the VRF")
        buf = self.vrf
        o = base
        for v in values:
            buf[o : o + step] = (v & ((1 << eew) - 1)).to_bytes(step, "little")
            o += step

    def read_vreg(self, reg: int, nregs: int = 1) -> bytes:
        return bytes(self.vrf[reg * self.vlenb : (reg + nregs) * self.vlenb])

    def write_vreg(self, reg: int, data: bytes) -> None:
        if reg * self.vlenb + len(data) > len(self.vrf):
            raise SimulationError("write_vreg overruns the VRF")
        self.vrf[reg * self.vlenb : reg * self.vlenb + len(data)] = data

    # -- memory helpers ------------------------------------------------------

    def load_bytes(self, addr: int, size: int, element: int = 0) -> int:
        if addr < 0 or addr + size > len(self.mem):
            raise MemoryFault(addr, element)
        return int.from_bytes(self.mem[addr : addr + size], "little")

    def store_bytes(self, addr: int, size: int, value: int, element: int = 0) -> None:
        if addr < 0 or addr + size > len(self.mem):
            raise MemoryFault(addr, element)
        self.mem[addr : addr + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(
            size, "little"
        )

    def write_mem(self, addr: int, data: bytes) -> None:
        if addr < 0 or addr + len(data) > len(self.mem):
            raise MemoryFault(addr, 0)
        self.mem[addr : addr + len(data)] = data

    def read_mem(self, addr: int, size: int) -> bytes:
        if addr < 0 or addr + size > len(self.mem):
            raise MemoryFault(addr, 0)
        return bytes(self.mem[addr : addr + size])

    # -- state snapshot ------------------------------------------------------

    def dump_registers(self) -> dict:
        """JSON-able register/CSR dump."""
        return {
            "vlen": self.vlen,
            "flen": self.flen,
            "vtype": {
                "sew": self.vtype.sew,
                "lmul": str(self.vtype.lmul),
                "vill": self.vtype.vill,
            },
            "vl": self.vl,
            "elem_fmt": self.elem_fmt.name,
            "fp16_fmt": self.fp16_fmt.name,
            "x": [x & 0xFFFFFFFF for x in self.x],
            "f": [f"0x{v:0{self.flen // 4}x}" for v in self.f],
            "v": [self.read_vreg(i).hex() for i in range(32)],
        }

    def dump_registers_json(self) -> str:
        return json.dumps(self.dump_registers(), indent=2)

    # -- vector config -------------------------------------------------------

    def vsetvli(self, avl: int, sew: int, lmul) -> int:
        lmul = Fraction(lmul)
        if sew not in SEW_VALUES or lmul not in LMUL_VALUES or self.vlen * lmul < sew:
            self.vtype = VType(sew=sew, lmul=lmul, vill=True)
            self.vl = 0
            return 0
        self.vtype = VType(sew=sew, lmul=lmul, vill=False)
        self.vl = min(avl, self.vlmax(sew, lmul))
        return self.vl

    def _require_vtype(self):
        if self.vtype.vill:
            raise SimulationError("vector instruction with vill set")

    # -- execution -----------------------------------------------------------

    def execute(self, instr: Instruction) -> None:
        handler = _EXECUTORS.get(instr.mnemonic)
        if handler is None:
            raise SimulationError(f"unknown mnemonic {instr.mnemonic!r}")
        handler(self, instr.args)


# ---------------------------------------------------------------------------
# executors
# ---------------------------------------------------------------------------


def _vector_emul(m: VectorMachine, eew: int) -> Fraction:
    return Fraction(eew, m.vtype.sew) * m.vtype.lmul


def _exec_vsetvli(m, args):
    avl, sew, lmul = args
    m.vsetvli(avl, sew, lmul)


def _exec_load(m, args, eew):
    m._require_vtype()
    vd, addr = args
    m._check_group(vd, _vector_emul(m, eew), f"vle{eew}")
    step = eew // 8
    vals = [m.load_bytes(addr + i * step, step, i) for i in range(m.vl)]
    m.write_elems(vd, eew, vals)


def _exec_vlse(m, args, eew):
    m._require_vtype()
    vd, addr, stride = args
    m._check_group(vd, _vector_emul(m, eew), f"vlse{eew}")
    step = eew // 8
    vals = [m.load_bytes(addr + i * stride, step, i) for i in range(m.vl)]
    m.write_elems(vd, eew, vals)


def _exec_store(m, args, eew):
    m._require_vtype()
    vs, addr = args
    m._check_group(vs, _vector_emul(m, eew), f"vse{eew}")
    step = eew // 8
    for i, v in enumerate(m.read_elems(vs, eew, m.vl)):
        m.store_bytes(addr + i * step, step, v, i)


def _exec_vmv_v_i(m, args):
    m._require_vtype()
    vd, imm = args
    sew = m.vtype.sew
    m._check_group(vd, m.vtype.lmul, "vmv.v.i")
    m.write_elems(vd, sew, [imm & ((1 << sew) - 1)] * m.vl)


def _exec_vfwcvt(m, args):
    m._require_vtype()
    vd, vs2 = args
    sew = m.vtype.sew
    src_fmt = m._fp_format(sew)
    dst_fmt = m._fp_format(2 * sew)
    m._check_group(vs2, m.vtype.lmul, "vfwcvt src")
    m._check_group(vd, 2 * m.vtype.lmul, "vfwcvt dst")
    lut = _convert_lut(src_fmt, dst_fmt)
    src = m.read_elems(vs2, sew, m.vl)
    m.write_elems(vd, 2 * sew, [lut[v] for v in src])


def _exec_vwcvtu(m, args):
    m._require_vtype()
    vd, vs2 = args
    sew = m.vtype.sew
    m._check_group(vs2, m.vtype.lmul, "vwcvtu src")
    m._check_group(vd, 2 * m.vtype.lmul, "vwcvtu dst")
    m.write_elems(vd, 2 * sew, m.read_elems(vs2, sew, m.vl))


def _sext(v: int, bits: int) -> int:
    v &= (1 << bits) - 1
    return v - (1 << bits) if v & (1 << (bits - 1)) else v


def _exec_vwadd_vx(m, args):
    m._require_vtype()
    vd, vs2, rs1 = args
    sew = m.vtype.sew
    m._check_group(vs2, m.vtype.lmul, "vwadd src")
    m._check_group(vd, 2 * m.vtype.lmul, "vwadd dst")
    x = _sext(m.x[rs1], 32)
    out = [(_sext(v, sew) + x) & ((1 << (2 * sew)) - 1) for v in m.read_elems(vs2, sew, m.vl)]
    m.write_elems(vd, 2 * sew, out)


def _exec_vadd_vx(m, args):
    m._require_vtype()
    vd, vs2, rs1 = args
    sew = m.vtype.sew
    m._check_group(vs2, m.vtype.lmul, "vadd src")
    m._check_group(vd, m.vtype.lmul, "vadd dst")
    x = _sext(m.x[rs1], 32)
    out = [(v + x) & ((1 << sew) - 1) for v in m.read_elems(vs2, sew, m.vl)]
    m.write_elems(vd, sew, out)


def _exec_vsll_vi(m, args):
    m._require_vtype()
    vd, vs2, imm = args
    sew = m.vtype.sew
    m._check_group(vs2, m.vtype.lmul, "vsll src")
    m._check_group(vd, m.vtype.lmul, "vsll dst")
    shamt = imm & (sew - 1)
    out = [(v << shamt) & ((1 << sew) - 1) for v in m.read_elems(vs2, sew, m.vl)]
    m.write_elems(vd, sew, out)


def _exec_vfmacc_vv(m, args):
    m._require_vtype()
    vd, vs1, vs2 = args
    sew = m.vtype.sew
    fmt = m._fp_format(sew)
    for reg in (vd, vs1, vs2):
        m._check_group(reg, m.vtype.lmul, "vfmacc")
    a = m.read_elems(vs1, sew, m.vl)
    b = m.read_elems(vs2, sew, m.vl)
    c = m.read_elems(vd, sew, m.vl)
    out = [
        _fma_rounded(_split(ai, fmt), _split(bi, fmt), _split(ci, fmt), fmt)
        for ai, bi, ci in zip(a, b, c)
    ]
    m.write_elems(vd, sew, out)


def _exec_vfmacc_vf(m, args):
    m._require_vtype()
    vd, fs1, vs2 = args
    sew = m.vtype.sew
    fmt = m._fp_format(sew)
    m._check_group(vd, m.vtype.lmul, "vfmacc")
    m._check_group(vs2, m.vtype.lmul, "vfmacc")
    fa = _split(m.f[fs1] & ((1 << sew) - 1), fmt)
    b = m.read_elems(vs2, sew, m.vl)
    c = m.read_elems(vd, sew, m.vl)
    out = [_fma_rounded(fa, _split(bi, fmt), _split(ci, fmt), fmt) for bi, ci in zip(b, c)]
    m.write_elems(vd, sew, out)


def _exec_vfwmacc_vf(m, args):
    m._require_vtype()
    vd, fs1, vs2 = args
    sew = m.vtype.sew
    src_fmt = m._fp_format(sew)
    dst_fmt = m._fp_format(2 * sew)
    m._check_group(vs2, m.vtype.lmul, "vfwmacc src")
    m._check_group(vd, 2 * m.vtype.lmul, "vfwmacc dst")
    fa = _split(m.f[fs1] & ((1 << sew) - 1), src_fmt)
    b = m.read_elems(vs2, sew, m.vl)
    c = m.read_elems(vd, 2 * sew, m.vl)
    out = [
        _fma_rounded(fa, _split(bi, src_fmt), _split(ci, dst_fmt), dst_fmt)
        for bi, ci in zip(b, c)
    ]
    m.write_elems(vd, 2 * sew, out)


def _exec_vfwdotp(m, args, scalar: bool):
    """vl source elements at SEW pair-reduce into vl/2 lanes at 2*SEW."""
    m._require_vtype()
    if m.vl % 2:
        raise SimulationError("vfwdotp needs an even vl")
    sew = m.vtype.sew
    src_fmt = m._fp_format(sew)
    dst_fmt = m._fp_format(2 * sew)
    vd = args[0]
    vs2 = args[2]
    m._check_group(vs2, m.vtype.lmul, "vfwdotp src")
    m._check_group(vd, m.vtype.lmul, "vfwdotp dst")
    b = m.read_elems(vs2, sew, m.vl)
    n_out = m.vl // 2
    c = m.read_elems(vd, 2 * sew, n_out)
    if scalar:
        packed = m.f[args[1]]
        mask = (1 << sew) - 1
        a0 = _split(packed & mask, src_fmt)
        a1 = _split((packed >> sew) & mask, src_fmt)
        get_a = lambda i: (a0, a1)
    else:
        a = m.read_elems(args[1], sew, m.vl)
        get_a = lambda i: (_split(a[2 * i], src_fmt), _split(a[2 * i + 1], src_fmt))
    out = []
    for i in range(n_out):
        xa0, xa1 = get_a(i)
        pairs = (
            (xa0, _split(b[2 * i], src_fmt)),
            (xa1, _split(b[2 * i + 1], src_fmt)),
        )
        out.append(_dot_acc_rounded(pairs, _split(c[i], dst_fmt), dst_fmt))
    m.write_elems(vd, 2 * sew, out)


_RATIO_BY_SUFFIX = {"v": 1, "w": 2, "q": 4}


def _exec_vmxdotp(m, args, suffix: str, scalar: bool):
    m._require_vtype()
    ratio = _RATIO_BY_SUFFIX[suffix]
    sew = m.flen // ratio
    if m.vtype.sew != sew:
        raise SimulationError(
            f"vmxdotp.{suffix}{'f' if scalar else suffix} needs SEW={sew} at FLEN={m.flen}"
        )
    if sew not in (16, 32):
        raise SimulationError(f"no MX accumulator at SEW={sew}")
    acc_fmt = FP32 if sew == 32 else BF16
    elem_fmt = m.elem_fmt
    k = m.flen // elem_fmt.width
    lmul = m.vtype.lmul
    emul_elem = ratio * lmul
    emul_sc = Fraction(8, sew) * lmul
    vd = args[0]
    vs2 = args[2]
    vs4 = args[4]
    m._check_group(vd, lmul, "vmxdotp vd")
    m._check_group(vs2, emul_elem, "vmxdotp vs2")
    m._check_group(vs4, emul_sc, "vmxdotp vs4")
    if m.vl * m.flen > emul_elem * m.vlen:
        raise SimulationError("vl*k exceeds the element operand register group")

    lut = _split_lut(elem_fmt)
    ew = elem_fmt.width
    emask = (1 << ew) - 1
    chunk_mask = (1 << m.flen) - 1

    def unpack(chunk):
        return [lut[(chunk >> (j * ew)) & emask] for j in range(k)]

    b_chunks = m.read_elems(vs2, m.flen, m.vl)
    s4 = m.read_elems(vs4, 8, m.vl)
    if scalar:
        a_elems = unpack(m.f[args[1]] & chunk_mask)
        s3_all = m.f[args[3]] & 0xFF
        get_a = lambda i: a_elems
        get_s3 = lambda i: s3_all
    else:
        m._check_group(args[1], emul_elem, "vmxdotp vs1")
        m._check_group(args[3], emul_sc, "vmxdotp vs3")
        a_chunks = m.read_elems(args[1], m.flen, m.vl)
        s3 = m.read_elems(args[3], 8, m.vl)
        get_a = lambda i: unpack(a_chunks[i])
        get_s3 = lambda i: s3[i]

    c = m.read_elems(vd, sew, m.vl)
    out = []
    for i in range(m.vl):
        s3i = get_s3(i)
        s4i = s4[i]
        if s3i == E8M0_NAN or s4i == E8M0_NAN:
            out.append(acc_fmt.nan_bits)  # NaN scale poisons the lane
            continue
        pairs = list(zip(get_a(i), unpack(b_chunks[i])))
        out.append(
            _dot_acc_rounded(pairs, _split(c[i], acc_fmt), acc_fmt, s3i + s4i - 254)
        )
    m.write_elems(vd, sew, out)


def _exec_fcvt(m, args, dst_fmt_of):
    fd, fs1 = args
    dst = dst_fmt_of(m)
    lut = _convert_lut(m.elem_fmt, dst)
    m.f[fd] = lut[m.f[fs1] & 0xFF]


def _exec_fcvt_packed(m, args):
    # two packed FP8 bytes -> two packed 16-bit values
    fd, fs1 = args
    lut = _convert_lut(m.elem_fmt, m.fp16_fmt)
    raw = m.f[fs1]
    m.f[fd] = lut[raw & 0xFF] | (lut[(raw >> 8) & 0xFF] << 16)


def _exec_fload(m, args, size):
    fd, addr = args
    m.f[fd] = m.load_bytes(addr, size)


def _exec_lbu(m, args):
    rd, addr = args
    m.x[rd] = m.load_bytes(addr, 1)


def _exec_addi(m, args):
    rd, rs1, imm = args
    m.x[rd] = (m.x[rs1] + imm) & 0xFFFFFFFF


def _exec_csrw_mxfmt(m, args):
    code = args[0]
    if code not in MXFMT_CODES:
        raise SimulationError(f"bad MX element format code {code}")
    m.elem_fmt = MXFMT_CODES[code]


def _exec_csrw_fp16fmt(m, args):
    code = args[0]
    if code not in FP16FMT_CODES:
        raise SimulationError(f"bad 16-bit FP format code {code}")
    m.fp16_fmt = FP16FMT_CODES[code]


_EXECUTORS = {
    "vsetvli": _exec_vsetvli,
    "vle8.v": lambda m, a: _exec_load(m, a, 8),
    "vle16.v": lambda m, a: _exec_load(m, a, 16),
    "vle32.v": lambda m, a: _exec_load(m, a, 32),
    "vlse32.v": lambda m, a: _exec_vlse(m, a, 32),
    "vlse64.v": lambda m, a: _exec_vlse(m, a, 64),
    "vse16.v": lambda m, a: _exec_store(m, a, 16),
    "vse32.v": lambda m, a: _exec_store(m, a, 32),
    "vmv.v.i": _exec_vmv_v_i,
    "vfwcvt.f.f.v": _exec_vfwcvt,
    "vwcvtu.x.x.v": _exec_vwcvtu,
    "vwadd.vx": _exec_vwadd_vx,
    "vadd.vx": _exec_vadd_vx,
    "vsll.vi": _exec_vsll_vi,
    "vfmacc.vv": _exec_vfmacc_vv,
    "vfmacc.vf": _exec_vfmacc_vf,
    "vfwmacc.vf": _exec_vfwmacc_vf,
    "vfwdotp.vv": lambda m, a: _exec_vfwdotp(m, a, scalar=False),
    "vfwdotp.vf": lambda m, a: _exec_vfwdotp(m, a, scalar=True),
    "vmxdotp.vv": lambda m, a: _exec_vmxdotp(m, a, "v", scalar=False),
    "vmxdotp.vf": lambda m, a: _exec_vmxdotp(m, a, "v", scalar=True),
    "vmxdotp.ww": lambda m, a: _exec_vmxdotp(m, a, "w", scalar=False),
    "vmxdotp.wf": lambda m, a: _exec_vmxdotp(m, a, "w", scalar=True),
    "vmxdotp.qq": lambda m, a: _exec_vmxdotp(m, a, "q", scalar=False),
    "vmxdotp.qf": lambda m, a: _exec_vmxdotp(m, a, "q", scalar=True),
    "fcvt.h.b": lambda m, a: _exec_fcvt(m, a, lambda mm: FP16),
    "fcvt.bf.b": lambda m, a: _exec_fcvt(m, a, lambda mm: BF16),
    "fcvt.ph.pb": _exec_fcvt_packed,
    "flb": lambda m, a: _exec_fload(m, a, 1),
    "flh": lambda m, a: _exec_fload(m, a, 2),
    "flw": lambda m, a: _exec_fload(m, a, 4),
    "fld": lambda m, a: _exec_fload(m, a, 8),
    "lbu": _exec_lbu,
    "addi": _exec_addi,
    "csrw.mxfmt": _exec_csrw_mxfmt,
    "csrw.fp16fmt": _exec_csrw_fp16fmt,
}


# ---------------------------------------------------------------------------
# program execution
# ---------------------------------------------------------------------------


def run_program(machine: VectorMachine, program) -> Trace:
    """Execute instructions in order; returns the retired-instruction trace.

    Any instruction-level error aborts with the failing index and a register
    snapshot attached.  Deterministic: identical initial state and program
    give identical final state and trace.
    """
    instructions = getattr(program, "instructions", program)
    entries = []
    for idx, instr in enumerate(instructions):
        try:
            machine.execute(instr)
        except SimulationError as exc:
            raise ProgramError(idx, instr, exc, machine.dump_registers()) from exc
        entries.append(
            TraceEntry(instr, machine.vtype.sew, machine.vtype.lmul, machine.vl)
        )
    return Trace(entries)


def static_trace(program, vlen: int = 512) -> Trace:
    """Trace of a program derived without executing data operations.

    Only vsetvli state is interpreted, which fully determines per-instruction
    vtype and vl; matches ``run_program``'s trace for any data.
    """
    instructions = getattr(program, "instructions", program)
    sew, lmul, vl = 32, Fraction(1), 0
    entries = []
    for instr in instructions:
        if instr.mnemonic == "vsetvli":
            avl, sew, lm = instr.args
            lmul = Fraction(lm)
            vlmax = int(vlen * lmul / sew) if vlen * lmul >= sew else 0
            vl = min(avl, vlmax)
        entries.append(TraceEntry(instr, sew, lmul, vl))
    return Trace(entries)
