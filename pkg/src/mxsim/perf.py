"""Analytic cycle model over execution traces.

Models one core complex (CC) with a vector arithmetic unit (VAU), a vector
load/store unit (VLSU) and a scalar lane, then splits the workload ideally
across the cluster's CCs.  Instruction costs follow a throughput model:

* FP vector ops sustain ``fp_bits_per_cycle`` of destination bits per cycle,
  integer vector ops ``int_bits_per_cycle``, memory ops
  ``vlsu_bits_per_cycle``.
* The MX dot-product unit retires ``mxdp_blocks_per_fpu`` blocks per FPU per
  cycle, independent of element format (wider blocks mean more FLOPs per
  cycle, not more cycles).
* Scalar FP ops occupy an FPU for one cycle; other scalar work and vector
  moves ride the scalar lane.

Within each tagged loop iteration the three lanes overlap perfectly
(chaining), so the iteration costs max(VAU, VLSU, scalar); a fixed
per-iteration constant covers loop control and address generation.
Vector-vector MX dot products whose vd/vs2/vs4 registers collide modulo the
bank count pay one scale-prefetch stall cycle per 8 executed cycles;
vector-scalar forms never stall.

Defaults reflect a 2-CC cluster sustaining 512 FP bits and 128 integer bits
per cycle, with 4 FPUs per CC.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from mxsim.machine import Trace, TraceEntry

VAU_CLASSES = ("fma", "fp_convert", "mx_scaling", "vmxdotp")


@dataclass
class CostTable:
    """Throughput and overhead parameters, per core complex."""

    fp_bits_per_cycle: int = 256
    int_bits_per_cycle: int = 64
    vlsu_bits_per_cycle: int = 128
    scalar_fp_cycles: int = 1
    scalar_op_cycles: int = 1
    iter_overhead_cycles: int = 2
    cores_per_cluster: int = 2
    fpus_per_cc: int = 4
    mxdp_blocks_per_fpu: int = 1
    vrf_banks: int = 4

    @classmethod
    def from_json(cls, path) -> "CostTable":
        with open(path) as f:
            overrides = json.load(f)
        table = cls()
        known = {f.name for f in fields(cls)}
        for key, value in overrides.items():
            if key not in known:
                raise ValueError(f"unknown cost table field {key!r}")
            setattr(table, key, value)
        return table

    def validated(self) -> "CostTable":
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"cost table field {f.name} must be positive")
        return self


_LOAD_EEW = {
    "vle8.v": 8,
    "vle16.v": 16,
    "vle32.v": 32,
    "vlse32.v": 32,
    "vlse64.v": 64,
    "vse16.v": 16,
    "vse32.v": 32,
}

_INT_WIDENING = {"vwcvtu.x.x.v", "vwadd.vx"}
_INT_SINGLE = {"vadd.vx", "vsll.vi"}
_SCALAR_FP = {"fcvt.h.b", "fcvt.bf.b", "fcvt.ph.pb"}
_SCALAR_OTHER = {"flb", "flh", "flw", "fld", "lbu", "addi", "csrw.mxfmt", "csrw.fp16fmt"}


def classify(mnemonic: str) -> str:
    """Instruction class for the breakdown (Fig.-2-style categories)."""
    if mnemonic.startswith("vmxdotp."):
        return "vmxdotp"
    if mnemonic in ("vfmacc.vf", "vfwmacc.vf", "vfwdotp.vv", "vfwdotp.vf"):
        return "fma"
    if mnemonic == "vfmacc.vv":
        # only used to apply expanded block scales in the emulation kernels
        return "mx_scaling"
    if mnemonic in _INT_WIDENING or mnemonic in _INT_SINGLE:
        return "mx_scaling"
    if mnemonic == "vfwcvt.f.f.v" or mnemonic in _SCALAR_FP:
        return "fp_convert"
    if mnemonic in _LOAD_EEW:
        return "memory"
    if mnemonic in ("vsetvli", "vmv.v.i") or mnemonic in _SCALAR_OTHER:
        return "overhead"
    raise ValueError(f"unknown mnemonic {mnemonic!r}")


def cost(entry: TraceEntry, table: CostTable) -> tuple[str, int]:
    """(unit, cycles) for one trace entry; unit is vau, vlsu or scalar."""
    mnem = entry.instr.mnemonic
    vl = entry.vl
    sew = entry.sew
    if mnem in _LOAD_EEW:
        return "vlsu", math.ceil(vl * _LOAD_EEW[mnem] / table.vlsu_bits_per_cycle)
    if mnem.startswith("vmxdotp."):
        per_cycle = table.fpus_per_cc * table.mxdp_blocks_per_fpu
        return "vau", math.ceil(vl / per_cycle)
    if mnem in ("vfmacc.vv", "vfmacc.vf"):
        return "vau", math.ceil(vl * sew / table.fp_bits_per_cycle)
    if mnem in ("vfwmacc.vf", "vfwcvt.f.f.v"):
        return "vau", math.ceil(vl * 2 * sew / table.fp_bits_per_cycle)
    if mnem in ("vfwdotp.vv", "vfwdotp.vf"):
        # vl source elements reduce into vl/2 double-width results
        return "vau", math.ceil(vl * sew / table.fp_bits_per_cycle)
    if mnem in _INT_WIDENING:
        return "vau", math.ceil(vl * 2 * sew / table.int_bits_per_cycle)
    if mnem in _INT_SINGLE:
        return "vau", math.ceil(vl * sew / table.int_bits_per_cycle)
    if mnem in _SCALAR_FP:
        return "vau", table.scalar_fp_cycles
    if mnem == "vmv.v.i":
        return "scalar", math.ceil(vl * sew / table.fp_bits_per_cycle)
    if mnem == "vsetvli" or mnem in _SCALAR_OTHER:
        return "scalar", table.scalar_op_cycles
    raise ValueError(f"unknown mnemonic {mnem!r}")


def _is_vv_mxdp(mnemonic: str) -> bool:
    return mnemonic.startswith("vmxdotp.") and not mnemonic.endswith("f")


def _banks_collide(args: tuple, banks: int) -> bool:
    vd, _vs1, vs2, _vs3, vs4 = args
    return len({vd % banks, vs2 % banks, vs4 % banks}) < 3


def entry_stall(entry: TraceEntry, table: CostTable) -> int:
    """Scale-prefetch stalls for one entry: 1 per 8 vmxdotp cycles when a
    vector-vector form's vd/vs2/vs4 registers collide on a VRF bank."""
    if not _is_vv_mxdp(entry.instr.mnemonic):
        return 0
    if not _banks_collide(entry.instr.args, table.vrf_banks):
        return 0
    _, cycles = cost(entry, table)
    return math.ceil(cycles / 8)


def scale_prefetch_stall(trace, table: CostTable | None = None) -> int:
    """Total stall cycles over a trace window (zero for vf-only traces)."""
    table = table or CostTable()
    return sum(entry_stall(e, table) for e in trace)


@dataclass
class CycleReport:
    """Modeled cycles, class breakdown and derived throughput figures.

    ``serial_cycles`` is the whole traced program on one CC;
    ``total_cycles`` divides it over the cluster's CCs (ideal split).
    Class cycles in ``vau_cycles`` sum to exactly ``vau_busy``.
    """

    label: str = ""
    serial_cycles: int = 0
    total_cycles: int = 0
    vau_cycles: dict = field(default_factory=lambda: {c: 0 for c in VAU_CLASSES})
    vlsu_cycles: int = 0
    overhead_cycles: int = 0
    stall_cycles: int = 0
    flops: int = 0
    flop_per_cycle: float = 0.0
    peak_flop_per_cycle: float = 0.0
    utilization: float = 0.0

    @property
    def vau_busy(self) -> int:
        return sum(self.vau_cycles.values())

    def fraction_of_total(self, cls: str) -> float:
        if self.serial_cycles == 0:
            return 0.0
        return self.vau_cycles[cls] / self.serial_cycles

    def fraction_of_vau(self, cls: str) -> float:
        busy = self.vau_busy
        return self.vau_cycles[cls] / busy if busy else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["vau_busy"] = self.vau_busy
        return d


def analyze(trace: Trace, table: CostTable | None = None) -> CycleReport:
    """Cycle report for a trace.

    Entries sharing an ``iter_group`` tag form one steady-state iteration:
    its time is max(VAU, VLSU, scalar + per-iteration overhead) plus any
    vmxdotp scale-prefetch stalls.  Untagged stretches (prologue/epilogue)
    cost the same max without the loop constant.
    """
    table = (table or CostTable()).validated()
    report = CycleReport(label=getattr(trace, "label", ""))
    entries = list(trace)
    if not entries:
        return report

    groups = []  # (is_loop_body, [entries])
    current_key = object()
    for e in entries:
        gid = e.instr.iter_group
        key = gid if gid >= 0 else ("seg", len(groups))
        if key != current_key:
            groups.append((gid >= 0, []))
            current_key = key
        groups[-1][1].append(e)

    serial = 0
    for is_body, members in groups:
        vau = vlsu = scalar = 0
        for e in members:
            unit, cycles = cost(e, table)
            if unit == "vau":
                report.vau_cycles[classify(e.instr.mnemonic)] += cycles
                vau += cycles
            elif unit == "vlsu":
                report.vlsu_cycles += cycles
                vlsu += cycles
            else:
                report.overhead_cycles += cycles
                scalar += cycles
            stall = entry_stall(e, table)
            if stall:
                report.stall_cycles += stall
                vau += stall
        if is_body:
            scalar += table.iter_overhead_cycles
            report.overhead_cycles += table.iter_overhead_cycles
        serial += max(vau, vlsu, scalar)

    report.serial_cycles = serial
    report.total_cycles = math.ceil(serial / table.cores_per_cluster)
    report.flops = getattr(trace, "flops", 0)
    report.peak_flop_per_cycle = getattr(trace, "peak_flop_per_cycle", 0.0)
    if report.total_cycles:
        report.flop_per_cycle = report.flops / report.total_cycles
    if report.peak_flop_per_cycle:
        report.utilization = report.flop_per_cycle / report.peak_flop_per_cycle
    return report


def peak_flop_per_cycle(kind: str, elem_fmt, acc_fmt, flen: int = 64,
                        table: CostTable | None = None) -> float:
    """Cluster-level peak FLOP/cycle for a kernel family.

    vmxdotp: one k-element block per FPU per cycle (k = FLEN/element width).
    FMA kernels: fp_bits_per_cycle of accumulator output per CC, two FLOPs
    per FMA; the pair dot product doubles that.
    """
    table = table or CostTable()
    cores = table.cores_per_cluster
    if kind == "vmxdotp":
        k = flen // elem_fmt.width
        return cores * table.fpus_per_cc * table.mxdp_blocks_per_fpu * k * 2
    per_cc_fma = table.fp_bits_per_cycle / acc_fmt.width
    peak = cores * per_cc_fma * 2
    if kind == "spatz_baseline":
        peak *= 2
    return peak
