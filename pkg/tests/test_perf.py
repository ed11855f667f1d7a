"""Cycle model: classification, costs, stall rule, breakdown properties."""

import json

import pytest

from mxsim.formats import BF16, FP4_E2M1, FP8_E4M3, FP32
from mxsim.kernels import KernelConfig, build_kernel
from mxsim.machine import Trace, TraceEntry, ins, static_trace
from mxsim.perf import (
    CostTable,
    analyze,
    classify,
    cost,
    entry_stall,
    peak_flop_per_cycle,
    scale_prefetch_stall,
)


def kernel_report(kind, n, acc=FP32, fmt=FP8_E4M3, table=None, **cfg_kw):
    table = table or CostTable()
    cfg = KernelConfig(kind, 64, n, 64, elem_fmt=fmt, acc_fmt=acc, **cfg_kw)
    prog = build_kernel(cfg)
    trace = static_trace(prog)
    trace.flops = prog.flops
    trace.peak_flop_per_cycle = peak_flop_per_cycle(kind, fmt, acc, cfg.flen, table)
    return analyze(trace, table)


# ---------------------------------------------------------------------------
# classify / cost
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "mnemonic,cls",
    [
        ("vfwmacc.vf", "fma"),
        ("vfmacc.vf", "fma"),
        ("vfwdotp.vv", "fma"),
        ("vfmacc.vv", "mx_scaling"),  # only used to apply block scales
        ("vsll.vi", "mx_scaling"),
        ("vwcvtu.x.x.v", "mx_scaling"),
        ("vwadd.vx", "mx_scaling"),
        ("vfwcvt.f.f.v", "fp_convert"),
        ("fcvt.h.b", "fp_convert"),
        ("vmxdotp.wf", "vmxdotp"),
        ("vmxdotp.qq", "vmxdotp"),
        ("vsetvli", "overhead"),
        ("vmv.v.i", "overhead"),
        ("addi", "overhead"),
        ("vle8.v", "memory"),
    ],
)
def test_classify(mnemonic, cls):
    assert classify(mnemonic) == cls


def test_classify_unknown_raises():
    with pytest.raises(ValueError):
        classify("vnosuch.v")


def entry(mnemonic, *args, sew=32, lmul=1, vl=16):
    from fractions import Fraction

    return TraceEntry(ins(mnemonic, *args), sew, Fraction(lmul), vl)


def test_cost_examples():
    t = CostTable()
    assert cost(entry("vmxdotp.wf", 0, 1, 16, 2, 24, vl=16), t) == ("vau", 4)
    assert cost(entry("vfmacc.vv", 0, 8, 16, vl=32), t) == ("vau", 4)
    assert cost(entry("vfmacc.vv", 0, 8, 16, vl=0), t) == ("vau", 0)
    assert cost(entry("vfwmacc.vf", 0, 1, 16, sew=16, vl=64), t) == ("vau", 8)
    assert cost(entry("vfwdotp.vv", 0, 8, 16, sew=16, vl=128), t) == ("vau", 8)
    assert cost(entry("vwcvtu.x.x.v", 30, 29, sew=8, vl=64), t) == ("vau", 16)
    assert cost(entry("vle8.v", 0, 0, sew=8, vl=64), t) == ("vlsu", 4)
    assert cost(entry("vlse64.v", 16, 0, 64, vl=32), t) == ("vlsu", 16)
    assert cost(entry("fcvt.h.b", 2, 1), t) == ("vau", 1)
    assert cost(entry("vsetvli", 16, 32, 1), t) == ("scalar", 1)


# ---------------------------------------------------------------------------
# scale-prefetch stall rule
# ---------------------------------------------------------------------------


def vv_entry(vd, vs2, vs4, vl=32):
    return entry("vmxdotp.ww", vd, 4, vs2, 12, vs4, sew=32, lmul=2, vl=vl)


def test_stall_zero_for_vector_scalar():
    trace = [entry("vmxdotp.wf", 0, 1, 16, 2, 24, vl=32) for _ in range(8)]
    assert scale_prefetch_stall(trace) == 0


def test_stall_one_per_eight_cycles_on_collision():
    # vd=0, vs2=4, vs4=8 all hit bank 0: 8 issues x 8 cycles = 64 cycles
    trace = [vv_entry(0, 4, 8) for _ in range(8)]
    assert scale_prefetch_stall(trace) == 8
    assert entry_stall(vv_entry(0, 4, 8, vl=4), CostTable()) == 1  # ceil(1/8)


def test_stall_zero_for_disjoint_banks():
    trace = [vv_entry(0, 1, 2) for _ in range(8)]
    assert scale_prefetch_stall(trace) == 0


def test_partial_collision_still_stalls():
    assert scale_prefetch_stall([vv_entry(0, 4, 2)]) == 1  # vd and vs2 share bank 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def test_empty_trace_zero_report():
    r = analyze(Trace([]))
    assert r.total_cycles == 0 and r.vau_busy == 0 and r.utilization == 0.0


def test_report_conservation_and_bounds():
    for kind, acc in (
        ("rvv_baseline", FP32),
        ("spatz_baseline", BF16),
        ("vmxdotp", FP32),
        ("plain_fp32", FP32),
    ):
        r = kernel_report(kind, 64, acc)
        assert sum(r.vau_cycles.values()) == r.vau_busy
        assert 0.0 <= r.utilization <= 1.0
        assert r.serial_cycles >= r.vau_busy
        assert r.total_cycles == -(-r.serial_cycles // 2)


def test_cost_table_json_roundtrip(tmp_path):
    path = tmp_path / "costs.json"
    path.write_text(json.dumps({"vlsu_bits_per_cycle": 256, "iter_overhead_cycles": 1}))
    t = CostTable.from_json(path)
    assert t.vlsu_bits_per_cycle == 256 and t.iter_overhead_cycles == 1
    path.write_text(json.dumps({"nope": 1}))
    with pytest.raises(ValueError):
        CostTable.from_json(path)
    with pytest.raises(ValueError):
        CostTable(fp_bits_per_cycle=0).validated()


def test_peak_rates():
    assert peak_flop_per_cycle("vmxdotp", FP8_E4M3, FP32) == 128
    assert peak_flop_per_cycle("vmxdotp", FP4_E2M1, FP32) == 256
    assert peak_flop_per_cycle("plain_fp32", FP8_E4M3, FP32) == 32
    assert peak_flop_per_cycle("plain_bf16", FP8_E4M3, BF16) == 64
    assert peak_flop_per_cycle("spatz_baseline", FP8_E4M3, BF16) == 128


# ---------------------------------------------------------------------------
# paper-trend properties (full assertions live in the acceptance suite)
# ---------------------------------------------------------------------------


def test_plain_fp32_is_fma_dominated():
    r = kernel_report("plain_fp32", 128)
    assert r.fraction_of_vau("fma") >= 0.95


def test_rvv_baseline_breakdown_shape():
    r = kernel_report("rvv_baseline", 128)
    assert 0.10 <= r.fraction_of_total("fp_convert") <= 0.30
    assert 0.10 <= r.fraction_of_total("mx_scaling") <= 0.25
    assert r.vau_cycles["fma"] > r.vau_cycles["fp_convert"]


def test_bf16_baseline_conversion_cycles_stay_flat():
    # absolute FP-convert work matches the FP32 kernel; MX scaling roughly halves
    r32 = kernel_report("rvv_baseline", 128, FP32)
    r16 = kernel_report("rvv_baseline", 128, BF16)
    assert abs(r16.vau_cycles["fp_convert"] - r32.vau_cycles["fp_convert"]) \
        <= 0.05 * r32.vau_cycles["fp_convert"]
    assert 0.4 <= r16.vau_cycles["mx_scaling"] / r32.vau_cycles["mx_scaling"] <= 0.7


def test_spatz_fma_cycles_halve():
    r_rvv = kernel_report("rvv_baseline", 128, FP32)
    r_spz = kernel_report("spatz_baseline", 128, FP32)
    assert r_spz.vau_cycles["fma"] * 2 == r_rvv.vau_cycles["fma"]


def test_vmxdotp_utilization_grows_with_n():
    utils = [kernel_report("vmxdotp", n).utilization for n in (32, 64, 128, 256, 512)]
    assert all(b > a for a, b in zip(utils, utils[1:]))
    assert utils[-1] >= 0.90


def test_static_trace_report_matches_executed_trace():
    import numpy as np

    from mxsim.blocks import BlockAxis, quantize_matrix
    from mxsim.kernels import run_kernel

    rng = np.random.default_rng(3)
    vals = rng.lognormal(0, 1, (4, 32)).astype(np.float32)
    a = quantize_matrix(vals, FP8_E4M3, 32, BlockAxis.ROW)
    b = quantize_matrix(
        rng.lognormal(0, 1, (32, 16)).astype(np.float32), FP8_E4M3, 32, BlockAxis.COL
    )
    cfg = KernelConfig("vmxdotp", 4, 32, 16)
    _, real_trace, prog = run_kernel(cfg, a, b)
    stat = static_trace(prog)
    stat.flops = real_trace.flops
    stat.label = real_trace.label
    assert analyze(real_trace).as_dict() == analyze(stat).as_dict()
