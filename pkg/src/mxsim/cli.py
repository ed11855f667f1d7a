"""Command-line front end.

Commands:

* ``quantize``  -- FP32 ``.npy`` matrix to an MXT1 block-scaled tensor file.
* ``matmul``    -- run a kernel on two MXT tensors, optionally checking the
  result bit-for-bit against the reference model and emitting a cycle report.
* ``bench``     -- sweep kernels/formats/inner dimensions and tabulate the
  modeled cycles, FLOP/cycle and utilization (CSV or JSON).
* ``verify``    -- self-check suite (codecs, instruction fuzz, kernels).

Exit codes: 0 success, 2 verification mismatch, 3 configuration error,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from mxsim.blocks import BlockAxis, quantize_matrix
from mxsim.formats import (
    BF16,
    FP4_E2M1,
    FP8_E4M3,
    FP8_E5M2,
    FP32,
    EncodingError,
)
from mxsim.kernels import (
    KernelConfig,
    KernelConfigError,
    build_kernel,
    run_kernel,
    to_bf16_array,
)
from mxsim.machine import ProgramError, SimulationError, static_trace
from mxsim.mxt import TensorFileError, read_mxt, write_mxt
from mxsim.oracles import matmul_oracle
from mxsim.perf import CostTable, analyze, peak_flop_per_cycle
from mxsim.verify import run_all

EXIT_OK = 0
EXIT_MISMATCH = 2
EXIT_CONFIG = 3
EXIT_IO = 4

_FMT_FLAGS = {"e5m2": FP8_E5M2, "e4m3": FP8_E4M3, "e2m1": FP4_E2M1}
_ACC_FLAGS = {"fp32": FP32, "bf16": BF16}
_KERNEL_FLAGS = {
    "rvv-baseline": "rvv_baseline",
    "spatz-baseline": "spatz_baseline",
    "vmxdotp": "vmxdotp",
    "plain-fp32": "plain_fp32",
    "plain-bf16": "plain_bf16",
}


def synthetic_matrix(rng: np.random.Generator, rows: int, cols: int,
                     sigma: float = 1.5) -> np.ndarray:
    """Signed log-normal values, shaped like weight/activation spreads."""
    mag = rng.lognormal(0.0, sigma, size=(rows, cols))
    sign = rng.choice([-1.0, 1.0], size=(rows, cols))
    return (mag * sign).astype(np.float32)


def _load_npy(path) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 2:
        raise KernelConfigError(f"{path}: expected a 2-D array, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float32)


# ---------------------------------------------------------------------------
# quantize
# ---------------------------------------------------------------------------


def cmd_quantize(args) -> int:
    arr = _load_npy(args.input)
    axis = BlockAxis.ROW if args.axis == "row" else BlockAxis.COL
    fmt = _FMT_FLAGS[args.fmt]
    matrix = quantize_matrix(arr, fmt, args.k, axis)
    write_mxt(args.output, matrix)
    deq = matrix.dequantize()
    err = np.abs(deq - arr)
    denom = np.maximum(np.abs(arr), np.float32(1e-30))
    print(f"wrote {args.output}: {matrix.rows}x{matrix.cols} {fmt.name} k={matrix.k} "
          f"axis={args.axis}")
    print(f"dequantization error: max_abs={err.max():.6g} mean_abs={err.mean():.6g} "
          f"max_rel={(err / denom).max():.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


def _matmul_config(args, a, b) -> KernelConfig:
    kind = _KERNEL_FLAGS[args.kernel]
    acc = _ACC_FLAGS[args.acc]
    if kind == "plain_bf16" and acc is FP32:
        acc = BF16
    if kind == "plain_fp32":
        acc = FP32
    return KernelConfig(
        kind, a.rows, a.cols, b.cols,
        elem_fmt=a.fmt, acc_fmt=acc, k_sw=a.k, flen=args.flen,
    )


def cmd_matmul(args) -> int:
    a = read_mxt(args.a)
    b = read_mxt(args.b)
    if a.block_axis is not BlockAxis.ROW:
        raise KernelConfigError(
            f"{args.a}: A must be blocked along rows (re-quantize with --axis row)"
        )
    if b.block_axis is not BlockAxis.COL:
        raise KernelConfigError(
            f"{args.b}: B must be blocked along columns for the matmul kernels "
            "(re-quantize with --axis col)"
        )
    if a.fmt is not b.fmt:
        raise KernelConfigError("A and B element formats differ")
    if a.k != b.k:
        raise KernelConfigError(f"A and B block sizes differ ({a.k} vs {b.k})")
    if a.cols != b.rows:
        raise KernelConfigError(f"inner dimensions differ ({a.cols} vs {b.rows})")
    cfg = _matmul_config(args, a, b)
    kind = cfg.kind
    if kind.startswith("plain"):
        ka = a.dequantize()
        kb = b.dequantize()
        if cfg.acc_fmt is BF16:
            ka, kb = to_bf16_array(ka), to_bf16_array(kb)
    else:
        ka, kb = a, b
    table = CostTable.from_json(args.costs) if args.costs else CostTable()
    peak = peak_flop_per_cycle(kind, cfg.elem_fmt, cfg.acc_fmt, cfg.flen, table)
    result, trace, _program = run_kernel(cfg, ka, kb, peak_flop_per_cycle=peak)

    if args.output:
        np.save(args.output, result)
        print(f"wrote {args.output}")
    if args.report:
        report = analyze(trace, table)
        with open(args.report, "w") as f:
            json.dump(report.as_dict(), f, indent=2)
        print(f"wrote {args.report}")
    if args.check:
        want = matmul_oracle(kind, ka, kb, cfg.acc_fmt, hw_block=cfg.hw_block)
        got_bits = result.view(np.uint32)
        want_bits = want.view(np.uint32)
        if not np.array_equal(got_bits, want_bits):
            bad = np.argwhere(got_bits != want_bits)
            m0, p0 = (int(x) for x in bad[0])
            print(
                f"check FAILED: {len(bad)} elements differ; first at "
                f"C[{m0},{p0}]: got {result[m0, p0]!r}, reference {want[m0, p0]!r}",
                file=sys.stderr,
            )
            return EXIT_MISMATCH
        print(f"check passed: {result.shape[0]}x{result.shape[1]} output bit-equals "
              "the reference model")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_rows(args, table: CostTable):
    rows = []
    for kernel_flag in args.kernels:
        kind = _KERNEL_FLAGS[kernel_flag]
        fmts = [_FMT_FLAGS[f] for f in args.fmts] if kind in (
            "rvv_baseline", "spatz_baseline", "vmxdotp") else [FP8_E4M3]
        for fmt in fmts:
            if kind in ("rvv_baseline", "spatz_baseline") and fmt is FP4_E2M1:
                continue  # emulation kernels are FP8-only
            for acc_flag in args.accs:
                acc = _ACC_FLAGS[acc_flag]
                if kind == "plain_fp32" and acc is not FP32:
                    continue
                if kind == "plain_bf16" and acc is not BF16:
                    continue
                for n in args.n_list:
                    cfg = KernelConfig(
                        kind, args.m, n, args.p, elem_fmt=fmt, acc_fmt=acc,
                        k_sw=args.k, flen=args.flen,
                    )
                    program = build_kernel(cfg)
                    trace = static_trace(program, vlen=cfg.vlen)
                    trace.flops = program.flops
                    trace.peak_flop_per_cycle = peak_flop_per_cycle(
                        kind, fmt, acc, cfg.flen, table
                    )
                    report = analyze(trace, table)
                    rows.append(
                        {
                            "kernel": kernel_flag,
                            "elem_fmt": fmt.name if kind in (
                                "rvv_baseline", "spatz_baseline", "vmxdotp") else "-",
                            "acc": acc.name,
                            "flen": cfg.flen,
                            "m": args.m,
                            "n": n,
                            "p": args.p,
                            "cycles": report.total_cycles,
                            "flops": report.flops,
                            "flop_per_cycle": round(report.flop_per_cycle, 3),
                            "utilization": round(report.utilization, 4),
                            "vau_fma": report.vau_cycles["fma"],
                            "vau_fp_convert": report.vau_cycles["fp_convert"],
                            "vau_mx_scaling": report.vau_cycles["mx_scaling"],
                            "vau_vmxdotp": report.vau_cycles["vmxdotp"],
                            "vlsu_cycles": report.vlsu_cycles,
                            "overhead_cycles": report.overhead_cycles,
                            "stall_cycles": report.stall_cycles,
                        }
                    )
    return rows


def cmd_bench(args) -> int:
    table = CostTable.from_json(args.costs) if args.costs else CostTable()
    rows = _bench_rows(args, table)
    if not rows:
        raise KernelConfigError("sweep selected no (kernel, format, acc, N) points")
    if args.output and args.output.endswith(".json"):
        with open(args.output, "w") as f:
            json.dump(rows, f, indent=2)
        print(f"wrote {args.output} ({len(rows)} rows)")
    else:
        out = open(args.output, "w", newline="") if args.output else sys.stdout
        try:
            writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        finally:
            if args.output:
                out.close()
                print(f"wrote {args.output} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    results = run_all(seed=args.seed, cases_per_family=args.cases)
    summary = {"passed": all(r["passed"] for r in results.values()), "checks": results}
    text = json.dumps(summary, indent=2)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK if summary["passed"] else EXIT_MISMATCH


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mxsim",
        description="MX block-format matmul simulator and cycle model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize an FP32 .npy matrix to MXT1")
    q.add_argument("input")
    q.add_argument("output")
    q.add_argument("--fmt", choices=sorted(_FMT_FLAGS), default="e4m3")
    q.add_argument("--k", type=int, default=32, help="block size (default 32)")
    q.add_argument("--axis", choices=["row", "col"], default="row",
                   help="blocking direction: row for A operands, col for B")

    m = sub.add_parser("matmul", help="run a matmul kernel on two MXT tensors")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--kernel", choices=sorted(_KERNEL_FLAGS), default="vmxdotp")
    m.add_argument("--acc", choices=sorted(_ACC_FLAGS), default="fp32")
    m.add_argument("--flen", type=int, choices=[32, 64], default=64)
    m.add_argument("--check", action="store_true",
                   help="compare bit-exactly against the reference model")
    m.add_argument("--report", metavar="PATH", help="write a JSON cycle report")
    m.add_argument("--costs", metavar="PATH", help="cost table JSON overrides")
    m.add_argument("-o", "--output", metavar="PATH", help="write the result as .npy")

    b = sub.add_parser("bench", help="sweep kernels and tabulate modeled cycles")
    b.add_argument("--kernels", nargs="+", choices=sorted(_KERNEL_FLAGS),
                   default=["rvv-baseline", "spatz-baseline", "vmxdotp"])
    b.add_argument("--fmts", nargs="+", choices=sorted(_FMT_FLAGS),
                   default=["e4m3"])
    b.add_argument("--accs", nargs="+", choices=sorted(_ACC_FLAGS),
                   default=["fp32"])
    b.add_argument("--n-list", type=lambda s: [int(x) for x in s.split(",")],
                   default=[32, 64, 128, 256, 512],
                   help="comma-separated inner dimensions")
    b.add_argument("-m", type=int, default=64)
    b.add_argument("-p", type=int, default=64)
    b.add_argument("--k", type=int, default=32)
    b.add_argument("--flen", type=int, choices=[32, 64], default=64)
    b.add_argument("--costs", metavar="PATH", help="cost table JSON overrides")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("-o", "--output", metavar="PATH",
                   help="output file (.csv or .json; default stdout CSV)")

    v = sub.add_parser("verify", help="run the self-check suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--cases", type=int, default=1500,
                   help="fuzz cases per vmxdotp family")
    v.add_argument("-o", "--output", metavar="PATH", help="also write JSON here")

    return parser


_COMMANDS = {
    "quantize": cmd_quantize,
    "matmul": cmd_matmul,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TensorFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KernelConfigError, EncodingError, SimulationError, ProgramError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
