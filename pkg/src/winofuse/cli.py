"""Command-line interface.

Subcommands:
  bench       time engines over a built-in suite or an ad-hoc layer
  plan        evaluate R bounds and cache fits for a layer on a machine
  verify      randomized oracle-equivalence sweep across engines
  dump-basis  print the exact transform matrices for a tile size
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction

import numpy as np

from . import bench as bench_mod
from . import roofline
from .basis import make_basis
from .engines import ENGINE_KINDS, EngineConfig, conv_direct, run_engine
from .errors import WinofuseError
from .tensor import LayerSpec, new_tensor
from .transforms import transform_kernels


def _parse_points(text: str):
    return tuple(Fraction(tok.strip()) for tok in text.split(","))


def _parse_engines(text: str):
    names = [tok.strip() for tok in text.split(",") if tok.strip()]
    if names == ["all"]:
        return list(ENGINE_KINDS)
    for n in names:
        if n not in ENGINE_KINDS:
            raise WinofuseError(
                f"unknown engine {n!r}; choose from {ENGINE_KINDS}")
    return names


def _add_layer_flags(p: argparse.ArgumentParser, with_batch: bool = True):
    if with_batch:
        p.add_argument("--b", type=int, default=64, help="batch size")
    p.add_argument("--c", type=int, default=64, help="input channels")
    p.add_argument("--cprime", type=int, default=64, help="output channels")
    p.add_argument("--d", type=int, default=56, help="input height")
    p.add_argument("--w", type=int, default=0,
                   help="input width (default: same as height)")
    p.add_argument("--k", type=int, default=3, help="kernel side")
    p.add_argument("--pad", type=int, default=1,
                   help="padding (applied low and high)")


def _layer_from_args(args, batch=None) -> LayerSpec:
    width = args.w or args.d
    return LayerSpec(batch=batch if batch is not None else args.b,
                     in_channels=args.c, out_channels=args.cprime,
                     height=args.d, width=width, kernel=args.k,
                     pad_lo=args.pad, pad_hi=args.pad)


def _cmd_bench(args) -> int:
    if args.suite:
        entries = bench_mod.builtin_suite(args.suite)
    else:
        entries = [("adhoc", _layer_from_args(args))]
    engines = _parse_engines(args.engines)
    points = _parse_points(args.points) if args.points else None
    results = bench_mod.run_suite(
        entries, engines, tile=args.tile, r=args.r, workers=args.workers,
        reps=args.reps, warmup=args.warmup, verify=args.verify,
        verify_batch=args.verify_batch,
        verify_full_batch=args.full_batch_verify,
        batch=args.batch, seed=args.seed, points=points)
    text = bench_mod.emit_report(results, fmt=args.format, path=args.out)
    if args.out:
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    ok = all(r.error is None for r in results)
    if args.verify:
        ok = ok and all(r.verify == "pass" for r in results)
    return 0 if ok else 1


def _cmd_plan(args) -> int:
    machine = roofline.MachineModel.from_file(args.model)
    layer = _layer_from_args(args)
    report = roofline.plan(layer, args.tile, machine, alpha=args.alpha,
                           l2_fraction=args.l2_fraction,
                           l3_fraction=args.l3_fraction)
    print(report.format())
    return 0 if report.feasible and report.l3_fits else 1


def _cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    tiles = (4, 6, 7, 8)
    failures = 0
    for i in range(args.count):
        t = int(rng.choice(tiles))
        spec = LayerSpec(
            batch=int(rng.integers(1, 3)),
            in_channels=int(rng.integers(1, args.max_channels + 1)),
            out_channels=int(rng.integers(1, args.max_channels + 1)),
            height=int(rng.integers(5, 33)),
            width=int(rng.integers(5, 33)),
            kernel=3,
            pad_lo=int(rng.integers(0, 2)),
            pad_hi=int(rng.integers(0, 2)))
        inp = new_tensor(spec.input_dims(), seed=args.seed + 7 * i)
        kers = new_tensor(spec.kernel_dims(), seed=args.seed + 7 * i + 1)
        ref, _ = conv_direct(inp, kers, spec)
        pack = transform_kernels(kers, make_basis(t, spec.kernel))
        line = (f"[{i + 1}/{args.count}] T={t} B={spec.batch} "
                f"C={spec.in_channels} C'={spec.out_channels} "
                f"D={spec.height} W={spec.width} pad={spec.pad_lo}/"
                f"{spec.pad_hi}")
        staged, _ = run_engine(
            "three_stage", inp, pack, spec,
            EngineConfig(kind="three_stage", tile=t, workers=args.workers))
        fused, _ = run_engine(
            "fused", inp, pack, spec,
            EngineConfig(kind="fused", tile=t, r=args.r,
                         workers=args.workers))
        err = bench_mod.max_rel_error(fused, ref)
        exact = np.array_equal(fused.data, staged.data)
        ok = err <= bench_mod.VERIFY_TOL and exact
        failures += 0 if ok else 1
        status = "ok" if ok else "FAIL"
        print(f"{line}  rel_err={err:.3e} engines_match={exact}  {status}")
    print(f"{args.count - failures}/{args.count} passed")
    return 0 if failures == 0 else 1


def _cmd_dump_basis(args) -> int:
    points = _parse_points(args.points) if args.points else None
    basis = make_basis(args.tile, args.k, points)
    print(basis.dump())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="winofuse",
        description="Cache-fused Winograd convolution engines, planner, "
                    "and benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="time engines over layers")
    b.add_argument("--suite", choices=sorted(bench_mod.BUILTIN_SUITES),
                   help="built-in layer suite (omit to use layer flags)")
    _add_layer_flags(b)
    b.add_argument("--engines", default="three_stage,fused",
                   help="comma list from direct,three_stage,fused or 'all'")
    b.add_argument("-T", "--tile", type=int, default=7)
    b.add_argument("-R", "--r", type=int, default=24,
                   help="tiles per fused task")
    b.add_argument("--workers", type=int, default=0,
                   help="worker threads (0 = one per core)")
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--verify", action="store_true",
                   help="run separate oracle comparisons per entry")
    b.add_argument("--verify-batch", type=int, default=2)
    b.add_argument("--full-batch-verify", action="store_true",
                   help="verify at the full benchmark batch (slow)")
    b.add_argument("--batch", type=int, default=None,
                   help="override the suite batch size")
    b.add_argument("--seed", type=int, default=1234)
    b.add_argument("--points", default=None,
                   help="interpolation nodes, e.g. '0,1,-1,2,-2,1/2'")
    b.add_argument("--format", choices=("table", "csv", "json"),
                   default="table")
    b.add_argument("--out", default=None, help="write report to this path")
    b.set_defaults(func=_cmd_bench)

    p = sub.add_parser("plan", help="roofline planning for a layer")
    p.add_argument("--model", required=True,
                   help="machine model JSON (see machines/ for samples)")
    _add_layer_flags(p)
    p.add_argument("-T", "--tile", type=int, default=7)
    p.add_argument("--alpha", type=float, default=1.0,
                   help="transform intensity factor (1 here, 2 for FFT)")
    p.add_argument("--l2-fraction", type=float, default=0.5)
    p.add_argument("--l3-fraction", type=float, default=0.5)
    p.set_defaults(func=_cmd_plan)

    v = sub.add_parser("verify", help="randomized oracle sweep")
    v.add_argument("--count", type=int, default=20)
    v.add_argument("--seed", type=int, default=99)
    v.add_argument("--max-channels", type=int, default=32)
    v.add_argument("-R", "--r", type=int, default=8)
    v.add_argument("--workers", type=int, default=0)
    v.set_defaults(func=_cmd_verify)

    d = sub.add_parser("dump-basis", help="print transform matrices")
    d.add_argument("-T", "--tile", type=int, required=True)
    d.add_argument("--k", type=int, default=3)
    d.add_argument("--points", default=None)
    d.set_defaults(func=_cmd_dump_basis)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except WinofuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
