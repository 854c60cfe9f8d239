"""Layer suites, timing loops, oracle verification, and reports.

One benchmark entry is one (layer, engine) pair.  Entries run strictly
one at a time; all parallelism lives inside the engines, so timings are
never cross-contaminated.  Inputs are seeded deterministically: the same
seed reproduces the same tensors and therefore the same verify errors.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .engines import ConvStats, EngineConfig, conv_direct, run_engine
from .errors import InvalidParameterError, WinofuseError
from .basis import make_basis
from .tensor import LayerSpec, Tensor4D, new_tensor
from .transforms import transform_kernels

VERIFY_TOL = 1e-4

CSV_COLUMNS = ["label", "engine", "T", "R", "workers", "median_ms",
               "min_ms", "flops", "tasks", "verify", "max_rel_err"]


def _layer(c: int, d: int) -> LayerSpec:
    return LayerSpec(batch=64, in_channels=c, out_channels=c,
                     height=d, width=d, kernel=3, pad_lo=1, pad_hi=1)


# The two benchmark grids: channel count doubles while the spatial side
# halves, batch 64, 3x3 kernels, padding 1 on both sides.
BUILTIN_SUITES = {
    "resnet": [("resnet_64ch_56", _layer(64, 56)),
               ("resnet_128ch_28", _layer(128, 28)),
               ("resnet_256ch_14", _layer(256, 14)),
               ("resnet_512ch_7", _layer(512, 7))],
    "vgg": [("vgg_64ch_224", _layer(64, 224)),
            ("vgg_128ch_112", _layer(128, 112)),
            ("vgg_256ch_56", _layer(256, 56)),
            ("vgg_512ch_28", _layer(512, 28))],
}


def builtin_suite(name: str):
    try:
        return list(BUILTIN_SUITES[name])
    except KeyError:
        raise InvalidParameterError(
            f"unknown suite {name!r}; have {sorted(BUILTIN_SUITES)}") \
            from None


def max_rel_error(got: Tensor4D, ref: Tensor4D) -> float:
    """Largest |got - ref| scaled by the largest |ref| magnitude."""
    a = got.data.astype(np.float64)
    b = ref.data.astype(np.float64)
    scale = max(float(np.max(np.abs(b))), 1e-30)
    return float(np.max(np.abs(a - b))) / scale


@dataclass
class BenchResult:
    label: str
    engine: str
    tile: int
    r: int
    workers: int
    times_ms: list = field(default_factory=list)
    median_ms: float = float("nan")
    min_ms: float = float("nan")
    flops: int = 0
    tasks: int = 0
    verify: str = "skipped"
    max_rel_err: float | None = None
    stats: ConvStats | None = None
    error: str | None = None


def _engine_args(engine: str, kers: Tensor4D, pack):
    return kers if engine == "direct" else pack


def run_suite(entries, engines, *, tile: int = 7, r: int = 24,
              workers: int = 0, reps: int = 10, warmup: int = 3,
              verify: bool = False, verify_batch: int = 2,
              verify_full_batch: bool = False, batch: int | None = None,
              seed: int = 1234, points=None):
    """Time every (layer, engine) pair; optionally verify against the
    direct oracle.

    Each entry executes warmup + reps times; the median and min are
    taken over the reps (post-warmup) runs.  Verification runs are
    separate executions at a reduced batch (verify_batch) so enabling
    them never changes the timed configuration.  A failing entry
    records its error and the suite continues.
    """
    if not engines:
        raise InvalidParameterError("no engines requested")
    if reps < 1 or warmup < 0:
        raise InvalidParameterError("need reps >= 1 and warmup >= 0")
    results = []
    for idx, (label, spec0) in enumerate(entries):
        spec = replace(spec0, batch=batch) if batch else spec0
        in_seed = seed + 1000 * idx
        inp = new_tensor(spec.input_dims(), seed=in_seed)
        kers = new_tensor(spec.kernel_dims(), seed=in_seed + 1)
        pack = None
        pack_err = None
        try:
            pack = transform_kernels(kers, make_basis(tile, spec.kernel,
                                                      points))
        except WinofuseError as exc:
            pack_err = str(exc)

        for engine in engines:
            res = BenchResult(label=label, engine=engine, tile=tile,
                              r=r, workers=workers)
            try:
                if engine != "direct" and pack_err is not None:
                    raise InvalidParameterError(pack_err)
                cfg = EngineConfig(kind=engine, tile=tile, r=r,
                                   workers=workers, points=points) \
                    if engine != "direct" else None
                opnd = _engine_args(engine, kers, pack)
                for _ in range(warmup):
                    run_engine(engine, inp, opnd, spec, cfg)
                stats = None
                for _ in range(reps):
                    _, stats = run_engine(engine, inp, opnd, spec, cfg)
                    res.times_ms.append(stats.wall_s * 1e3)
                res.stats = stats
                res.median_ms = statistics.median(res.times_ms)
                res.min_ms = min(res.times_ms)
                res.flops = stats.flops
                res.tasks = stats.n_task
                res.workers = stats.workers
                if verify:
                    res.verify, res.max_rel_err = _verify_entry(
                        engine, spec, in_seed, tile, r, workers, points,
                        verify_batch, verify_full_batch)
            except WinofuseError as exc:
                res.error = str(exc)
                res.verify = "error"
            results.append(res)
    return results


def _verify_entry(engine, spec, in_seed, tile, r, workers, points,
                  verify_batch, full_batch):
    vspec = spec if full_batch else replace(
        spec, batch=min(verify_batch, spec.batch))
    vin = new_tensor(vspec.input_dims(), seed=in_seed + 2)
    vker = new_tensor(vspec.kernel_dims(), seed=in_seed + 1)
    ref, _ = conv_direct(vin, vker, vspec)
    if engine == "direct":
        return "pass", 0.0
    cfg = EngineConfig(kind=engine, tile=tile, r=r, workers=workers,
                       points=points)
    pack = transform_kernels(vker, make_basis(tile, vspec.kernel, points))
    got, _ = run_engine(engine, vin, pack, vspec, cfg)
    err = max_rel_error(got, ref)
    return ("pass" if err <= VERIFY_TOL else "fail"), err


def _row_values(res: BenchResult) -> dict:
    def num(x, digits=4):
        if x is None or (isinstance(x, float) and x != x):
            return None
        return round(float(x), digits)

    err = res.max_rel_err
    return {
        "label": res.label,
        "engine": res.engine,
        "T": res.tile,
        "R": res.r if res.engine == "fused" else 0,
        "workers": res.workers,
        "median_ms": num(res.median_ms),
        "min_ms": num(res.min_ms),
        "flops": res.flops,
        "tasks": res.tasks,
        "verify": res.verify if res.error is None else "error",
        "max_rel_err": None if err is None else float(f"{err:.6g}"),
    }


def emit_report(results, fmt: str = "table", path=None) -> str:
    """Render results as table/csv/json; write to path when given.

    CSV and JSON carry the same column values; the table adds a speedup
    column comparing each fused row against the best non-fused median
    for the same label.
    """
    if not results:
        raise InvalidParameterError("no results to report")
    if fmt == "csv":
        text = _emit_csv(results)
    elif fmt == "json":
        text = _emit_json(results)
    elif fmt == "table":
        text = _emit_table(results)
    else:
        raise InvalidParameterError(f"unknown report format {fmt!r}")
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _emit_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for res in results:
        vals = _row_values(res)
        w.writerow(["" if vals[c] is None else vals[c]
                    for c in CSV_COLUMNS])
    return buf.getvalue()


def _emit_json(results) -> str:
    rows = []
    for res in results:
        vals = _row_values(res)
        if res.error is not None:
            vals["error"] = res.error
        rows.append(vals)
    return json.dumps(rows, indent=2) + "\n"


def _speedups(results) -> dict:
    """Best non-fused median per label, for the table's speedup column."""
    best = {}
    for res in results:
        if res.engine != "fused" and res.error is None \
                and res.median_ms == res.median_ms:
            cur = best.get(res.label)
            if cur is None or res.median_ms < cur:
                best[res.label] = res.median_ms
    return best


def _emit_table(results) -> str:
    cols = CSV_COLUMNS + ["speedup"]
    best = _speedups(results)
    rows = []
    for res in results:
        vals = _row_values(res)
        speed = ""
        if res.engine == "fused" and res.error is None \
                and res.label in best and res.median_ms > 0:
            speed = f"{best[res.label] / res.median_ms:.2f}x"
        cells = []
        for c in CSV_COLUMNS:
            v = vals[c]
            cells.append("-" if v is None else str(v))
        cells.append(speed)
        if res.error is not None:
            cells[-1] = f"error: {res.error}"
        rows.append(cells)
    widths = [max(len(str(c)), *(len(r[i]) for r in rows))
              for i, c in enumerate(cols)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"
