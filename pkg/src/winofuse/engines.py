"""Convolution engines.

Three engines produce the same layer output:

- ``direct``: seven-loop cross-correlation with float64 accumulation,
  the correctness oracle.
- ``three_stage``: forward-transform every tile, multiply one tile
  position at a time, inverse-transform every tile.  Simple, but the
  transformed operands and products are full-size intermediates that
  round-trip through memory.
- ``fused``: the tile range is cut into tasks of R consecutive tiles.
  A worker runs all three stages for its task inside one small scratch
  buffer whose operand and result regions overlap (results reuse bytes
  of operands already consumed), so transformed data stays cache-local.

The staged and fused engines run the exact same float32 kernels with
identical per-tile operands, which makes their outputs bit-identical
for any worker count, task order, or R.  The direct engine differs by
design (float64 accumulation) and is compared with a tolerance.
"""

from __future__ import annotations

import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as _k
from .basis import make_basis
from .errors import (IntermediateAllocationError, InvalidParameterError,
                     ShapeMismatchError, WinofuseError)
from .tensor import (LayerSpec, Tensor4D, aligned_empty, new_tensor,
                     output_tensor_dims)
from .tiling import plan as tile_plan
from .transforms import KernelPack, multiply_flops, transform_kernels

ENGINE_KINDS = ("direct", "three_stage", "fused")
_FP32 = 4  # bytes per element


@dataclass
class EngineConfig:
    """Engine selection and tuning knobs.

    workers = 0 picks one worker per detected core.  instrumented turns
    on per-task accounting and scratch overlap checking in the fused
    engine (slower; for validation runs).  l2_budget_bytes, when set,
    adds a warning to the stats if the fused scratch exceeds it.
    """

    kind: str = "fused"
    tile: int = 7
    r: int = 24
    workers: int = 0
    points: tuple | None = None
    instrumented: bool = False
    l2_budget_bytes: int | None = None

    def __post_init__(self):
        if self.kind not in ENGINE_KINDS:
            raise InvalidParameterError(f"unknown engine kind {self.kind!r}")
        if self.kind != "direct" and not 4 <= self.tile <= 8:
            raise InvalidParameterError(
                f"tile side must be in [4, 8], got {self.tile}")
        if self.r < 1:
            raise InvalidParameterError("tiles per task (r) must be >= 1")
        if self.workers < 0:
            raise InvalidParameterError("workers must be >= 0 (0 = auto)")

    def resolved_workers(self, cap: int | None = None) -> int:
        w = self.workers or os.cpu_count() or 1
        if cap is not None:
            w = min(w, cap)
        return max(w, 1)


@dataclass
class ConvStats:
    engine: str
    wall_s: float = 0.0
    flops: int = 0
    n_tile: int = 0
    n_task: int = 0
    r: int = 0
    r_eff_last: int = 0
    workers: int = 1
    intermediate_bytes: int = 0
    scratch_bytes: int = 0
    phase_s: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    overlap_violations: int | None = None
    task_flops: list | None = None
    task_trace: list | None = None


@dataclass(frozen=True)
class BufferLayout:
    """Byte layout of one shared scratch buffer.

    With P = tile * tile positions, operand slots hold s_l = 4*R*C bytes
    and result slots s_r = 4*R*C' bytes.  Result slot p (0-based) starts
    at p * s_r from the base; operand slot p starts at
    capacity - (P - p) * s_l, i.e. operands are packed against the end.
    Writing result p then only ever lands below operand slot p, reusing
    bytes of operands that earlier positions already consumed.
    """

    r: int
    c_in: int
    c_out: int
    tile: int
    s_l: int
    s_r: int
    s_max: int
    s_min: int
    capacity: int
    left_offsets: tuple
    result_offsets: tuple

    def left_offset(self, i: int) -> int:
        """Byte offset of operand slot i, 1-based i in [1, T^2]."""
        return self.left_offsets[i - 1]

    def result_offset(self, i: int) -> int:
        """Byte offset of result slot i, 1-based i in [1, T^2]."""
        return self.result_offsets[i - 1]

    def __iter__(self):
        # Unpacks as (capacity, left_offsets, result_offsets).
        return iter((self.capacity, self.left_offsets, self.result_offsets))


def buffer_layout(r: int, c_in: int, c_out: int, tile: int) -> BufferLayout:
    if min(r, c_in, c_out, tile) < 1:
        raise InvalidParameterError("layout parameters must all be >= 1")
    positions = tile * tile
    s_l = _FP32 * r * c_in
    s_r = _FP32 * r * c_out
    s_max = max(s_l, s_r)
    s_min = min(s_l, s_r)
    capacity = positions * s_max + s_min
    result_offsets = tuple(p * s_r for p in range(positions))
    left_offsets = tuple(capacity - (positions - p) * s_l
                         for p in range(positions))
    for p in range(positions):
        if result_offsets[p] + s_r > left_offsets[p]:
            raise WinofuseError("scratch layout overlap (internal error)")
    return BufferLayout(r=r, c_in=c_in, c_out=c_out, tile=tile,
                        s_l=s_l, s_r=s_r, s_max=s_max, s_min=s_min,
                        capacity=capacity, left_offsets=left_offsets,
                        result_offsets=result_offsets)


class SharedBuffer:
    """One worker's scratch: overlapping views over a flat allocation.

    `left` (P, R, C) and `result` (P, R, C') alias each other by design;
    the layout guarantees result writes never touch operands that have
    not been consumed yet.
    """

    def __init__(self, layout: BufferLayout):
        self.layout = layout
        self.flat = aligned_empty((layout.capacity // _FP32,), np.float32)
        p2 = layout.tile * layout.tile
        l0 = layout.left_offsets[0] // _FP32
        self.left = self.flat[l0:l0 + p2 * layout.r * layout.c_in] \
            .reshape(p2, layout.r, layout.c_in)
        self.result = self.flat[:p2 * layout.r * layout.c_out] \
            .reshape(p2, layout.r, layout.c_out)


def _check_input(inp: Tensor4D, spec: LayerSpec) -> None:
    if inp.dims != spec.input_dims():
        raise ShapeMismatchError(
            f"input dims {inp.dims} do not match layer {spec.input_dims()}")


def _resolve_pack(kers, spec: LayerSpec, basis) -> KernelPack:
    if isinstance(kers, KernelPack):
        if (kers.tile != basis.tile or kers.kernel_side != spec.kernel
                or kers.c_in != spec.in_channels
                or kers.c_out != spec.out_channels):
            raise ShapeMismatchError(
                f"kernel pack (T={kers.tile}, K={kers.kernel_side}, "
                f"C={kers.c_in}, C'={kers.c_out}) does not match layer/config")
        return kers
    if isinstance(kers, Tensor4D):
        if kers.dims != spec.kernel_dims():
            raise ShapeMismatchError(
                f"kernel dims {kers.dims} do not match {spec.kernel_dims()}")
        return transform_kernels(kers, basis)
    raise ShapeMismatchError(f"cannot use {type(kers).__name__} as kernels")


def _split_even(n: int, parts: int):
    """Split range(n) into <= parts contiguous chunks of near-equal size."""
    parts = max(1, min(parts, n))
    step, extra = divmod(n, parts)
    spans = []
    start = 0
    for i in range(parts):
        stop = start + step + (1 if i < extra else 0)
        spans.append((start, stop))
        start = stop
    return spans


def conv_direct(inp: Tensor4D, kers: Tensor4D, spec: LayerSpec,
                config: EngineConfig | None = None):
    """Oracle engine.  Ignores tiling knobs; single threaded."""
    if not isinstance(kers, Tensor4D):
        raise ShapeMismatchError("direct engine needs untransformed kernels")
    _check_input(inp, spec)
    if kers.dims != spec.kernel_dims():
        raise ShapeMismatchError(
            f"kernel dims {kers.dims} do not match {spec.kernel_dims()}")
    out = new_tensor(output_tensor_dims(spec))
    _k.direct_conv(np.zeros((1, 1, 1, 1), np.float32),
                   np.zeros((1, 1, 1, 1), np.float32),
                   np.zeros((1, 1, 1, 1), np.float32), 0)
    t0 = time.perf_counter()
    _k.direct_conv(inp.data, kers.data, out.data, spec.pad_lo)
    wall = time.perf_counter() - t0
    flops = (2 * spec.batch * spec.out_channels * spec.out_height
             * spec.out_width * spec.in_channels * spec.kernel * spec.kernel)
    return out, ConvStats(engine="direct", wall_s=wall, flops=flops)


def conv_three_stage(inp: Tensor4D, kers, spec: LayerSpec,
                     config: EngineConfig | None = None):
    """Staged engine with full-size transformed intermediates."""
    cfg = config or EngineConfig(kind="three_stage")
    basis = make_basis(cfg.tile, spec.kernel, cfg.points)
    _check_input(inp, spec)
    pack = _resolve_pack(kers, spec, basis)
    pl = tile_plan(spec, cfg.tile)
    t2 = cfg.tile * cfg.tile
    n_tile = pl.n_tile
    workers = cfg.resolved_workers(n_tile)
    _k.warmup(cfg.tile, spec.kernel)
    out = new_tensor(output_tensor_dims(spec))

    # Both stage intermediates follow the layer, not the cache:
    # 4 * n_tile * (C + C') * T^2 bytes.
    inter_bytes = _FP32 * t2 * n_tile * (spec.in_channels + spec.out_channels)
    wall0 = time.perf_counter()
    try:
        lhs = aligned_empty((t2, n_tile, spec.in_channels))
        res = aligned_empty((t2, n_tile, spec.out_channels))
    except MemoryError as exc:
        raise IntermediateAllocationError(
            inter_bytes, "staged transform intermediates") from exc

    chunks = _split_even(n_tile, workers)
    phase = {}
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        tic = time.perf_counter()
        if pool:
            futs = [pool.submit(_k.forward_tiles, inp.data, basis.bt32,
                                a, b, a, lhs, pl.tiles_y, pl.tiles_x,
                                cfg.tile, pl.out, spec.pad_lo)
                    for a, b in chunks]
            for f in futs:
                f.result()
        else:
            _k.forward_tiles(inp.data, basis.bt32, 0, n_tile, 0, lhs,
                             pl.tiles_y, pl.tiles_x, cfg.tile, pl.out,
                             spec.pad_lo)
        phase["forward"] = time.perf_counter() - tic

        # One tile position at a time: each (C x C') operand stays
        # resident while every tile row is multiplied through it.
        tic = time.perf_counter()
        for p in range(t2):
            if pool:
                futs = [pool.submit(_k.matmul_rows, lhs[p, a:b],
                                    pack.data[p], res[p, a:b], b - a)
                        for a, b in chunks]
                for f in futs:
                    f.result()
            else:
                _k.matmul_rows(lhs[p], pack.data[p], res[p], n_tile)
        phase["multiply"] = time.perf_counter() - tic

        tic = time.perf_counter()
        if pool:
            futs = [pool.submit(_k.inverse_tiles, res, basis.at32, a, b, a,
                                out.data, pl.tiles_y, pl.tiles_x,
                                cfg.tile, pl.out)
                    for a, b in chunks]
            for f in futs:
                f.result()
        else:
            _k.inverse_tiles(res, basis.at32, 0, n_tile, 0, out.data,
                             pl.tiles_y, pl.tiles_x, cfg.tile, pl.out)
        phase["inverse"] = time.perf_counter() - tic
    finally:
        if pool:
            pool.shutdown(wait=True, cancel_futures=True)
    wall = time.perf_counter() - wall0

    stats = ConvStats(engine="three_stage", wall_s=wall,
                      flops=multiply_flops(n_tile, spec.in_channels,
                                           spec.out_channels, cfg.tile),
                      n_tile=n_tile, workers=workers,
                      intermediate_bytes=inter_bytes,
                      phase_s=phase)
    return out, stats


def conv_fused(inp: Tensor4D, pack: KernelPack, spec: LayerSpec,
               config: EngineConfig | None = None, *,
               task_order=None):
    """Cache-fused engine: per-task forward/multiply/inverse in shared
    scratch buffers.

    Takes a prebuilt KernelPack only: the kernel transform is a one-time
    cost that stays outside this engine entirely.  task_order, when
    given, must be a permutation of range(n_task) and fixes the order in
    which workers pick up tasks (tasks write disjoint output tiles, so
    any order yields the identical output).
    """
    cfg = config or EngineConfig(kind="fused")
    if not isinstance(pack, KernelPack):
        raise ShapeMismatchError(
            "fused engine needs a prebuilt KernelPack "
            "(see transform_kernels)")
    basis = make_basis(cfg.tile, spec.kernel, cfg.points)
    _check_input(inp, spec)
    pack = _resolve_pack(pack, spec, basis)
    pl = tile_plan(spec, cfg.tile)
    t2 = cfg.tile * cfg.tile
    n_tile = pl.n_tile
    n_task = -(-n_tile // cfg.r)
    workers = cfg.resolved_workers(n_task)

    if task_order is None:
        order = list(range(n_task))
    else:
        order = [int(i) for i in task_order]
        if sorted(order) != list(range(n_task)):
            raise InvalidParameterError(
                f"task_order must be a permutation of range({n_task})")

    layout = buffer_layout(cfg.r, spec.in_channels, spec.out_channels,
                           cfg.tile)
    warnings = []
    if cfg.l2_budget_bytes and layout.capacity > cfg.l2_budget_bytes:
        warnings.append(
            f"scratch buffer {layout.capacity} B exceeds the configured "
            f"L2 budget {cfg.l2_budget_bytes} B; lower R")

    _k.warmup(cfg.tile, spec.kernel)
    out = new_tensor(output_tensor_dims(spec))
    buffers = [SharedBuffer(layout) for _ in range(workers)]

    inp_d, out_d, pack_d = inp.data, out.data, pack.data
    bt32, at32 = basis.bt32, basis.at32
    cursor = [0]
    lock = threading.Lock()
    phase_acc = [[0.0, 0.0, 0.0] for _ in range(workers)]
    instrumented = cfg.instrumented
    task_flops = [0] * n_task if instrumented else None
    trace = [] if instrumented else None
    violations = [0]

    def run_task(idx: int, buf: SharedBuffer, acc) -> None:
        lo = idx * cfg.r
        hi = min(lo + cfg.r, n_tile)
        reff = hi - lo
        tic = time.perf_counter()
        _k.forward_tiles(inp_d, bt32, lo, hi, 0, buf.left,
                         pl.tiles_y, pl.tiles_x, cfg.tile, pl.out,
                         spec.pad_lo)
        acc[0] += time.perf_counter() - tic
        if instrumented:
            snap = buf.left.copy()
            bad = 0
            tic = time.perf_counter()
            for p in range(t2):
                _k.matmul_rows(buf.left[p], pack_d[p], buf.result[p], reff)
                if p + 1 < t2 and not np.array_equal(snap[p + 1:],
                                                     buf.left[p + 1:]):
                    bad += 1
            acc[1] += time.perf_counter() - tic
            task_flops[idx] = multiply_flops(reff, spec.in_channels,
                                             spec.out_channels, cfg.tile)
            if bad:
                with lock:
                    violations[0] += bad
        else:
            tic = time.perf_counter()
            _k.multiply_positions(buf.left, pack_d, buf.result, reff)
            acc[1] += time.perf_counter() - tic
        tic = time.perf_counter()
        _k.inverse_tiles(buf.result, at32, lo, hi, 0, out_d,
                         pl.tiles_y, pl.tiles_x, cfg.tile, pl.out)
        acc[2] += time.perf_counter() - tic

    def worker(wid: int) -> None:
        buf = buffers[wid]
        acc = phase_acc[wid]
        while True:
            with lock:
                pos = cursor[0]
                if pos >= n_task:
                    break
                cursor[0] = pos + 1
                if instrumented:
                    trace.append((order[pos], wid))
            run_task(order[pos], buf, acc)

    wall0 = time.perf_counter()
    if workers == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(w,))
                   for w in range(workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    wall = time.perf_counter() - wall0

    stats = ConvStats(
        engine="fused", wall_s=wall,
        flops=multiply_flops(n_tile, spec.in_channels, spec.out_channels,
                             cfg.tile),
        n_tile=n_tile, n_task=n_task, r=cfg.r,
        r_eff_last=n_tile - (n_task - 1) * cfg.r,
        workers=workers, scratch_bytes=workers * layout.capacity,
        phase_s={"forward": sum(a[0] for a in phase_acc),
                 "multiply": sum(a[1] for a in phase_acc),
                 "inverse": sum(a[2] for a in phase_acc)},
        warnings=warnings,
        overlap_violations=violations[0] if instrumented else None,
        task_flops=task_flops, task_trace=trace)
    return out, stats


def run_engine(kind: str, inp: Tensor4D, kers, spec: LayerSpec,
               config: EngineConfig | None = None, **kw):
    if kind == "direct":
        return conv_direct(inp, kers, spec, config)
    if kind == "three_stage":
        return conv_three_stage(inp, kers, spec, config)
    if kind == "fused":
        return conv_fused(inp, kers, spec, config, **kw)
    raise InvalidParameterError(f"unknown engine kind {kind!r}")
