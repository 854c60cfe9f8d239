"""Typed transform stages built on the shared kernels.

The multiply stage works on position-major blocks: axis 0 is the tile
position p in [0, T*T), axis 1 the tile row within the block, axis 2 the
channel.  Keeping every engine on this one layout (and on the kernels in
`kernels`) is what makes their outputs bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as _k
from .basis import WinogradBasis
from .errors import ShapeMismatchError
from .tensor import LayerSpec, Tensor4D, aligned_empty
from .tiling import TilePlan


@dataclass(frozen=True)
class KernelPack:
    """Transformed kernels, ready for the multiply stage.

    data has shape (T*T, C, C'), float32, contiguous, cache-line
    aligned, read-only.  Element (p, c, c') is position p (row-major in
    the T x T transformed tile) of kernel (c', c) after the two-sided
    kernel transform, computed in float64 and rounded to float32 once.
    Workers share one pack read-only; nothing ever writes it back.
    """

    data: np.ndarray
    tile: int
    kernel_side: int
    c_in: int
    c_out: int

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


@dataclass
class LeftHandBlock:
    """Transformed input tiles for one task.

    data has shape (T*T, rows, C); only the first r_eff rows per
    position are meaningful (the final task of a layer is usually
    short).  During fused execution this wraps a view into a worker's
    scratch buffer rather than an allocation of its own.
    """

    data: np.ndarray
    r_eff: int

    @classmethod
    def empty(cls, tile: int, rows: int, c_in: int) -> "LeftHandBlock":
        return cls(data=aligned_empty((tile * tile, rows, c_in)),
                   r_eff=rows)


def transform_kernels(kers: Tensor4D, basis: WinogradBasis) -> KernelPack:
    """Apply g @ w @ g.T to every (c', c) kernel and pack position-major.

    One-time cost per layer; engines never pay for it on the timed path.
    """
    c_out, c_in, kh, kw = kers.dims
    if kh != basis.kernel or kw != basis.kernel:
        raise ShapeMismatchError(
            f"kernel dims {kers.dims} do not match basis K={basis.kernel}")
    t = basis.tile
    w64 = kers.data.astype(np.float64)
    u = basis.g @ w64 @ basis.g.T                 # (C', C, T, T)
    pos = u.transpose(2, 3, 1, 0).reshape(t * t, c_in, c_out)
    data = aligned_empty((t * t, c_in, c_out))
    data[...] = pos                               # one f64 -> f32 rounding
    data.setflags(write=False)
    return KernelPack(data=data, tile=t, kernel_side=basis.kernel,
                      c_in=c_in, c_out=c_out)


def _block_data(block) -> np.ndarray:
    return block.data if isinstance(block, LeftHandBlock) else block


def _check_tiles(pl: TilePlan, tiles: range) -> None:
    if tiles.step != 1 or tiles.start < 0 or tiles.stop > pl.n_tile \
            or tiles.start >= tiles.stop:
        raise ShapeMismatchError(
            f"tile range {tiles} invalid for {pl.n_tile} tiles")


def forward_transform_tiles(inp: Tensor4D, spec: LayerSpec, pl: TilePlan,
                            basis: WinogradBasis, tiles: range,
                            dst, row0: int = 0) -> None:
    """Gather + transform tiles [start, stop) into dst at rows row0+."""
    if spec != pl.spec:
        raise ShapeMismatchError("layer spec does not match the tile plan")
    _check_tiles(pl, tiles)
    if inp.dims != spec.input_dims():
        raise ShapeMismatchError(f"input dims {inp.dims} mismatch layer")
    t = pl.tile
    d = _block_data(dst)
    if d.shape[0] != t * t or d.shape[2] != spec.in_channels \
            or d.shape[1] < row0 + len(tiles):
        raise ShapeMismatchError(f"bad destination block {d.shape}")
    _k.forward_tiles(inp.data, basis.bt32, tiles.start, tiles.stop, row0,
                     d, pl.tiles_y, pl.tiles_x, t, pl.out, spec.pad_lo)


def multiply_block(lhs, pack: KernelPack, dst: np.ndarray,
                   rows: int | None = None) -> int:
    """dst[p, :rows] = lhs[p, :rows] @ pack.data[p] for every position.

    Accumulation runs over input channels in ascending order, in float32
    (the cross-engine equality contract).  Returns the useful flop
    count, 2 * rows * C * C' * T^2.
    """
    left = _block_data(lhs)
    if rows is None:
        rows = lhs.r_eff if isinstance(lhs, LeftHandBlock) else left.shape[1]
    t2 = pack.tile * pack.tile
    if left.shape[0] != t2 or left.shape[2] != pack.c_in \
            or left.shape[1] < rows:
        raise ShapeMismatchError(f"left block {left.shape} mismatch")
    if dst.shape[0] != t2 or dst.shape[2] != pack.c_out \
            or dst.shape[1] < rows:
        raise ShapeMismatchError(f"result block {dst.shape} mismatch")
    _k.multiply_positions(left, pack.data, dst, rows)
    return multiply_flops(rows, pack.c_in, pack.c_out, pack.tile)


def inverse_transform_tiles(results: np.ndarray, basis: WinogradBasis,
                            pl: TilePlan, tiles: range, out: Tensor4D,
                            row0: int = 0) -> None:
    """Output-transform rows of results and scatter them into out.

    For each tile r and channel c', the T x T matrix assembled from
    position p at (r, c') is reduced to a T' x T' block and written at
    the tile's output origin, clipped at the output edges.
    """
    _check_tiles(pl, tiles)
    t = pl.tile
    if results.shape[0] != t * t or results.shape[2] != pl.spec.out_channels \
            or results.shape[1] < row0 + len(tiles):
        raise ShapeMismatchError(f"bad result block {results.shape}")
    if out.dims != (pl.spec.batch, pl.spec.out_channels,
                    pl.spec.out_height, pl.spec.out_width):
        raise ShapeMismatchError(f"output dims {out.dims} mismatch layer")
    _k.inverse_tiles(results, basis.at32, tiles.start, tiles.stop, row0,
                     out.data, pl.tiles_y, pl.tiles_x, t, pl.out)


def multiply_flops(rows: int, c_in: int, c_out: int, tile: int) -> int:
    """Useful multiply-stage flops for a block of `rows` tiles."""
    return 2 * rows * c_in * c_out * tile * tile
