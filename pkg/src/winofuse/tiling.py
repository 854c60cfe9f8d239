"""Overlap-add tiling of a convolution layer.

The output plane is cut into disjoint T' x T' blocks (T' = T - K + 1);
each block is produced from a T x T input window that overlaps its
neighbours by K - 1 rows/cols.  Windows may hang over the padded border
or past the last row: gathers zero-fill, scatters clip.

Tiles are enumerated in a single flat index covering every (batch,
tile_row, tile_col) triple, row-major with batch slowest.  That order is
the contract the engines rely on when they carve the tile range into
tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeMismatchError
from .tensor import LayerSpec, Tensor4D


@dataclass(frozen=True)
class TileCoord:
    index: int
    batch: int
    tile_row: int
    tile_col: int


@dataclass(frozen=True)
class TilePlan:
    spec: LayerSpec
    tile: int          # T, input window side
    out: int           # T', output block side
    tiles_y: int
    tiles_x: int
    n_tile: int

    def encode(self, b: int, ty: int, tx: int) -> int:
        return (b * self.tiles_y + ty) * self.tiles_x + tx

    def coord(self, index: int) -> TileCoord:
        if not 0 <= index < self.n_tile:
            raise InvalidParameterError(
                f"tile index {index} out of range [0, {self.n_tile})")
        tx = index % self.tiles_x
        rest = index // self.tiles_x
        ty = rest % self.tiles_y
        b = rest // self.tiles_y
        return TileCoord(index, b, ty, tx)

    def input_origin(self, coord: TileCoord):
        """Top-left of the input window, in unpadded input coordinates.

        May be negative (window starts in the implicit zero border).
        """
        return (coord.tile_row * self.out - self.spec.pad_lo,
                coord.tile_col * self.out - self.spec.pad_lo)

    def output_origin(self, coord: TileCoord):
        return (coord.tile_row * self.out, coord.tile_col * self.out)


def plan(spec: LayerSpec, tile: int) -> TilePlan:
    if tile <= spec.kernel:
        raise InvalidParameterError(
            f"tile side {tile} must exceed kernel side {spec.kernel}")
    t_out = tile - spec.kernel + 1
    tiles_y = -(-spec.out_height // t_out)
    tiles_x = -(-spec.out_width // t_out)
    return TilePlan(spec=spec, tile=tile, out=t_out,
                    tiles_y=tiles_y, tiles_x=tiles_x,
                    n_tile=spec.batch * tiles_y * tiles_x)


def gather_input_tile(inp: Tensor4D, pl: TilePlan, coord: TileCoord,
                      channel: int) -> np.ndarray:
    """Copy one T x T input window for (tile, channel), zero-filled
    where the window leaves the real data."""
    if inp.dims != pl.spec.input_dims():
        raise ShapeMismatchError(
            f"input dims {inp.dims} do not match layer {pl.spec.input_dims()}")
    t = pl.tile
    oy, ox = pl.input_origin(coord)
    window = np.zeros((t, t), np.float32)
    y0, y1 = max(oy, 0), min(oy + t, pl.spec.height)
    x0, x1 = max(ox, 0), min(ox + t, pl.spec.width)
    if y0 < y1 and x0 < x1:
        window[y0 - oy:y1 - oy, x0 - ox:x1 - ox] = \
            inp.data[coord.batch, channel, y0:y1, x0:x1]
    return window


def scatter_output_tile(out: Tensor4D, pl: TilePlan, coord: TileCoord,
                        channel: int, block: np.ndarray) -> None:
    """Write one T' x T' output block, clipping rows/cols that fall past
    the layer's output extent."""
    if out.dims != (pl.spec.batch, pl.spec.out_channels,
                    pl.spec.out_height, pl.spec.out_width):
        raise ShapeMismatchError(
            f"output dims {out.dims} do not match layer")
    if block.shape != (pl.out, pl.out):
        raise ShapeMismatchError(
            f"block shape {block.shape} is not ({pl.out}, {pl.out})")
    oy, ox = pl.output_origin(coord)
    ny = min(pl.out, pl.spec.out_height - oy)
    nx = min(pl.out, pl.spec.out_width - ox)
    out.data[coord.batch, channel, oy:oy + ny, ox:ox + nx] = block[:ny, :nx]
