"""Dense 4-D tensors and convolution layer descriptors.

Tensors are float32, C-order, with the base address aligned to a cache
line.  Layout is (batch, channel, rows, cols) throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError

CACHE_LINE = 64


def _aligned(shape, dtype, align, zeroed):
    """Allocate an ndarray whose first byte sits on an `align` boundary."""
    dtype = np.dtype(dtype)
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    alloc = np.zeros if zeroed else np.empty
    raw = alloc(nbytes + align, np.uint8)
    off = (-raw.ctypes.data) % align
    return raw[off:off + nbytes].view(dtype).reshape(shape)


def aligned_zeros(shape, dtype=np.float32, align=CACHE_LINE):
    return _aligned(shape, dtype, align, zeroed=True)


def aligned_empty(shape, dtype=np.float32, align=CACHE_LINE):
    return _aligned(shape, dtype, align, zeroed=False)


@dataclass(frozen=True)
class LayerSpec:
    """Shape of one convolution layer.

    Kernels are square (kernel x kernel) and applied as cross-correlation
    with unit stride.  pad_lo is the implicit zero border added before
    row/col 0, pad_hi the border after the last row/col.
    """

    batch: int
    in_channels: int
    out_channels: int
    height: int
    width: int
    kernel: int = 3
    pad_lo: int = 0
    pad_hi: int = 0

    def __post_init__(self):
        for name in ("batch", "in_channels", "out_channels",
                     "height", "width", "kernel"):
            if getattr(self, name) < 1:
                raise InvalidDimensionError(f"{name} must be >= 1")
        if self.pad_lo < 0 or self.pad_hi < 0:
            raise InvalidDimensionError("padding must be >= 0")
        if self.height + self.pad_lo + self.pad_hi < self.kernel:
            raise InvalidDimensionError("padded height smaller than kernel")
        if self.width + self.pad_lo + self.pad_hi < self.kernel:
            raise InvalidDimensionError("padded width smaller than kernel")

    @property
    def out_height(self) -> int:
        return self.height + self.pad_lo + self.pad_hi - self.kernel + 1

    @property
    def out_width(self) -> int:
        return self.width + self.pad_lo + self.pad_hi - self.kernel + 1

    def input_dims(self):
        return (self.batch, self.in_channels, self.height, self.width)

    def kernel_dims(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


def output_dims(spec: LayerSpec):
    """Spatial output extents (D', W') of a layer."""
    return (spec.out_height, spec.out_width)


def output_tensor_dims(spec: LayerSpec):
    """Full output tensor dims (batch, out_channels, D', W')."""
    return (spec.batch, spec.out_channels, spec.out_height, spec.out_width)


class Tensor4D:
    """A float32 tensor with four extents, stored contiguously.

    `data` is the 4-D ndarray view; `dims` the extent tuple.  The backing
    buffer is cache-line aligned so engine kernels never straddle a line
    at offset zero.
    """

    __slots__ = ("dims", "data")

    def __init__(self, data: np.ndarray):
        if data.ndim != 4:
            raise InvalidDimensionError("Tensor4D needs exactly 4 extents")
        if any(n < 1 for n in data.shape):
            raise InvalidDimensionError("extents must be >= 1")
        if data.dtype != np.float32 or not data.flags.c_contiguous:
            data = np.ascontiguousarray(data, np.float32)
        self.dims = tuple(int(n) for n in data.shape)
        self.data = data

    def flat_index(self, i0: int, i1: int, i2: int, i3: int) -> int:
        n0, n1, n2, n3 = self.dims
        for i, n in zip((i0, i1, i2, i3), self.dims):
            if not 0 <= i < n:
                raise InvalidDimensionError(f"index {i} out of range {n}")
        return ((i0 * n1 + i1) * n2 + i2) * n3 + i3

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def copy(self) -> "Tensor4D":
        out = aligned_empty(self.dims)
        out[...] = self.data
        return Tensor4D(out)


def new_tensor(dims, fill: float | None = 0.0, seed: int | None = None) -> Tensor4D:
    """Allocate a tensor; constant fill, or uniform [-1, 1) when seeded.

    Passing a seed overrides fill and is deterministic: the same seed
    always produces the same values for the same dims.
    """
    if len(dims) != 4 or any(int(n) < 1 for n in dims):
        raise InvalidDimensionError(f"bad dims {dims!r}")
    dims = tuple(int(n) for n in dims)
    if seed is not None:
        rng = np.random.default_rng(seed)
        buf = aligned_empty(dims)
        buf[...] = rng.uniform(-1.0, 1.0, size=dims).astype(np.float32)
        return Tensor4D(buf)
    buf = aligned_zeros(dims)
    if fill:
        buf[...] = np.float32(fill)
    return Tensor4D(buf)
