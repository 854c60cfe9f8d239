import numpy as np
import pytest

from helpers import direct_conv_oracle, matmul_f32_reference, pad_explicit
from winofuse import (KernelPack, LayerSpec, LeftHandBlock,
                      ShapeMismatchError, forward_transform_tiles,
                      inverse_transform_tiles, make_basis, multiply_block,
                      multiply_flops, new_tensor, tile_plan,
                      transform_kernels)


def make_pack(data: np.ndarray, tile: int) -> KernelPack:
    return KernelPack(data=np.ascontiguousarray(data, np.float32), tile=tile,
                      kernel_side=3, c_in=data.shape[1], c_out=data.shape[2])


def test_transform_kernels_zero_and_metadata():
    basis = make_basis(6)
    kers = new_tensor((5, 3, 3, 3))
    pack = transform_kernels(kers, basis)
    assert pack.data.shape == (36, 3, 5)
    assert (pack.tile, pack.kernel_side, pack.c_in, pack.c_out) == (6, 3, 3, 5)
    assert pack.data.dtype == np.float32
    assert not pack.data.flags.writeable
    assert pack.data.ctypes.data % 64 == 0
    assert pack.nbytes == 4 * 3 * 5 * 36
    assert not pack.data.any()


def test_transform_kernels_delta_is_g_outer_product():
    basis = make_basis(4)
    kers = new_tensor((1, 1, 3, 3))
    kers.data[0, 0, 0, 0] = 1.0
    pack = transform_kernels(kers, basis)
    want = np.outer(basis.g[:, 0], basis.g[:, 0]).astype(np.float32)
    assert np.array_equal(pack.data[:, 0, 0], want.reshape(-1))


def test_transform_kernels_matches_per_slice_oracle():
    basis = make_basis(6)
    kers = new_tensor((4, 4, 3, 3), seed=77)
    pack = transform_kernels(kers, basis)
    w64 = kers.data.astype(np.float64)
    for cp in range(4):
        for c in range(4):
            want = (basis.g @ w64[cp, c] @ basis.g.T).astype(np.float32)
            assert np.array_equal(pack.data[:, c, cp], want.reshape(-1))


def test_transform_kernels_rejects_wrong_side():
    with pytest.raises(ShapeMismatchError):
        transform_kernels(new_tensor((1, 1, 5, 5)), make_basis(7))


def test_forward_zero_and_delta_tile():
    basis = make_basis(4)
    spec = LayerSpec(1, 1, 1, 4, 4, kernel=3)
    pl = tile_plan(spec, 4)
    assert pl.n_tile == 1

    blk = LeftHandBlock.empty(4, 1, 1)
    blk.data[...] = 7.0
    inp = new_tensor(spec.input_dims())
    forward_transform_tiles(inp, spec, pl, basis, range(0, 1), blk)
    assert not blk.data.any()

    inp.data[0, 0, 0, 0] = 1.0
    forward_transform_tiles(inp, spec, pl, basis, range(0, 1), blk)
    want = np.outer(basis.bt32[:, 0], basis.bt32[:, 0]).reshape(-1)
    assert np.array_equal(blk.data[:, 0, 0], want)


def test_forward_matches_loop_oracle_with_row_offset():
    basis = make_basis(5)
    spec = LayerSpec(1, 2, 1, 9, 9, kernel=3, pad_lo=1, pad_hi=0)
    pl = tile_plan(spec, 5)
    assert pl.n_tile == 9
    inp = new_tensor(spec.input_dims(), seed=3)

    row0 = 2
    dst = np.full((25, pl.n_tile + row0, 2), 7.0, np.float32)
    forward_transform_tiles(inp, spec, pl, basis, range(0, pl.n_tile), dst,
                            row0=row0)
    assert np.all(dst[:, :row0, :] == 7.0)

    padded = pad_explicit(inp.data, 1, 0)
    big = np.zeros((1, 2, padded.shape[2] + 5, padded.shape[3] + 5),
                   np.float32)
    big[:, :, :padded.shape[2], :padded.shape[3]] = padded
    for idx in range(pl.n_tile):
        c = pl.coord(idx)
        py, px = c.tile_row * pl.out, c.tile_col * pl.out
        for ch in range(2):
            win = big[0, ch, py:py + 5, px:px + 5]
            tmp = matmul_f32_reference(basis.bt32, win)
            u = matmul_f32_reference(tmp, basis.bt32.T)
            assert np.array_equal(dst[:, row0 + idx, ch], u.reshape(-1))


def test_forward_validation():
    basis = make_basis(4)
    spec = LayerSpec(1, 1, 1, 4, 4, kernel=3)
    other = LayerSpec(1, 1, 1, 4, 4, kernel=3, pad_lo=1, pad_hi=1)
    pl = tile_plan(spec, 4)
    inp = new_tensor(spec.input_dims())
    blk = LeftHandBlock.empty(4, 1, 1)
    with pytest.raises(ShapeMismatchError):
        forward_transform_tiles(inp, other, pl, basis, range(0, 1), blk)
    with pytest.raises(ShapeMismatchError):
        forward_transform_tiles(inp, spec, pl, basis, range(0, 2), blk)
    with pytest.raises(ShapeMismatchError):
        forward_transform_tiles(inp, spec, pl, basis, range(1, 1), blk)
    with pytest.raises(ShapeMismatchError):
        forward_transform_tiles(new_tensor((1, 1, 5, 4)), spec, pl, basis,
                                range(0, 1), blk)
    wide = LeftHandBlock.empty(4, 1, 3)
    with pytest.raises(ShapeMismatchError):
        forward_transform_tiles(inp, spec, pl, basis, range(0, 1), wide)


def test_multiply_ones_and_flops():
    pack = make_pack(np.ones((16, 5, 2), np.float32), 4)
    left = np.ones((16, 3, 5), np.float32)
    dst = np.zeros((16, 3, 2), np.float32)
    flops = multiply_block(left, pack, dst)
    assert np.all(dst == 5.0)
    assert flops == 2 * 3 * 5 * 2 * 16 == multiply_flops(3, 5, 2, 4)


def test_multiply_scalar_channels():
    rng = np.random.default_rng(8)
    pk = rng.standard_normal((16, 1, 1)).astype(np.float32)
    lf = rng.standard_normal((16, 2, 1)).astype(np.float32)
    dst = np.zeros((16, 2, 1), np.float32)
    multiply_block(lf, make_pack(pk, 4), dst)
    assert np.array_equal(dst, lf * pk)


def test_multiply_matches_loop_reference_and_respects_r_eff():
    rng = np.random.default_rng(21)
    pk = make_pack(rng.standard_normal((16, 8, 8)).astype(np.float32), 4)
    blk = LeftHandBlock(
        data=rng.standard_normal((16, 6, 8)).astype(np.float32), r_eff=4)
    dst = np.full((16, 6, 8), 7.0, np.float32)
    flops = multiply_block(blk, pk, dst)
    assert flops == 2 * 4 * 8 * 8 * 16
    for p in range(16):
        want = matmul_f32_reference(blk.data[p, :4], pk.data[p])
        assert np.array_equal(dst[p, :4], want)
    assert np.all(dst[:, 4:, :] == 7.0)


def test_multiply_shape_errors():
    pack = make_pack(np.ones((16, 5, 2), np.float32), 4)
    with pytest.raises(ShapeMismatchError):
        multiply_block(np.ones((16, 3, 4), np.float32), pack,
                       np.zeros((16, 3, 2), np.float32))
    with pytest.raises(ShapeMismatchError):
        multiply_block(np.ones((16, 3, 5), np.float32), pack,
                       np.zeros((16, 3, 3), np.float32))
    with pytest.raises(ShapeMismatchError):
        multiply_block(np.ones((16, 3, 5), np.float32), pack,
                       np.zeros((16, 2, 2), np.float32), rows=3)
    with pytest.raises(ShapeMismatchError):
        multiply_block(np.ones((25, 3, 5), np.float32), pack,
                       np.zeros((16, 3, 2), np.float32))


def test_inverse_zero_and_split_ranges_agree():
    basis = make_basis(6)
    spec = LayerSpec(2, 1, 3, 11, 11, kernel=3, pad_lo=1, pad_hi=1)
    pl = tile_plan(spec, 6)
    rng = np.random.default_rng(4)
    res = rng.standard_normal((36, pl.n_tile, 3)).astype(np.float32)

    out = new_tensor((2, 3, 11, 11))
    inverse_transform_tiles(np.zeros_like(res), basis, pl,
                            range(0, pl.n_tile), out)
    assert not out.data.any()

    whole = new_tensor((2, 3, 11, 11))
    inverse_transform_tiles(res, basis, pl, range(0, pl.n_tile), whole)
    split = new_tensor((2, 3, 11, 11))
    cut = 7
    inverse_transform_tiles(res, basis, pl, range(0, cut), split)
    inverse_transform_tiles(res, basis, pl, range(cut, pl.n_tile), split,
                            row0=cut)
    assert np.array_equal(split.data, whole.data)


def test_inverse_validation():
    basis = make_basis(6)
    spec = LayerSpec(1, 1, 2, 11, 11, kernel=3, pad_lo=1, pad_hi=1)
    pl = tile_plan(spec, 6)
    good = np.zeros((36, pl.n_tile, 2), np.float32)
    with pytest.raises(ShapeMismatchError):
        inverse_transform_tiles(good[:, :, :1], basis, pl,
                                range(0, pl.n_tile), new_tensor((1, 2, 11, 11)))
    with pytest.raises(ShapeMismatchError):
        inverse_transform_tiles(good, basis, pl, range(0, pl.n_tile),
                                new_tensor((1, 2, 12, 11)))


def test_single_tile_pipeline_accuracy():
    basis = make_basis(7)
    spec = LayerSpec(1, 3, 2, 7, 7, kernel=3, pad_lo=1, pad_hi=1)
    pl = tile_plan(spec, 7)
    inp = new_tensor(spec.input_dims(), seed=31)
    kers = new_tensor(spec.kernel_dims(), seed=32)
    pack = transform_kernels(kers, basis)

    blk = LeftHandBlock.empty(7, pl.n_tile, 3)
    forward_transform_tiles(inp, spec, pl, basis, range(0, pl.n_tile), blk)
    res = np.zeros((49, pl.n_tile, 2), np.float32)
    multiply_block(blk, pack, res)
    got = new_tensor((1, 2, 7, 7))
    inverse_transform_tiles(res, basis, pl, range(0, pl.n_tile), got)

    ref = direct_conv_oracle(inp, kers, spec)
    rel = np.abs(got.data - ref).max() / np.abs(ref).max()
    assert rel <= 1e-4


def test_left_hand_block_empty():
    blk = LeftHandBlock.empty(5, 7, 3)
    assert blk.data.shape == (25, 7, 3)
    assert blk.data.dtype == np.float32
    assert blk.r_eff == 7
    assert blk.data.ctypes.data % 64 == 0
