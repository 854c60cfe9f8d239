"""Numba kernels shared by every engine.

All float32 arithmetic here follows one contract: channel reductions run
in ascending index order, products are not contracted into FMAs
(fastmath stays off), and each output element is stored exactly once.
Because the staged and the fused engines call these same kernels with
identical per-tile operands, their outputs agree bit for bit no matter
how work is split across threads.

Kernels are compiled nogil so worker threads overlap for real, and
cached so repeated runs skip JIT cost.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(nogil=True, cache=True)


@njit(**_JIT)
def direct_conv(inp, ker, out, pad_lo):
    """Seven-loop cross-correlation; float64 accumulation, one f32 store.

    inp (B, C, D, W), ker (C', C, K, K), out (B, C', D', W'), all f32.
    """
    n_b, n_c, d, w = inp.shape
    n_cp = ker.shape[0]
    k = ker.shape[2]
    d_out = out.shape[2]
    w_out = out.shape[3]
    for b in range(n_b):
        for cp in range(n_cp):
            for y in range(d_out):
                for x in range(w_out):
                    acc = 0.0
                    for c in range(n_c):
                        for ky in range(k):
                            yy = y + ky - pad_lo
                            if yy < 0 or yy >= d:
                                continue
                            for kx in range(k):
                                xx = x + kx - pad_lo
                                if xx < 0 or xx >= w:
                                    continue
                                acc += (np.float64(inp[b, c, yy, xx])
                                        * np.float64(ker[cp, c, ky, kx]))
                    out[b, cp, y, x] = np.float32(acc)


@njit(**_JIT)
def forward_tiles(inp, btm, t0, t1, row0, dst,
                  tiles_y, tiles_x, t, t_out, pad_lo):
    """Gather + data transform for tiles [t0, t1), every input channel.

    Windows are read straight from inp (b, c, D, W) with zero fill
    outside the real data, transformed as btm @ win @ btm.T, and written
    scattered over the leading position axis of dst (t*t, rows, C) at
    row row0 + (i - t0).
    """
    n_c = inp.shape[1]
    d = inp.shape[2]
    w = inp.shape[3]
    win = np.empty((t, t), np.float32)
    tmp = np.empty((t, t), np.float32)
    u = np.empty((t, t), np.float32)
    for i in range(t0, t1):
        tx = i % tiles_x
        rest = i // tiles_x
        ty = rest % tiles_y
        b = rest // tiles_y
        oy = ty * t_out - pad_lo
        ox = tx * t_out - pad_lo
        y0 = max(oy, 0)
        y1 = min(oy + t, d)
        x0 = max(ox, 0)
        x1 = min(ox + t, w)
        row = row0 + (i - t0)
        for c in range(n_c):
            for yy in range(t):
                for xx in range(t):
                    win[yy, xx] = 0.0
            for yy in range(y0, y1):
                for xx in range(x0, x1):
                    win[yy - oy, xx - ox] = inp[b, c, yy, xx]
            for r in range(t):
                for s in range(t):
                    acc = np.float32(0.0)
                    for q in range(t):
                        acc += btm[r, q] * win[q, s]
                    tmp[r, s] = acc
            for r in range(t):
                for s in range(t):
                    acc = np.float32(0.0)
                    for q in range(t):
                        acc += tmp[r, q] * btm[s, q]
                    u[r, s] = acc
            for p in range(t * t):
                dst[p, row, c] = u[p // t, p % t]


@njit(**_JIT)
def inverse_tiles(res, atm, t0, t1, row0, out, tiles_y, tiles_x, t, t_out):
    """Output transform + clipped scatter for tiles [t0, t1).

    res (t*t, rows, C') holds transformed products at row
    row0 + (i - t0); atm is the (T', T) output-side matrix; out is the
    (B, C', D', W') tensor.  Blocks extending past D'/W' are clipped.
    """
    n_cp = res.shape[2]
    d_out = out.shape[2]
    w_out = out.shape[3]
    m = np.empty((t, t), np.float32)
    tmp = np.empty((t_out, t), np.float32)
    v = np.empty((t_out, t_out), np.float32)
    for i in range(t0, t1):
        tx = i % tiles_x
        rest = i // tiles_x
        ty = rest % tiles_y
        b = rest // tiles_y
        oy = ty * t_out
        ox = tx * t_out
        ny = min(t_out, d_out - oy)
        nx = min(t_out, w_out - ox)
        row = row0 + (i - t0)
        for cp in range(n_cp):
            for p in range(t * t):
                m[p // t, p % t] = res[p, row, cp]
            for r in range(t_out):
                for s in range(t):
                    acc = np.float32(0.0)
                    for q in range(t):
                        acc += atm[r, q] * m[q, s]
                    tmp[r, s] = acc
            for r in range(ny):
                for s in range(nx):
                    acc = np.float32(0.0)
                    for q in range(t):
                        acc += tmp[r, q] * atm[s, q]
                    out[b, cp, oy + r, ox + s] = acc


@njit(**_JIT)
def matmul_rows(lhs, rhs, dst, m_rows):
    """dst[r] = lhs[r] @ rhs for r < m_rows, ascending-k accumulation.

    lhs (M, C), rhs (C, N), dst (M, N), all f32.  The row copy and the
    local accumulator keep the inner loop free of aliasing assumptions
    so it vectorizes, without changing the summation order.
    """
    n_c = lhs.shape[1]
    n = rhs.shape[1]
    row = np.empty(n_c, np.float32)
    acc = np.empty(n, np.float32)
    for r in range(m_rows):
        for c in range(n_c):
            row[c] = lhs[r, c]
        for j in range(n):
            acc[j] = 0.0
        for c in range(n_c):
            a = row[c]
            for j in range(n):
                acc[j] += a * rhs[c, j]
        for j in range(n):
            dst[r, j] = acc[j]


@njit(**_JIT)
def multiply_positions(left, pack, res, r_eff):
    """Per-position row-blocked products: res[p] = left[p] @ pack[p].

    left (P, R, C), pack (P, C, C'), res (P, R, C'); only the first
    r_eff rows of each position are touched.  left and res may be
    overlapping views of one buffer: position p's result region never
    overlaps position p's operand region, and operands of later
    positions are only overwritten after they are consumed.
    """
    n_pos = pack.shape[0]
    n_c = pack.shape[1]
    n = pack.shape[2]
    row = np.empty(n_c, np.float32)
    acc = np.empty(n, np.float32)
    for p in range(n_pos):
        for r in range(r_eff):
            for c in range(n_c):
                row[c] = left[p, r, c]
            for j in range(n):
                acc[j] = 0.0
            for c in range(n_c):
                a = row[c]
                for j in range(n):
                    acc[j] += a * pack[p, c, j]
            for j in range(n):
                res[p, r, j] = acc[j]


def warmup(t: int, kernel: int) -> None:
    """Force compilation of every kernel for one (T, K) shape family.

    Engines call this before spawning workers so JIT time never lands
    inside a measured or multi-threaded region.
    """
    t_out = t - kernel + 1
    inp = np.zeros((1, 1, t, t), np.float32)
    ker = np.zeros((1, 1, kernel, kernel), np.float32)
    out = np.zeros((1, 1, t_out, t_out), np.float32)
    direct_conv(inp, ker, out, 0)
    btm = np.zeros((t, t), np.float32)
    atm = np.zeros((t_out, t), np.float32)
    blk = np.zeros((t * t, 1, 1), np.float32)
    forward_tiles(inp, btm, 0, 1, 0, blk, 1, 1, t, t_out, 0)
    inverse_tiles(blk, atm, 0, 1, 0, out, 1, 1, t, t_out)
    pack = np.zeros((t * t, 1, 1), np.float32)
    matmul_rows(blk[0], pack[0], blk[0], 1)
    multiply_positions(blk, pack, blk, 1)
