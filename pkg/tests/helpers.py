"""Shared test oracles.

Everything here is computed independently of the library's compute
kernels: plain numpy slicing/einsum for correlations, Fractions for the
algebraic identity.  Tests freeze expected values against these.
"""

from fractions import Fraction

import numpy as np


def pad_explicit(data: np.ndarray, pad_lo: int, pad_hi: int) -> np.ndarray:
    """Zero-pad the two trailing (spatial) axes of a (B, C, D, W) array."""
    return np.pad(data, ((0, 0), (0, 0), (pad_lo, pad_hi), (pad_lo, pad_hi)))


def direct_conv_oracle(inp, kers, spec) -> np.ndarray:
    """Cross-correlation oracle in float64, built from shifted slices.

    Structured deliberately unlike the engines (no per-pixel loops, no
    tiling): output accumulates one (ky, kx) kernel tap at a time over
    channel-contracted slices of the explicitly padded input.
    """
    x = pad_explicit(inp.data.astype(np.float64), spec.pad_lo, spec.pad_hi)
    w = kers.data.astype(np.float64)
    d_out, w_out = spec.out_height, spec.out_width
    out = np.zeros((spec.batch, spec.out_channels, d_out, w_out), np.float64)
    for ky in range(spec.kernel):
        for kx in range(spec.kernel):
            patch = x[:, :, ky:ky + d_out, kx:kx + w_out]
            out += np.einsum("bcyx,oc->boyx", patch, w[:, :, ky, kx])
    return out


def correlate_valid_f64(tile: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Valid 2-D cross-correlation of one tile with one kernel, float64."""
    t = tile.shape[0]
    k = ker.shape[0]
    n = t - k + 1
    out = np.zeros((n, n), np.float64)
    x = tile.astype(np.float64)
    w = ker.astype(np.float64)
    for r in range(n):
        for s in range(n):
            out[r, s] = np.sum(x[r:r + k, s:s + k] * w)
    return out


def apply_basis_f32(tile: np.ndarray, ker: np.ndarray, basis) -> np.ndarray:
    """Evaluate the transform identity in float32 numpy arithmetic."""
    v = (basis.g @ ker.astype(np.float64) @ basis.g.T).astype(np.float32)
    u = basis.bt32 @ tile.astype(np.float32) @ basis.bt32.T
    return basis.at32 @ (u * v) @ basis.at32.T


def exact_identity_violations(basis):
    """Check the correctness identity on the full basis-vector grid.

    For a tile delta at (i, j) and a kernel delta at (a, b), the valid
    correlation is a delta at (i - a, j - b) when that lands on the
    output grid and zero otherwise.  All arithmetic in Fractions.
    Returns (cases_checked, violations).
    """
    t, k, tp = basis.tile, basis.kernel, basis.out
    at, bt, g = basis.at_exact, basis.bt_exact, basis.g_exact
    # The two-sided transforms of deltas are rank-one, so the identity
    # output factors into outer products of these T'-vectors.
    q = {}
    for i in range(t):
        for a in range(k):
            u = [bt[p][i] * g[p][a] for p in range(t)]
            q[i, a] = [sum(at[r][p] * u[p] for p in range(t))
                       for r in range(tp)]
    cases = violations = 0
    one, zero = Fraction(1), Fraction(0)
    for i in range(t):
        for j in range(t):
            for a in range(k):
                for b in range(k):
                    cases += 1
                    qa, qb = q[i, a], q[j, b]
                    ey, ex = i - a, j - b
                    good = all(
                        qa[r] * qb[s] == (one if (r == ey and s == ex)
                                          else zero)
                        for r in range(tp) for s in range(tp))
                    if not good:
                        violations += 1
    return cases, violations


def matmul_f32_reference(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Triple-loop float32 matmul, ascending reduction index."""
    m, c = lhs.shape
    n = rhs.shape[1]
    out = np.zeros((m, n), np.float32)
    for r in range(m):
        for j in range(n):
            acc = np.float32(0.0)
            for q in range(c):
                acc = np.float32(acc + np.float32(lhs[r, q] * rhs[q, j]))
            out[r, j] = acc
    return out
