"""Transform bases for tile-wise fast correlation.

A basis for tile side T and square kernel side K consists of three small
matrices (at, bt, g) such that for any T x T data tile x and K x K
kernel w,

    at @ [(g @ w @ g.T) * (bt @ x @ bt.T)] @ at.T

equals the valid 2-D cross-correlation of x with w, a T' x T' block
with T' = T - K + 1.  No kernel flip is applied anywhere.

Matrices are built by Lagrange interpolation over T - 1 distinct finite
nodes plus the node at infinity, carried out in exact rational
arithmetic (fractions.Fraction) and only then converted to floats.  The
naming follows the usual convention: `at` is applied on the output
side (T' x T), `bt` on the data side (T x T), `g` on the kernel side
(T x K).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BasisConstructionError, InvalidParameterError

MIN_TILE = 4
MAX_TILE = 8

# Node progression shared by every tile size: each T takes the first
# T - 1 entries.  Small magnitudes and dyadic fractions keep the float
# matrices well conditioned and exactly representable.
_NODE_PROGRESSION = (
    Fraction(0), Fraction(1), Fraction(-1), Fraction(2), Fraction(-2),
    Fraction(1, 2), Fraction(-1, 2),
)


def default_points(tile: int) -> tuple[Fraction, ...]:
    """The T - 1 finite interpolation nodes used when none are given."""
    if not MIN_TILE <= tile <= MAX_TILE:
        raise InvalidParameterError(
            f"tile side must be in [{MIN_TILE}, {MAX_TILE}], got {tile}")
    return _NODE_PROGRESSION[:tile - 1]


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise BasisConstructionError(
        f"interpolation nodes must be exact rationals, got {x!r}")


def _poly_from_roots(roots) -> list[Fraction]:
    """Coefficients (low degree first) of the monic product of (x - r)."""
    coeffs = [Fraction(1)]
    for r in roots:
        nxt = [Fraction(0)] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i + 1] += c
            nxt[i] -= r * c
        coeffs = nxt
    return coeffs


def _to_f64(rows) -> np.ndarray:
    m = np.array([[float(v) for v in row] for row in rows], np.float64)
    m.setflags(write=False)
    return m


def _to_f32(m: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(m, np.float32)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class WinogradBasis:
    """Immutable transform basis for one (T, K) pair.

    Exact matrices are tuples of Fraction rows; `at`, `bt`, `g` are the
    float64 conversions, and `at32` / `bt32` float32 copies laid out for
    the engine kernels.
    """

    tile: int
    kernel: int
    out: int
    points: tuple[Fraction, ...]
    at_exact: tuple
    bt_exact: tuple
    g_exact: tuple
    at: np.ndarray = field(repr=False)
    bt: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    at32: np.ndarray = field(repr=False)
    bt32: np.ndarray = field(repr=False)

    def dump(self) -> str:
        def fmt(name, rows):
            body = "\n".join(
                "  [" + ", ".join(str(v) for v in row) + "]" for row in rows)
            return f"{name} ({len(rows)}x{len(rows[0])}):\n{body}"

        head = (f"tile T={self.tile}  kernel K={self.kernel}  "
                f"outputs T'={self.out}\n"
                f"nodes: {', '.join(str(p) for p in self.points)} and infinity")
        return "\n".join([head,
                          fmt("at", self.at_exact),
                          fmt("bt", self.bt_exact),
                          fmt("g", self.g_exact)])


def make_basis(tile: int, kernel: int = 3, points=None) -> WinogradBasis:
    """Build the (at, bt, g) basis for the given tile and kernel sides.

    `points` selects the finite interpolation nodes (ints, Fractions or
    strings like "1/2"); exactly T - 1 of them, all distinct.  Defaults
    to the built-in progression.
    """
    if kernel < 1:
        raise InvalidParameterError("kernel side must be >= 1")
    if not MIN_TILE <= tile <= MAX_TILE:
        raise InvalidParameterError(
            f"tile side must be in [{MIN_TILE}, {MAX_TILE}], got {tile}")
    if tile <= kernel:
        raise InvalidParameterError(
            f"tile side {tile} must exceed kernel side {kernel}")
    t_out = tile - kernel + 1

    if points is None:
        pts = default_points(tile)
    else:
        pts = tuple(_as_fraction(p) for p in points)
        if len(pts) != tile - 1:
            raise InvalidParameterError(
                f"need {tile - 1} nodes for T={tile}, got {len(pts)}")
        if len(set(pts)) != len(pts):
            raise BasisConstructionError(f"duplicate nodes in {pts}")

    n = len(pts)
    # Product of pairwise differences for each node; the Lagrange
    # denominator.  Sign of the first one is folded away so the leading
    # kernel row keeps its conventional orientation.
    denom = [Fraction(1)] * n
    for i in range(n):
        for j in range(n):
            if j != i:
                denom[i] *= pts[i] - pts[j]
    scale = list(denom)
    if scale[0] < 0:
        scale[0] = -scale[0]

    # Kernel side: row i evaluates the kernel polynomial at node i,
    # divided by the per-node scale; the last row picks the top
    # coefficient (the node at infinity).
    g_rows = [tuple(pts[i] ** j / scale[i] for j in range(kernel))
              for i in range(n)]
    g_rows.append(tuple(Fraction(int(j == kernel - 1)) for j in range(kernel)))

    # Data side: row i holds the coefficients of the Lagrange numerator
    # for node i (times scale_i / denom_i); the infinity row holds the
    # coefficients of prod_j (p_j - x).
    bt_rows = []
    for i in range(n):
        numer = _poly_from_roots([pts[j] for j in range(n) if j != i])
        ratio = scale[i] / denom[i]
        row = [ratio * c for c in numer] + [Fraction(0)] * (tile - n)
        bt_rows.append(tuple(row))
    full = _poly_from_roots(pts)
    sign = Fraction(-1 if n % 2 else 1)
    bt_rows.append(tuple(sign * c for c in full))

    # Output side: column i evaluates at node i; the infinity column is
    # the top output coefficient with the compensating sign.
    inf_sign = Fraction(-1 if (tile - 1) % 2 else 1)
    at_rows = []
    for j in range(t_out):
        row = [pts[i] ** j for i in range(n)]
        row.append(inf_sign if j == t_out - 1 else Fraction(0))
        at_rows.append(tuple(row))

    at = _to_f64(at_rows)
    bt = _to_f64(bt_rows)
    g = _to_f64(g_rows)
    return WinogradBasis(
        tile=tile, kernel=kernel, out=t_out, points=pts,
        at_exact=tuple(at_rows), bt_exact=tuple(bt_rows),
        g_exact=tuple(g_rows),
        at=at, bt=bt, g=g, at32=_to_f32(at), bt32=_to_f32(bt),
    )
