"""Reference solvers used to check the crossbar engine."""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .fixedpoint import Fixed


def dense_solve(a: Fixed, b: Fixed) -> np.ndarray:
    """float64 solution of ``a x = b`` in value units.

    Backward error is around 1e-13 for the conditioning used here, far
    below a 16-bit ULP; :func:`rational_solve` cross-checks it.
    """
    return np.linalg.solve(a.to_float(), b.to_float())


def rational_solve(a: Fixed, b: Fixed) -> list:
    """Exact solution by Gaussian elimination over the rationals (small n)."""
    n = a.shape[0]
    sa = Fraction(1, 2 ** a.frac_bits) if a.frac_bits >= 0 else Fraction(2 ** -a.frac_bits)
    sb = Fraction(1, 2 ** b.frac_bits) if b.frac_bits >= 0 else Fraction(2 ** -b.frac_bits)
    m = [[Fraction(int(v)) * sa for v in row] + [Fraction(int(b.data[i])) * sb]
         for i, row in enumerate(a.data)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col] / p
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def quantize_like(x_exact, frac_bits) -> np.ndarray:
    """Round an exact solution onto the grid ``2**-frac_bits`` (half even)."""
    return np.rint(np.ldexp(np.asarray(x_exact, dtype=np.float64), frac_bits)).astype(np.int64)


def ulp_distance(x: Fixed, x_exact) -> int:
    """∞-norm distance in ULPs between ``x`` and the exact solution
    quantized onto the same grid."""
    ref = quantize_like(x_exact, x.frac_bits)
    return int(np.max(np.abs(x.data - ref), initial=0))


def _to_ints(d) -> np.ndarray:
    return np.vectorize(int, otypes=[object])(np.asarray(d))


def refined_solve(a: Fixed, b: Fixed, frac: int = 64, steps: int = 3) -> tuple[np.ndarray, int]:
    """High-precision solution as exact integers on the grid ``2**-frac``.

    A float64 solve followed by iterative refinement whose residual is
    computed exactly in Python integers.  Each step gains roughly
    ``52 - log2(cond)`` bits, so three steps reach ``frac`` = 64 for the
    conditioning used here.  Returns ``(x_int, frac)``.
    """
    if a.frac_bits < 0 or np.ndim(b.frac_bits):
        raise ValueError("needs a non-negative scalar matrix exponent and a scalar rhs exponent")
    a_i = _to_ints(a.data)
    b_i = _to_ints(b.data)
    a_f = a.to_float()
    # residual grid: b * 2**(frac + fa - fb) - A_int X, exact
    scale = frac + a.frac_bits - b.frac_bits
    b_s = b_i * (2 ** scale) if scale >= 0 else None
    if b_s is None:
        raise ValueError("frac too small for this rhs")
    x = _to_ints(np.zeros(b.data.shape, dtype=np.int64))
    for _ in range(steps):
        r = b_s - a_i.dot(x)  # units of 2**-(frac + fa)
        r_f = np.array([float(v) for v in np.ravel(r)]).reshape(r.shape)
        corr = np.linalg.solve(a_f, np.ldexp(r_f, -a.frac_bits))  # units of 2**-frac
        x = x + _to_ints(np.rint(corr))
    return x, frac


def round_exact(x_int: np.ndarray, frac: int, to_frac) -> np.ndarray:
    """Round-half-even of exact integers ``x_int * 2**-frac`` onto ``2**-to_frac``."""
    to = np.broadcast_to(np.asarray(to_frac), np.shape(x_int))
    out = np.empty(np.shape(x_int), dtype=np.int64)
    for idx, v in np.ndenumerate(x_int):
        s = frac - int(to[idx])
        if s <= 0:
            out[idx] = int(v) << -s
            continue
        q, rem = divmod(int(v), 1 << s)
        half = 1 << (s - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
        out[idx] = q
    return out


def exact_ulp_distance(x: Fixed, x_int: np.ndarray, frac: int) -> int:
    ref = round_exact(x_int, frac, x.frac_bits)
    return int(np.max(np.abs(x.data - ref), initial=0))
