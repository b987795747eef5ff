"""Behavioral models of VMM arrays and INV banks.

The analog parts are idealised: a VMM array returns the exact integer
product of its sliced contents, and an INV bank solves its stored system
with a dense LU and then reads the answer through an ``r_adc``-bit ADC.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import CapacityError, NonConvergenceError
from .fixedpoint import Fixed, QuantSpec, bit_slice, int_matmul, rne_rshift

RCOND_MIN = 1e-13


@dataclass(frozen=True)
class AreaTable:
    """Component areas in mm^2 (28 nm)."""

    adc: float = 0.00236
    dac: float = 0.00068
    reram_vmm: float = 0.0001  # one 256x256 array
    reram_inv: float = 0.0003  # three arrays per INV crossbar
    opamp: float = 0.0128
    ir: float = 0.004
    or_: float = 0.002
    act: float = 0.0006
    shift_add: float = 0.00174
    mul: float = 0.0006
    edram: float = 0.898
    bus: float = 0.218
    hyper_transport: float = 22.9

    @classmethod
    def zeros(cls) -> "AreaTable":
        return cls(**{k: 0.0 for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ArchConfig:
    s: int = 256
    inv_per_tile: int = 16
    vmm_per_tile: int = 448
    tiles: int = 22
    cell_bits: int = 4
    area_table: AreaTable = field(default_factory=AreaTable)

    def __post_init__(self):
        for name in ("s", "inv_per_tile", "vmm_per_tile", "tiles", "cell_bits"):
            if getattr(self, name) < 1:
                raise ValueError(f"ArchConfig.{name} must be >= 1")

    @property
    def vmm_per_subtile(self) -> int:
        return self.vmm_per_tile // self.inv_per_tile


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


# ---------------------------------------------------------------------------
# VMM arrays


class VmmArray:
    """A quantized matrix stored as ``r_c``-bit cell slices on a grid of
    ``s x s`` crossbars.  Immutable once programmed."""

    def __init__(self, mat: Fixed, spec: QuantSpec | None = None, s: int = 256):
        self.spec = spec or QuantSpec()
        self.s = s
        self.stored = mat
        self.stack = bit_slice(mat, self.spec.r_c)
        rows, cols = mat.shape
        self.grid = (_ceil(rows, s), _ceil(cols, s))

    @property
    def shape(self):
        return self.stored.shape

    @property
    def n_crossbars(self) -> int:
        """Physical crossbars, one per tile of the grid and cell slice."""
        return self.grid[0] * self.grid[1] * len(self.stack)

    def _tile_product(self, slice_mat: np.ndarray, x: np.ndarray) -> np.ndarray:
        # each s x s block computes a partial product; column blocks sum
        rows, cols = slice_mat.shape
        out = np.zeros((rows,) + x.shape[1:], dtype=np.int64)
        for i in range(0, rows, self.s):
            for j in range(0, cols, self.s):
                out[i:i + self.s] += int_matmul(slice_mat[i:i + self.s, j:j + self.s], x[j:j + self.s])
        return out


def vmm_mul(arr: VmmArray, v: Fixed) -> tuple[Fixed, int]:
    """Exact product of the stored matrix with ``v``.

    The input is fed in ``r_dac``-bit digits and every cell slice contributes
    a partial product; both are recombined by shift-and-add, so the result is
    bit-exact.  Returns the product and the cycle count ``ceil(bits/r_dac)``.
    """
    if v.shape[0] != arr.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {arr.shape} vs vector {v.shape}")
    spec = arr.spec
    in_stack = bit_slice(v, spec.r_dac)
    acc = None
    for i, digit in enumerate(in_stack.slices):
        for j, cells in enumerate(arr.stack.slices):
            p = arr._tile_product(cells, digit) << (i * spec.r_dac + j * spec.r_c)
            acc = p if acc is None else acc + p
    width = int(np.max(np.abs(acc), initial=0)).bit_length() + 1
    out = Fixed(acc, max(width, 1), arr.stored.frac_bits + v.frac_bits)
    return out, vmm_cycles(v.bits, spec)


def vmm_cycles(in_bits: int, spec: QuantSpec) -> int:
    return _ceil(in_bits, spec.r_dac)


# ---------------------------------------------------------------------------
# INV banks


class InvBank:
    """The high part of a matrix programmed into INV crossbars.

    ``a_high`` holds the integer matrix the bank solves against: ``A_H`` in
    plain mode, ``A1_H @ A2_H`` in fused mode (the factors are kept in
    ``factors``).  ``frac_bits`` is the scaling of ``a_high``.

    ``noise`` adds uniform noise of that many ADC LSBs (peak to peak) to
    every read; it is drawn from a generator seeded with ``seed``.
    """

    def __init__(self, a_high: np.ndarray, frac_bits: int, spec: QuantSpec | None = None,
                 *, mode: str = "plain", factors: tuple | None = None, a_low: np.ndarray | None = None,
                 low_frac_bits: int | None = None, s: int = 256, noise: float = 0.0, seed: int = 0):
        if mode not in ("plain", "fused"):
            raise ValueError(f"unknown bank mode {mode!r}")
        a_high = np.asarray(a_high, dtype=np.int64)
        if a_high.ndim != 2 or a_high.shape[0] != a_high.shape[1]:
            raise ValueError("INV bank needs a square matrix")
        self.spec = spec or QuantSpec()
        self.a_high = a_high
        self.frac_bits = int(frac_bits)
        self.mode = mode
        self.factors = factors
        self.a_low = a_low
        self.low_frac_bits = low_frac_bits
        self.s = s
        self.noise = float(noise)
        self._rng = np.random.default_rng(seed)
        self.write_events = 0
        m = a_high.shape[0]
        if mode == "plain":
            self.n_crossbars = plan_inv_occupation(m, s=s, capacity=None)
        else:
            n = factors[0].shape[1]
            self.n_crossbars = plan_inv_occupation(m, n, s=s, fused=True, capacity=None)
        self._factorize()

    def _factorize(self):
        a = self.a_high.astype(np.float64)
        lu, piv, info = lapack.dgetrf(a)
        if info > 0:
            raise NonConvergenceError("A_H is singular")
        anorm = float(np.max(np.sum(np.abs(a), axis=0)))
        rcond, _ = lapack.dgecon(lu, anorm, norm="1")
        if not rcond > RCOND_MIN:
            raise NonConvergenceError(f"A_H is numerically singular (rcond={rcond:.3g})")
        self.rcond = float(rcond)
        self._lu = (lu, piv)
        self.write_events += self.n_crossbars

    @property
    def size(self) -> int:
        return self.a_high.shape[0]

    @cached_property
    def rho(self) -> float | None:
        """Spectral radius of ``A_H^-1 A_L 2^-(k r_c)``, the Neumann rate."""
        if self.a_low is None:
            return None
        e = np.ldexp(np.asarray(self.a_low, dtype=np.float64), -self.low_frac_bits)
        h = np.ldexp(self.a_high.astype(np.float64), -self.frac_bits)
        p = np.linalg.solve(h, e)
        return float(np.max(np.abs(np.linalg.eigvals(p))))

    def solve_raw(self, d: np.ndarray) -> np.ndarray:
        """Real solution of ``a_high @ y = d`` (integer units)."""
        return sla.lu_solve(self._lu, np.asarray(d, dtype=np.float64), check_finite=False)

    def solve(self, d: np.ndarray, frac: np.ndarray):
        """Solve for a block of right-hand sides and read through the ADC.

        ``d`` is ``(n, c)`` with per-column exponents ``frac``.  Each column
        is auto-ranged so its largest entry fills ``r_adc`` signed bits.
        Returns ``(y, frac_y)`` with ``value = y * 2**-frac_y``.
        """
        d = np.asarray(d, dtype=np.int64)
        frac = np.asarray(frac, dtype=np.int64)
        y = self.solve_raw(d)
        bits = self.spec.r_adc
        hi = (1 << (bits - 1)) - 1
        m = np.max(np.abs(y), axis=0)
        nz = m > 0
        e = np.zeros(m.shape, dtype=np.int64)
        e[nz] = np.ceil(np.log2(m[nz])).astype(np.int64)
        fo = (bits - 1) - e
        scaled = np.ldexp(y, fo)
        if self.noise:
            scaled = scaled + self._rng.uniform(-self.noise / 2, self.noise / 2, size=scaled.shape)
        q = np.rint(scaled)
        over = np.max(np.abs(q), axis=0) > hi
        if np.any(over):
            fo = fo - over
            scaled = np.where(over, scaled / 2, scaled)
            q = np.rint(scaled)
        q = np.clip(q, -hi - 1, hi).astype(np.int64)
        q[:, ~nz] = 0
        fo = np.where(nz, fo, 0)
        return q, fo - self.frac_bits + frac


def inv_solve_lowprec(bank: InvBank, b_slice: Fixed) -> Fixed:
    """One analog solve of ``A_H x = b_slice`` read out at ``r_adc`` bits."""
    if b_slice.bits > bank.spec.r_dac:
        raise ValueError(f"input slice has {b_slice.bits} bits, DAC takes {bank.spec.r_dac}")
    d = b_slice.data
    col = d.ndim == 1
    d2 = d.reshape(-1, 1) if col else d
    frac = np.full(d2.shape[1], b_slice.frac_bits, dtype=np.int64)
    y, fy = bank.solve(d2, frac)
    if col:
        return Fixed(y[:, 0], bank.spec.r_adc, int(fy[0]))
    # common exponent for a matrix of slices
    f = int(np.min(fy))
    y = rne_rshift(y, fy - f)
    return Fixed(y, bank.spec.r_adc, f)


def plan_inv_occupation(m: int, n: int | None = None, s: int = 256, fused: bool = False,
                        capacity: int | None = 16) -> int:
    """INV crossbars needed for an ``m x m`` inversion.

    Plain: ``ceil(m/s)**2``.  Fused over factors ``m x n`` and ``n x m``:
    ``2 * ceil(n/s) * ceil(m/s)``.  ``capacity`` is the per-tile INV budget
    (``None`` skips the check).
    """
    if m < 1 or s < 1 or (n is not None and n < 1):
        raise ValueError("dimensions must be >= 1")
    if fused:
        if n is None:
            raise ValueError("fused occupation needs the inner dimension n")
        count = 2 * _ceil(n, s) * _ceil(m, s)
    else:
        count = _ceil(m, s) ** 2
    if capacity is not None and count > capacity:
        raise CapacityError(f"{'fused' if fused else 'plain'} inversion of {m}x{m} needs {count} "
                            f"INV crossbars, tile has {capacity}")
    return count


def max_composable_dim(cfg: ArchConfig) -> int:
    """Largest square matrix one tile's INV crossbars can invert (square grid)."""
    return math.isqrt(cfg.inv_per_tile) * cfg.s
