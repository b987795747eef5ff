"""Fixed-point quantization, bit-slicing and shift-and-add recombination.

Everything here works on two's-complement integers held in int64 numpy
arrays.  A value ``v`` with ``frac_bits = f`` stores ``round(v * 2**f)``.

Two layers live in this module:

* the user-facing types (:class:`QuantSpec`, :class:`Fixed`,
  :class:`SliceStack`) and operations (:func:`quantize`, :func:`bit_slice`,
  :func:`shift_add`);
* block-floating-point helpers (``rne_rshift``, ``normalize``,
  ``align_add``) that the inversion engine uses to carry one scaling
  exponent per column of a multi-RHS block.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_INT_LIMIT = 62  # spare bit for sign and carries in int64 accumulators


@dataclass(frozen=True)
class QuantSpec:
    """Precision parameters of one quantized inversion / multiplication."""

    q_a: int = 16  # matrix bits
    q_b: int = 16  # right-hand-side bits
    q_x: int = 16  # result bits
    r_dac: int = 4
    r_adc: int = 8
    r_c: int = 4  # bits per ReRAM cell
    k: int = 2  # cell slices forming the high part of the matrix

    def __post_init__(self):
        for name in ("q_a", "q_b", "q_x", "r_dac", "r_adc", "r_c", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"QuantSpec.{name} must be >= 1")
        if self.high_bits > self.q_a:
            raise ValueError("k * r_c must not exceed q_a")
        if self.r_dac > self.q_b:
            raise ValueError("r_dac must not exceed q_b")
        if self.r_adc > self.q_x:
            raise ValueError("r_adc must not exceed q_x")

    @property
    def high_bits(self) -> int:
        """Width of the matrix high part programmed into INV crossbars."""
        return self.k * self.r_c

    @property
    def n_b_slices(self) -> int:
        return -(-self.q_b // self.r_dac)

    @property
    def n_x_iters(self) -> int:
        return -(-self.q_x // self.r_adc)

    @property
    def n_x_dac_slices(self) -> int:
        return -(-self.q_x // self.r_dac)


@dataclass(frozen=True)
class Fixed:
    """Fixed-point vector or matrix: ``value = data * 2**-frac_bits``."""

    data: np.ndarray
    bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.int64:
            data = data.astype(np.int64)
        object.__setattr__(self, "data", data)
        lo, hi = int_range(self.bits, self.signed)
        if data.size and (data.min() < lo or data.max() > hi):
            raise ValueError(f"data does not fit in {self.bits} bits")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ulp(self) -> float:
        return 2.0 ** -self.frac_bits

    def to_float(self) -> np.ndarray:
        return np.ldexp(self.data.astype(np.float64), -self.frac_bits)


# The vector/matrix distinction is only one of rank.
FixedVec = Fixed
FixedMat = Fixed


def int_range(bits: int, signed: bool = True) -> tuple[int, int]:
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def quantize(values, bits: int, frac_bits: int, signed: bool = True) -> Fixed:
    """Round-to-nearest-even onto a ``bits``-wide grid, saturating at the
    two's-complement limits."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    lo, hi = int_range(bits, signed)
    # np.rint is round-half-even; ldexp keeps the scaling exact
    q = np.clip(np.rint(np.ldexp(v, frac_bits)), lo, hi).astype(np.int64)
    return Fixed(q, bits, frac_bits, signed)


def fit_frac_bits(values, bits: int) -> int:
    """Largest frac_bits for which ``values`` quantize without saturating."""
    v = np.asarray(values, dtype=np.float64)
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0:
        return bits - 1
    lo, hi = int_range(bits)
    top, bot = float(np.max(v)), float(np.min(v))

    def fits(f):
        return np.rint(np.ldexp(top, f)) <= hi and np.rint(np.ldexp(bot, f)) >= lo

    f = bits - 1 - int(np.ceil(np.log2(m)))
    # rounding can push the extreme value one step past the limit
    while not fits(f):
        f -= 1
    while fits(f + 1):
        f += 1
    return f


def quantize_auto(values, bits: int) -> Fixed:
    """Quantize with the finest scaling that still avoids saturation."""
    return quantize(values, bits, fit_frac_bits(values, bits))


@dataclass(frozen=True)
class SliceStack:
    """Radix-``2**radix_bits`` digits, least significant first.

    All digits are unsigned except the last one of a signed source, which
    carries the sign (sign-extended top slice).
    """

    slices: list
    radix_bits: int
    frac_bits: int
    bits: int
    signed: bool = True

    def __len__(self) -> int:
        return len(self.slices)


def bit_slice(v: Fixed, radix_bits: int) -> SliceStack:
    if radix_bits < 1:
        raise ValueError("radix_bits must be >= 1")
    n = -(-v.bits // radix_bits)
    mask = (1 << radix_bits) - 1
    rest = v.data.copy()
    slices = []
    for i in range(n):
        if i < n - 1 or not v.signed:
            slices.append(rest & mask)
            rest = rest >> radix_bits
        else:
            slices.append(rest)  # arithmetic shift already sign-extended it
    return SliceStack(slices, radix_bits, v.frac_bits, v.bits, v.signed)


def shift_add(parts: SliceStack) -> Fixed:
    """Exact recombination ``sum_i part_i * 2**(i*R)``."""
    if not parts.slices:
        raise ValueError("empty slice stack")
    acc = np.zeros_like(np.asarray(parts.slices[0], dtype=np.int64))
    for i, s in enumerate(parts.slices):
        acc = acc + (np.asarray(s, dtype=np.int64) << (i * parts.radix_bits))
    width = parts.bits
    lo, hi = int_range(width, parts.signed)
    if acc.size and (acc.min() < lo or acc.max() > hi):
        # partial products (e.g. crossbar outputs) outgrow the source width
        m = int(np.max(np.abs(acc)))
        width = m.bit_length() + 1
    return Fixed(acc, width, parts.frac_bits, parts.signed)


# ---------------------------------------------------------------------------
# block floating point helpers (per-column exponents)


def bit_length(x: np.ndarray) -> np.ndarray:
    """Exact bit length of ``|x|`` for an int64 array."""
    a = np.abs(np.asarray(x, dtype=np.int64))
    out = np.zeros(a.shape, dtype=np.int64)
    nz = a > 0
    if np.any(nz):
        _, e = np.frexp(a[nz].astype(np.float64))
        e = e.astype(np.int64)
        # float rounding may overshoot by one for values just below 2**e
        over = (a[nz] >> np.maximum(e - 1, 0)) == 0
        out[nz] = e - over
    return out


def col_max_bits(x: np.ndarray) -> np.ndarray:
    """Bit length of the largest magnitude in each column."""
    return bit_length(np.max(np.abs(x), axis=0))


def rne_rshift(x: np.ndarray, s) -> np.ndarray:
    """Round-half-even of ``x / 2**s`` for non-negative shifts ``s``
    (scalar or one per column)."""
    x = np.asarray(x, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if np.any(s < 0):
        raise ValueError("negative shift")
    q = x >> s
    r = x - (q << s)
    # for s == 0 the remainder is 0 and never reaches half = 1
    half = np.left_shift(1, np.maximum(s - 1, 0))
    return q + ((r > half) | ((r == half) & ((q & 1) == 1)))


def shift(x: np.ndarray, s) -> np.ndarray:
    """Multiply by ``2**s`` per column; negative ``s`` rounds half-even."""
    x = np.asarray(x, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if np.all(s >= 0):
        return x << s
    if np.all(s <= 0):
        return rne_rshift(x, -s)
    return np.where(s >= 0, x << np.maximum(s, 0), rne_rshift(x, np.maximum(-s, 0)))


def normalize(x: np.ndarray, frac: np.ndarray, bits: int):
    """Rescale every column to use the full signed ``bits`` range.

    Returns ``(data, frac)``; all-zero columns keep their exponent.
    """
    x = np.asarray(x, dtype=np.int64)
    frac = np.asarray(frac, dtype=np.int64).copy()
    lo, hi = int_range(bits)
    s = col_max_bits(x) - (bits - 1)
    s = np.where(np.any(x != 0, axis=0), s, 0)
    out = shift(x, -s)
    frac = frac - s
    # a round-up at the top can overflow by one step
    bad = (out.max(axis=0, initial=0) > hi) | (out.min(axis=0, initial=0) < lo)
    if np.any(bad):
        s2 = s + bad
        out = shift(x, -s2)
        frac = np.asarray(frac + s - s2)
    return out, frac


_NEG = np.iinfo(np.int64).min // 4


def align_add(parts: Sequence[tuple], width: int = 60):
    """Sum of block-float terms ``(data, frac)`` onto a common grid.

    The result grid is the finest one on which the largest term still fits
    into ``width`` bits; terms finer than that grid are rounded onto it.
    Exact whenever all terms fit into ``width`` bits relative to the top.
    """
    if not parts:
        raise ValueError("nothing to add")
    data = [np.asarray(d, dtype=np.int64) for d, _ in parts]
    fracs = np.stack([np.broadcast_to(np.asarray(f, dtype=np.int64), data[0].shape[-1:]) for _, f in parts])
    mags = np.stack([np.max(np.abs(d), axis=0) for d in data])
    nz = mags > 0
    tops = np.where(nz, bit_length(mags) - fracs, _NEG)
    top = np.max(tops, axis=0)
    finest = np.max(np.where(nz, fracs, _NEG), axis=0)
    guard = int(np.ceil(np.log2(len(parts) + 1)))
    grid = np.where(top > _NEG // 2, np.minimum(finest, width - guard - top), 0)
    acc = np.zeros_like(data[0])
    for d, f, z in zip(data, fracs, nz):
        if np.any(z):
            acc = acc + shift(d, np.where(z, grid - f, 0))
    return acc, grid


def to_float(data: np.ndarray, frac) -> np.ndarray:
    return np.ldexp(np.asarray(data, dtype=np.float64), -np.asarray(frac, dtype=np.int64))


def from_float(values: np.ndarray, bits: int):
    """Per-column block-float quantization of a real 2-D array."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    m = np.max(np.abs(v), axis=0)
    e = np.where(m > 0, np.ceil(np.log2(np.where(m > 0, m, 1.0))), 0).astype(np.int64)
    frac = bits - 1 - e
    data = np.rint(np.ldexp(v, frac)).astype(np.int64)
    # ceil(log2) leaves headroom except at exact powers of two, which overflow
    data, frac = normalize(data, frac, bits)
    return data, frac


def check_int64_budget(*bit_counts: int) -> None:
    if sum(bit_counts) > _INT_LIMIT:
        raise OverflowError(f"int64 accumulator budget exceeded: {bit_counts}")


def int_matmul(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Exact integer product, guarding against int64 overflow."""
    a = np.asarray(a, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    ab = int(bit_length(np.max(np.abs(a), initial=0)))
    xb = int(bit_length(np.max(np.abs(x), initial=0)))
    inner = max(int(np.ceil(np.log2(max(a.shape[-1], 1)))), 0)
    if ab + xb + inner <= _INT_LIMIT:
        return a @ x
    # rare wide case: fall back to Python integers
    res = a.astype(object) @ x.astype(object)
    lim = 1 << 62
    if any(abs(int(v)) >= lim for v in np.ravel(res)):
        raise OverflowError("integer product exceeds int64")
    return res.astype(np.int64)
