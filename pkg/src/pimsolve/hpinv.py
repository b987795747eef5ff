"""High-precision inversion from low-precision INV solves.

Three nested loops:

* loop b slices the right-hand side into DAC digits, solves each digit on
  the bank and shift-adds the ADC reads;
* loop x repeats loop b on the exact residual ``b - A_H x`` so that the
  ``r_adc``-bit reads add up to ``q_x`` bits;
* loop A corrects for the low bits ``A_L`` of the matrix with a Neumann
  series, one extra loop x and one VMM per term.

All vectors are int64 blocks of shape ``(n, c)`` with one exponent per
column, so several right-hand sides are solved at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crossbar import InvBank, vmm_cycles
from .errors import NonConvergenceError
from .fixedpoint import Fixed, QuantSpec, align_add, int_matmul, normalize, rne_rshift, to_float

INNER_WIDTH = 24  # bits kept by loop b / loop x accumulators
ACC_WIDTH = 48  # bits kept by the loop A accumulator
EXACT_WIDTH = 60


@dataclass
class InvProblem:
    """One system ``A x = b`` (or ``A1 A2 x = b`` when ``factors`` is set).

    ``rhs`` may be a vector or an ``(n, c)`` block of right-hand sides.
    ``refine`` carries each loop-x leftover into the next Neumann term;
    without it the series is summed as written, which accumulates the ADC
    read errors.
    """

    matrix: Fixed | None
    rhs: Fixed
    spec: QuantSpec = field(default_factory=QuantSpec)
    n_taylor: int = 18
    early_stop: bool = True
    factors: tuple[Fixed, Fixed] | None = None
    refine: bool = True
    noise: float = 0.0
    seed: int = 0
    s: int = 256
    trace: bool = False
    split: str = "round"

    def __post_init__(self):
        if self.n_taylor < 1:
            raise ValueError("n_taylor must be >= 1")
        if (self.matrix is None) == (self.factors is None):
            raise ValueError("give exactly one of matrix or factors")


@dataclass
class InvResult:
    x: Fixed
    iterations_used: int
    cycles: int
    converged: bool
    residual_norm: float
    symmetric: bool | None = None
    rho: float | None = None
    col_iterations: list = field(default_factory=list)
    history: list = field(default_factory=list)  # (data, frac) after each term, if traced


def cycles_plain(spec: QuantSpec, n_iter: int) -> int:
    return n_iter * (2 * spec.n_b_slices * spec.n_x_iters + spec.n_x_dac_slices)


def cycles_fused(spec: QuantSpec, n_iter: int) -> int:
    return n_iter * (2 * spec.n_b_slices * spec.n_x_iters + 2 * spec.n_x_dac_slices)


SPLITS = ("truncate", "round")


def split_matrix(a: Fixed, spec: QuantSpec, mode: str = "round") -> tuple[Fixed, Fixed]:
    """``A = A_H + A_L * 2**-(k r_c)`` with ``A_H`` holding ``k r_c`` bits.

    ``round`` rounds the leading bits to nearest (saturating at the top),
    leaving a signed ``A_L`` one bit wider than the dropped bits; the error
    is zero-mean.  ``truncate`` keeps the leading bits as they are, so
    ``A_L`` is unsigned and its bias of about half an ``A_H`` step per
    entry adds up along the all-ones direction; for large, heavily damped
    matrices that alone can push the Neumann rate past 1.
    """
    if mode not in SPLITS:
        raise ValueError(f"split mode must be one of {SPLITS}")
    hb = spec.high_bits
    if a.bits > spec.q_a:
        raise ValueError(f"matrix has {a.bits} bits, spec allows {spec.q_a}")
    sh = spec.q_a - hb
    if mode == "round" and sh > 0:
        hi_lim = (1 << (hb - 1)) - 1
        high = np.minimum(rne_rshift(a.data, sh), hi_lim)
        low = a.data - (high << sh)
        return Fixed(high, hb, a.frac_bits - sh), Fixed(low, sh + 1, a.frac_bits - hb)
    high = a.data >> sh
    low = a.data - (high << sh)
    a_h = Fixed(high, hb, a.frac_bits - sh)
    a_l = Fixed(low, max(sh, 1), a.frac_bits - hb, signed=False)
    return a_h, a_l


def _block(v: Fixed):
    d = np.asarray(v.data, dtype=np.int64)
    vec = d.ndim == 1
    d = d.reshape(-1, 1) if vec else d
    frac = np.broadcast_to(np.asarray(v.frac_bits, dtype=np.int64), (d.shape[1],)).copy()
    return d, frac, vec


def _unblock(d, frac, bits, vec) -> Fixed:
    if vec:
        return Fixed(d[:, 0], bits, int(frac[0]))
    f = frac if np.any(frac != frac[0]) else int(frac[0])
    return Fixed(d, bits, f)


def _width(d) -> int:
    return max(int(np.max(np.abs(d), initial=0)).bit_length() + 1, 1)


def _zero_cols(d):
    return ~np.any(d != 0, axis=0)


class _Engine:
    """Shared loop machinery over a bank (plain or fused)."""

    def __init__(self, bank: InvBank, spec: QuantSpec):
        self.bank = bank
        self.spec = spec

    def apply_high(self, x, fx):
        """Exact ``A_H @ x`` as ``(data, frac)``."""
        bank = self.bank
        if bank.mode == "plain":
            return int_matmul(bank.a_high, x), fx + bank.frac_bits
        (h1, f1), (h2, f2) = self._fac_high
        return int_matmul(h1, int_matmul(h2, x)), fx + f1 + f2

    def loop_b(self, b, fb):
        spec = self.spec
        nb = spec.n_b_slices
        r = spec.r_dac
        n, c = b.shape
        mask = (1 << r) - 1
        digits = []
        rest = b
        for i in range(nb):
            if i < nb - 1:
                digits.append(rest & mask)
                rest = rest >> r
            else:
                digits.append(rest)
        # every DAC digit is an independent solve, batched into one call
        y, fy = self.bank.solve(np.concatenate(digits, axis=1), np.tile(fb, nb))
        parts = [(y[:, i * c:(i + 1) * c], fy[i * c:(i + 1) * c] - i * r) for i in range(nb)]
        return align_add(parts, INNER_WIDTH)

    def loop_x(self, b, fb):
        spec = self.spec
        parts = []
        cur, fc = b, fb
        for j in range(spec.n_x_iters):
            x, fx = self.loop_b(cur, fc)
            parts.append((x, fx))
            if j == spec.n_x_iters - 1:
                break
            ax, fax = self.apply_high(x, fx)
            res, fr = align_add([(cur, fc), (-ax, fax)], EXACT_WIDTH)
            if not np.any(res):
                break
            cur, fc = normalize(res, fr, spec.q_b)
        return align_add(parts, INNER_WIDTH)

    def low_product(self, t, ft):
        """``E @ t`` where ``A = A_H + E`` (value units)."""
        raise NotImplementedError


class _PlainEngine(_Engine):
    def __init__(self, bank, spec, a_low: Fixed):
        super().__init__(bank, spec)
        self.a_low = a_low

    def low_product(self, t, ft):
        # A_L * 2**-(k r_c) has integer data a_low with exponent frac_L + k r_c
        return int_matmul(self.a_low.data, t), ft + self.a_low.frac_bits + self.spec.high_bits


class _FusedEngine(_Engine):
    def __init__(self, bank, spec, f1: tuple, f2: tuple):
        super().__init__(bank, spec)
        (self.a1, self.a1h, self.a1l), (self.a2, self.a2h, self.a2l) = f1, f2
        self._fac_high = ((self.a1h.data, self.a1h.frac_bits), (self.a2h.data, self.a2h.frac_bits))

    def low_product(self, t, ft):
        spec = self.spec
        kr = spec.high_bits
        # chain 1: A1 (A2_L t), chain 2: A1_L (A2_H t); both run in parallel
        u, fu = normalize(int_matmul(self.a2l.data, t), ft + self.a2l.frac_bits + kr, spec.q_x)
        p1 = int_matmul(self.a1.data, u), fu + self.a1.frac_bits
        v, fv = normalize(int_matmul(self.a2h.data, t), ft + self.a2h.frac_bits, spec.q_x)
        p2 = int_matmul(self.a1l.data, v), fv + self.a1l.frac_bits + kr
        return align_add([p1, p2], EXACT_WIDTH)


def _neumann(eng: _Engine, b, fb, prob: InvProblem):
    spec = prob.spec
    n, c = b.shape
    cur, fc = normalize(b, fb, spec.q_b)
    acc = np.zeros((n, c), dtype=np.int64)
    facc = np.zeros(c, dtype=np.int64)
    active = ~_zero_cols(cur)
    done = ~active  # zero right-hand sides are solved trivially
    col_iters = np.where(active, 0, 1)
    history = []
    used = 0
    for l in range(prob.n_taylor):
        if not np.any(active):
            if prob.early_stop:
                break
            used = l + 1
            if prob.trace:
                history.append(normalize(acc, facc, spec.q_x))
            continue
        used = l + 1
        idx = np.flatnonzero(active)
        x, fx = eng.loop_x(cur[:, idx], fc[idx])
        t, ft = normalize(x, fx, spec.q_x)
        sign = -1 if l % 2 else 1
        a_new, f_new = align_add([(acc[:, idx], facc[idx]), (sign * t, ft)], ACC_WIDTH)
        acc[:, idx] = a_new
        facc[idx] = f_new
        col_iters[idx] = l + 1

        et, fet = eng.low_product(t, ft)
        terms = [(et, fet)]
        if prob.refine:
            ht, fht = eng.apply_high(t, ft)
            terms += [(-cur[:, idx], fc[idx]), (ht, fht)]
        nxt, fn = align_add(terms, EXACT_WIDTH)

        # stop rules: residual vanished, or this term is below half an output ULP
        _, fxo = normalize(a_new, f_new, spec.q_x)
        tmax = np.max(np.abs(t), axis=0).astype(np.float64)
        negligible = np.ldexp(tmax, -ft) < np.ldexp(0.5, -fxo)
        finished = _zero_cols(nxt) | negligible
        done[idx[finished]] = True
        keep = ~finished if prob.early_stop else ~_zero_cols(nxt)
        nd, nf = normalize(nxt, fn, spec.q_b)
        cur[:, idx] = np.where(keep, nd, 0)
        fc[idx] = np.where(keep, nf, fc[idx])
        active[idx] = keep
        if prob.trace:
            history.append(normalize(acc, facc, spec.q_x))
    xd, xf = normalize(acc, facc, spec.q_x)
    return xd, xf, used, bool(np.all(done)), col_iters, history


def make_bank(a_h: Fixed, spec: QuantSpec, a_l: Fixed | None = None, s: int = 256,
              noise: float = 0.0, seed: int = 0) -> InvBank:
    return InvBank(a_h.data, a_h.frac_bits, spec, a_low=None if a_l is None else a_l.data,
                   low_frac_bits=None if a_l is None else a_l.frac_bits + spec.high_bits,
                   s=s, noise=noise, seed=seed)


def _residual_norm(a_float, x: Fixed, b: Fixed) -> float:
    r = to_float(b.data.reshape(b.shape[0], -1), b.frac_bits) - a_float @ x.to_float().reshape(b.shape[0], -1)
    return float(np.max(np.abs(r)))


def _is_symmetric(a: np.ndarray) -> bool:
    return a.shape[0] == a.shape[1] and bool(np.array_equal(a, a.T))


def invert(problem: InvProblem, bank: InvBank | None = None) -> InvResult:
    """Solve ``A x = b`` to ``q_x`` bits.

    ``bank`` may be passed to reuse an already programmed INV bank for the
    same matrix.  Cycles follow the closed form for ``iterations_used``.
    """
    if problem.factors is not None:
        return invert_fused(problem)
    spec = problem.spec
    a = problem.matrix
    if a.shape[0] != a.shape[1] or a.shape[0] != problem.rhs.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {a.shape}, rhs {problem.rhs.shape}")
    a_h, a_l = split_matrix(a, spec, problem.split)
    if bank is None:
        bank = make_bank(a_h, spec, a_l, s=problem.s, noise=problem.noise, seed=problem.seed)
    eng = _PlainEngine(bank, spec, a_l)
    b, fb, vec = _block(problem.rhs)
    xd, xf, used, conv, col_iters, hist = _neumann(eng, b, fb, problem)
    x = _unblock(xd, xf, spec.q_x, vec)
    return InvResult(
        x=x, iterations_used=used, cycles=cycles_plain(spec, used), converged=conv,
        residual_norm=_residual_norm(a.to_float(), x, problem.rhs),
        symmetric=_is_symmetric(a.data), col_iterations=col_iters.tolist(), history=hist,
        rho=None,
    )


def invert_fused(problem: InvProblem) -> InvResult:
    """Solve ``A1 A2 x = b`` without forming ``A1 A2``.

    The bank holds ``A1_H`` and ``A2_H``; the low-bit correction
    ``A1 A2_L + A1_L A2_H`` is applied as two VMM chains.
    """
    spec = problem.spec
    if problem.factors is None:
        raise ValueError("fused inversion needs factors")
    a1, a2 = problem.factors
    m, n = a1.shape
    if a2.shape != (n, m) or problem.rhs.shape[0] != m:
        raise ValueError(f"factor shapes {a1.shape}, {a2.shape} do not form a square system for rhs {problem.rhs.shape}")
    a1h, a1l = split_matrix(a1, spec, problem.split)
    a2h, a2l = split_matrix(a2, spec, problem.split)
    prod = int_matmul(a1h.data, a2h.data)
    bank = InvBank(prod, a1h.frac_bits + a2h.frac_bits, spec, mode="fused",
                   factors=(a1h.data, a2h.data), s=problem.s, noise=problem.noise, seed=problem.seed)
    eng = _FusedEngine(bank, spec, (a1, a1h, a1l), (a2, a2h, a2l))
    b, fb, vec = _block(problem.rhs)
    xd, xf, used, conv, col_iters, hist = _neumann(eng, b, fb, problem)
    x = _unblock(xd, xf, spec.q_x, vec)
    a_float = a1.to_float() @ a2.to_float()
    return InvResult(
        x=x, iterations_used=used, cycles=cycles_fused(spec, used), converged=conv,
        residual_norm=_residual_norm(a_float, x, problem.rhs), symmetric=None,
        col_iterations=col_iters.tolist(), history=hist,
    )


def bank_rho(a: Fixed, spec: QuantSpec, split: str = "round") -> float:
    """Neumann contraction rate of ``a`` under ``spec``'s split."""
    a_h, a_l = split_matrix(a, spec, split)
    try:
        return make_bank(a_h, spec, a_l).rho
    except NonConvergenceError:
        return float("inf")


# -- public single-loop entry points ------------------------------------------


def loop_b(bank: InvBank, b: Fixed) -> tuple[Fixed, int]:
    """One pass over the DAC digits of ``b``."""
    d, f, vec = _block(b)
    x, fx = _Engine(bank, bank.spec).loop_b(d, f)
    return _unblock(x, fx, _width(x), vec), bank.spec.n_b_slices


def loop_x(bank: InvBank, b: Fixed) -> tuple[Fixed, int]:
    """Residual refinement of loop b up to ``q_x`` bits.

    Only plain banks are supported here; fused banks run inside
    :func:`invert_fused`.
    """
    if bank.mode != "plain":
        raise ValueError("loop_x entry point expects a plain bank")
    spec = bank.spec
    d, f, vec = _block(b)
    x, fx = _Engine(bank, spec).loop_x(d, f)
    x, fx = normalize(x, fx, spec.q_x)
    cycles = spec.n_x_iters * (spec.n_b_slices + vmm_cycles(spec.q_b, spec))
    return _unblock(x, fx, spec.q_x, vec), cycles


# -- convergence sweep ---------------------------------------------------------


def _trial_rng(seed: int, family: str, n: int, kappa: float, trial: int) -> np.random.Generator:
    from .matgen import FAMILIES

    return np.random.default_rng([seed, FAMILIES.index(family), n, int(round(kappa * 1000)), trial])


def run_trial(family: str, n: int, kappa: float, trial: int, spec: QuantSpec | None = None,
              seed: int = 0, n_max: int = 18) -> dict:
    """One random system: ULP error after each Neumann term against the
    float64 oracle, plus the converged flag and cycle count."""
    from .matgen import random_system
    from .oracle import quantize_like

    spec = spec or QuantSpec()
    rng = _trial_rng(seed, family, n, kappa, trial)
    a, b = random_system(family, n, kappa, rng, bits=spec.q_a)
    x_exact = np.linalg.solve(a.to_float(), b.to_float())
    try:
        res = invert(InvProblem(a, b, spec=spec, n_taylor=n_max, trace=True))
    except NonConvergenceError:
        return {"ulp": [None] * n_max, "converged": False, "iterations": n_max, "cycles": 0}
    ulps = []
    for d, f in res.history:
        ulps.append(int(np.max(np.abs(d[:, 0] - quantize_like(x_exact, int(f[0]))))))
    ulps += [ulps[-1]] * (n_max - len(ulps))  # stopped early: result is final
    return {"ulp": ulps, "converged": res.converged, "iterations": res.iterations_used,
            "cycles": res.cycles, "final_ulp": ulps[-1]}


def convergence_sweep(sizes, condition_numbers, trials: int, spec: QuantSpec | None = None,
                      seed: int = 0, n_max: int = 18, families=("kfac",)) -> list[dict]:
    """Cumulative fraction of systems within 1 ULP after N = 1..n_max terms."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for family in families:
        for n in sizes:
            for kappa in condition_numbers:
                runs = [run_trial(family, int(n), float(kappa), t, spec, seed, n_max) for t in range(trials)]
                ok = [[u is not None and u <= 1 for u in r["ulp"]] for r in runs]
                rows.append({
                    "family": family, "n": int(n), "kappa": float(kappa), "trials": trials,
                    "success_at": [sum(o[i] for o in ok) / trials for i in range(n_max)],
                    "converged": sum(r["converged"] for r in runs) / trials,
                    "mean_iterations": sum(r["iterations"] for r in runs) / trials,
                    "max_final_ulp": max((r["ulp"][-1] for r in runs if r["ulp"][-1] is not None), default=None),
                })
    return rows
