"""Quick oracle-equivalence checks run by ``pimsolve selftest``."""
from __future__ import annotations

import numpy as np

from .fixedpoint import Fixed, QuantSpec, bit_slice, quantize, shift_add
from .hpinv import InvProblem, cycles_plain, invert, invert_fused
from .matgen import random_system, scale_to_unit
from .oracle import quantize_like, rational_solve
from .mapper import decide_mm_inv


def _check(name, ok, **detail) -> dict:
    return {"name": name, "ok": bool(ok), **detail}


def run_selftest(seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    spec = QuantSpec()
    out = []

    q = quantize(np.array([1 / 3, -1.0]), 16, 15).data.tolist()
    out.append(_check("quantize", q == [10923, -32768], got=q))

    v = Fixed(rng.integers(-(1 << 15), 1 << 15, 64), 16, 0)
    back = shift_add(bit_slice(v, 4))
    out.append(_check("bit_slice/shift_add roundtrip", np.array_equal(back.data, v.data)))

    a, b = random_system("identity", 16, 2.0, rng)
    res = invert(InvProblem(a, b, spec=spec))
    ulp = int(np.max(np.abs(res.x.data - quantize_like(b.to_float(), res.x.frac_bits))))
    out.append(_check("identity system", ulp == 0 and res.iterations_used == 1, ulp=ulp))

    # exact rational oracle on a small well-conditioned system
    a, b = random_system("kfac", 8, 10.0, rng)
    exact = np.array([float(x) for x in rational_solve(a, b)])
    res = invert(InvProblem(a, b, spec=spec))
    ulp = int(np.max(np.abs(res.x.data - quantize_like(exact, res.x.frac_bits))))
    out.append(_check("rational oracle n=8", ulp <= 1 and res.converged, ulp=ulp))

    worst = 0
    for n in (16, 32, 64):
        a, b = random_system("kfac", n, 100.0, rng)
        res = invert(InvProblem(a, b, spec=spec))
        ref = quantize_like(np.linalg.solve(a.to_float(), b.to_float()), res.x.frac_bits)
        worst = max(worst, int(np.max(np.abs(res.x.data - ref))))
    out.append(_check("float64 oracle kfac n<=64", worst <= 1, ulp=worst))

    # rectified activation factor: A = F F^T on the fused path vs exact
    raw = np.maximum(rng.standard_normal((16, 48)) + 0.2, 0)
    f = quantize(scale_to_unit(raw), 16, 15)
    ft = Fixed(f.data.T.copy(), 16, 15)
    bsys = Fixed(rng.integers(-(1 << 15), 1 << 15, 16), 16, 15)
    res_f = invert_fused(InvProblem(None, bsys, spec=spec, factors=(f, ft)))
    x_ref = np.linalg.solve(f.to_float() @ ft.to_float(), bsys.to_float())
    ulp = int(np.max(np.abs(res_f.x.data - quantize_like(x_ref, res_f.x.frac_bits))))
    out.append(_check("fused product path", ulp <= 1 and res_f.converged, ulp=ulp))

    out.append(_check("cycle count N=18", cycles_plain(spec, 18) == 360, cycles=cycles_plain(spec, 18)))
    d = decide_mm_inv(1024, 256, 1024, spec)
    out.append(_check("fuse decision 1024x256", d.strategy == "no-fuse" and d.beta_flip == 9.0,
                      beta_flip=d.beta_flip))
    return out
