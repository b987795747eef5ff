"""Regenerate tests/fixtures from the reference solver.

The fixture is a 64x64 symmetric, Tikhonov-damped matrix with a 16-bit
right-hand side and the reference solution rounded to 16 bits.  It is
produced by the high-precision oracle only, never by the crossbar engine.
"""
import argparse
from pathlib import Path

import numpy as np

from pimsolve.fixedpoint import Fixed, fit_frac_bits
from pimsolve.matgen import random_system
from pimsolve.oracle import rational_solve, refined_solve, round_exact
from pimsolve.textio import write_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    a, b = random_system("kfac", 64, 50.0, rng)
    x_int, frac = refined_solve(a, b)
    x_float = np.array([float(v) for v in x_int]) * 2.0 ** -frac
    fx = fit_frac_bits(x_float, 16)
    x = Fixed(round_exact(x_int, frac, fx), 16, fx)

    write_matrix(out / "spd64_A.txt", a, "64x64 symmetric damped matrix, 16-bit")
    write_matrix(out / "spd64_b.txt", b, "right-hand side, 16-bit")
    write_matrix(out / "spd64_x.txt", x, "reference solution rounded half-even to 16 bits")

    # a small system whose reference comes from exact rational elimination
    a8, b8 = random_system("kfac", 8, 20.0, rng)
    exact = rational_solve(a8, b8)
    fx8 = fit_frac_bits([float(v) for v in exact], 16)
    x8 = Fixed(round_exact(np.array([int(v * 2 ** 70) for v in exact], dtype=object), 70, fx8), 16, fx8)
    write_matrix(out / "spd8_A.txt", a8, "8x8 symmetric damped matrix, 16-bit")
    write_matrix(out / "spd8_b.txt", b8, "right-hand side, 16-bit")
    write_matrix(out / "spd8_x.txt", x8, "exact rational solution rounded half-even to 16 bits")
    print(f"wrote fixtures to {out}")


if __name__ == "__main__":
    main()
