"""Convergence of the crossbar solver against the float64 oracle.

Prints, for each (family, n, kappa), the fraction of random systems within
1 ULP after N terms, and optionally writes the rows as JSON.
"""
import argparse
import json

from pimsolve.fixedpoint import QuantSpec
from pimsolve.hpinv import convergence_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 64, 256])
    ap.add_argument("--kappas", type=float, nargs="+", default=[2.0, 10.0, 100.0])
    ap.add_argument("--families", nargs="+", default=["kfac", "haar"])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--bits", type=int, default=16)
    ap.add_argument("--n-max", type=int, default=18)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args()

    spec = QuantSpec(q_a=args.bits, q_b=args.bits, q_x=args.bits)
    rows = convergence_sweep(args.sizes, args.kappas, args.trials, spec, args.seed, args.n_max,
                             tuple(args.families))
    marks = [n for n in (1, 2, 4, 6, 8, 12, 18) if n <= args.n_max]
    print(f"{'family':8} {'n':>5} {'kappa':>7} " + " ".join(f"N={n:<4}" for n in marks) + "  mean_iter")
    for r in rows:
        cells = " ".join(f"{r['success_at'][n - 1]:<6.2f}" for n in marks)
        print(f"{r['family']:8} {r['n']:>5} {r['kappa']:>7g} {cells}  {r['mean_iterations']:.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
