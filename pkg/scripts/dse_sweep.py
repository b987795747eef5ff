"""Throughput per area as the VMM:INV crossbar ratio varies."""
import argparse
import json

from pimsolve.costmodel import dse_sweep
from pimsolve.workloads import WORKLOADS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workload", default="resnet50", choices=sorted(WORKLOADS))
    ap.add_argument("--ratios", type=int, nargs="+", default=[4, 8, 12, 16, 20, 24, 28, 32, 40, 48])
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args()

    rows = dse_sweep(WORKLOADS[args.workload](), args.ratios)
    best = max(rows, key=lambda r: r["gops_per_mm2"])
    print(f"{'ratio':>5} {'area mm2':>9} {'cycles':>12} {'GOPS':>9} {'GOPS/mm2':>9}")
    for r in rows:
        mark = " *" if r is best else ""
        print(f"{r['vmm_per_inv']:>5} {r['area_mm2']:>9.2f} {r['cycles']:>12} {r['gops']:>9.1f} "
              f"{r['gops_per_mm2']:>9.3f}{mark}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
