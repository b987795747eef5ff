"""Train the small K-FAC demo at several SOI precisions and compare losses."""
import argparse
import json
from dataclasses import replace

from pimsolve.kfac_demo import DemoConfig, precision_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bits", type=int, nargs="+", default=[8, 12, 16, 32])
    ap.add_argument("--steps", type=int, default=DemoConfig.steps)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args()

    cfg = replace(DemoConfig(), steps=args.steps)
    out = {}
    for seed in args.seeds:
        curves = precision_study(args.bits, seed=seed, cfg=cfg)
        out[seed] = curves
        ref = curves.get(32)
        for b, c in curves.items():
            gap = max(abs(p["loss"] - q["loss"]) for p, q in zip(c, ref)) if ref else float("nan")
            print(f"seed {seed} bits {b:>2}: final {c[-1]['loss']:.5f}  "
                  f"max gap to 32-bit {gap:.2e}  fallbacks {c[-1]['fallbacks']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({str(k): {str(b): c for b, c in v.items()} for k, v in out.items()}, fh, indent=2)


if __name__ == "__main__":
    main()
