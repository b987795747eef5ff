"""INV crossbar occupation of each layer's A factor versus block size.

Once every block is larger than 2hw the fused mapping is the cheaper one
and the count settles near 2 hw a_dim / s^2 for any larger block size.
Layers with large feature maps never get there and keep the plain mapping.
"""
import argparse

from pimsolve.mapper import occupation_vs_blocksize, plateau_value
from pimsolve.workloads import WORKLOADS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workload", default="resnet50", choices=sorted(WORKLOADS))
    ap.add_argument("--block-sizes", type=int, nargs="+", default=[256, 512, 1024, 2048, 4096, 8192])
    ap.add_argument("--s", type=int, default=256)
    args = ap.parse_args()

    print(f"{'layer':22} {'a_dim':>6} {'hw':>6} {'plateau':>8} " + " ".join(f"B={b:<6}" for b in args.block_sizes))
    for i, layer in enumerate(WORKLOADS[args.workload]()):
        rows = occupation_vs_blocksize(layer, args.block_sizes, args.s)
        cells = " ".join(f"{r['inv_crossbars']:<8}" for r in rows)
        print(f"{layer.name or f'layer{i}':22} {layer.a_dim:>6} {layer.hw:>6} "
              f"{plateau_value(layer, args.s):>8.1f} {cells}")


if __name__ == "__main__":
    main()
