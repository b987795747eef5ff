"""``pimsolve`` command line.

Every subcommand writes one JSON report (sorted keys, the fully resolved
config embedded) to ``--out DIR`` or, without it, to stdout.  Exit codes:
0 ok, 1 usage or parse error, 2 non-convergence, 3 capacity violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA, RunConfig, load_config
from .costmodel import area_rollup, build_ledger, dse_sweep
from .errors import CapacityError, NonConvergenceError, ParseError, PimsolveError
from .hpinv import InvProblem, convergence_sweep, invert
from .kfac_demo import precision_study
from .mapper import occupation_vs_blocksize, plateau_value
from .textio import format_matrix, read_matrix

log = logging.getLogger("pimsolve")


def jsonable(obj):
    """Plain-Python copy of ``obj`` that ``json`` can write without
    ``NaN``/``Infinity`` literals (those become strings)."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(report: dict) -> str:
    return json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(args, name: str, report: dict, cfg: RunConfig) -> None:
    report = {"command": name, "version": __version__, "config": cfg.resolved(), **report}
    text = dumps(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{name}.json").write_text(text)
    else:
        sys.stdout.write(text)


def _quant_override(bits: int | None) -> dict:
    return {} if bits is None else {"quant": {"q_a": bits, "q_b": bits, "q_x": bits}}


def _config(args, extra: dict | None = None) -> RunConfig:
    over = dict(extra or {})
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "n_taylor", None) is not None:
        over["n_taylor"] = args.n_taylor
    if getattr(args, "block_size", None) is not None:
        over["block_size"] = args.block_size
    return load_config(args.config, over)


# -- subcommands ------------------------------------------------------------


def cmd_invert(args) -> int:
    cfg = _config(args, _quant_override(args.bits))
    spec = cfg.quant
    a = read_matrix(args.matrix, bits=spec.q_a)
    b = read_matrix(args.rhs, bits=spec.q_b)
    if a.shape[0] != a.shape[1]:
        raise ParseError(f"matrix must be square, got {a.shape[0]}x{a.shape[1]}", None, args.matrix)
    if b.shape[0] != a.shape[0]:
        raise ParseError(f"rhs has {b.shape[0]} rows, matrix has {a.shape[0]}", None, args.rhs)
    if b.shape[1] == 1:
        b = replace(b, data=b.data[:, 0])
    inv = cfg.raw["invert"]
    res = invert(InvProblem(a, b, spec=spec, n_taylor=cfg.n_taylor, early_stop=inv["early_stop"],
                            refine=inv["refine"], noise=inv["noise"], seed=cfg.seed,
                            s=cfg.arch.s, split=inv["split"]))
    x = res.x
    if np.ndim(x.frac_bits):
        # per-column exponents: bring all columns onto the finest common grid
        from .fixedpoint import shift

        f = int(np.max(x.frac_bits))
        x = replace(x, data=shift(x.data, f - np.asarray(x.frac_bits)), frac_bits=f,
                    bits=x.bits + int(f - np.min(x.frac_bits)))
    x_text = format_matrix(x)
    report = {"x": x_text.splitlines(), "iterations": res.iterations_used, "cycles": res.cycles,
              "converged": res.converged, "residual_norm": res.residual_norm,
              "col_iterations": res.col_iterations, "rho": res.rho}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "x.txt").write_text(x_text)
    _emit(args, "invert", report, cfg)
    if not res.converged:
        log.error("inversion did not converge within %d terms", cfg.n_taylor)
        return NonConvergenceError.exit_code
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args, _quant_override(args.bits))
    sw = cfg.raw["sweep"]
    rows = convergence_sweep(sw["sizes"], sw["kappas"], sw["trials"], cfg.quant, cfg.seed,
                             n_max=cfg.n_taylor, families=tuple(sw["families"]))
    _emit(args, "sweep", {"rows": rows}, cfg)
    return 0


def cmd_map(args) -> int:
    cfg = _config(args)
    layers = cfg.workload
    if not layers:
        raise ParseError("workload is empty")
    ledger, plan, writes = build_ledger(layers, cfg.quant, cfg.params, cfg.arch, cfg.raw["batches"],
                                        cfg.raw["cadence"], cfg.n_taylor)
    occupation = {}
    for i, layer in enumerate(layers):
        name = layer.name or f"layer{i}"
        occupation[name] = {"plateau": plateau_value(layer, cfg.arch.s),
                            "rows": occupation_vs_blocksize(layer, cfg.raw["block_sizes"], cfg.arch.s)}
    layer_dims = [{"name": layer.name or f"layer{i}", "a_dim": layer.a_dim, "g_dim": layer.g_dim,
                   "a_blocks": layer.a_blocks, "g_blocks": layer.g_blocks}
                  for i, layer in enumerate(layers)]
    report = {"plan": plan.to_dict(), "ledger": ledger.to_dict(), "writes": writes.to_dict(),
              "layers": layer_dims, "occupation_vs_block_size": occupation}
    _emit(args, "map", report, cfg)
    if plan.violations:
        for v in plan.violations:
            log.error("%s %s: %s", v["layer"], v["node"], v["message"])
        return CapacityError.exit_code
    return 0


def cmd_dse(args) -> int:
    cfg = _config(args)
    rows = dse_sweep(cfg.workload, cfg.raw["dse"]["ratios"], cfg.arch, cfg.quant, cfg.n_taylor)
    best = max(rows, key=lambda r: r["gops_per_mm2"])
    _emit(args, "dse", {"rows": rows, "best_ratio": best["vmm_per_inv"], "area": area_rollup(cfg.arch)}, cfg)
    return 0


def cmd_train_demo(args) -> int:
    extra = {"demo": {"bits": args.bits}} if args.bits else {}
    cfg = _config(args, extra)
    demo = cfg.demo
    if args.n_taylor is not None:
        demo = replace(demo, n_taylor=args.n_taylor)
    curves = precision_study(cfg.raw["demo"]["bits"], seed=cfg.seed, cfg=demo)
    final = {str(b): c[-1]["loss"] for b, c in curves.items()}
    _emit(args, "train-demo", {"curves": {str(b): c for b, c in curves.items()}, "final_loss": final}, cfg)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    cfg = _config(args)
    checks = run_selftest(cfg.seed)
    _emit(args, "selftest", {"checks": checks, "passed": all(c["ok"] for c in checks)}, cfg)
    return 0 if all(c["ok"] for c in checks) else 1


def cmd_schema(args) -> int:
    sys.stdout.write(dumps(SCHEMA))
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--out", metavar="DIR", help="write reports here instead of stdout")
    common.add_argument("--n-taylor", dest="n_taylor", type=int, metavar="N")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pimsolve", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pimsolve {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    inv = sub.add_parser("invert", parents=[common], help="solve A x = b from matrix files")
    inv.add_argument("--matrix", required=True, metavar="PATH")
    inv.add_argument("--rhs", required=True, metavar="PATH")
    inv.add_argument("--bits", type=int, help="q_a = q_b = q_x")
    inv.set_defaults(func=cmd_invert)

    sw = sub.add_parser("sweep", parents=[common], help="convergence table over random systems")
    sw.add_argument("--bits", type=int, help="q_a = q_b = q_x")
    sw.set_defaults(func=cmd_sweep)

    mp = sub.add_parser("map", parents=[common], help="map a workload and report costs")
    mp.add_argument("--block-size", dest="block_size", type=int, metavar="B")
    mp.set_defaults(func=cmd_map)

    ds = sub.add_parser("dse", parents=[common], help="VMM:INV ratio sweep")
    ds.add_argument("--block-size", dest="block_size", type=int, metavar="B")
    ds.set_defaults(func=cmd_dse)

    td = sub.add_parser("train-demo", parents=[common], help="K-FAC precision study")
    td.add_argument("--bits", type=int, action="append", choices=(8, 12, 16, 32),
                    help="SOI precision; repeat for several")
    td.set_defaults(func=cmd_train_demo)

    st = sub.add_parser("selftest", parents=[common], help="oracle equivalence checks")
    st.set_defaults(func=cmd_selftest)

    sc = sub.add_parser("schema", help="print the config JSON schema")
    sc.set_defaults(func=cmd_schema, verbose=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; ours is 1
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PimsolveError as exc:
        print(f"pimsolve: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
