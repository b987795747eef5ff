"""Run configuration: a JSON document validated against a fixed schema."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema

from .crossbar import ArchConfig, AreaTable
from .dfg import LayerSpec
from .errors import ParseError
from .fixedpoint import QuantSpec
from .kfac_demo import DemoConfig
from .mapper import CostParams
from .workloads import WORKLOADS

_INT1 = {"type": "integer", "minimum": 1}
_NUM0 = {"type": "number", "minimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


LAYER_SCHEMA = _obj({
    "kind": {"enum": ["conv", "fc"]}, "c_in": _INT1, "c_out": _INT1, "kernel": _INT1,
    "h": _INT1, "w": _INT1, "block_size": _INT1, "name": {"type": "string"},
}, required=("kind", "c_in", "c_out"))

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "n_taylor": _INT1,
    "arch": _obj({
        "s": _INT1, "inv_per_tile": _INT1, "vmm_per_tile": _INT1, "tiles": _INT1, "cell_bits": _INT1,
        "area_table": _obj({f.name: _NUM0 for f in fields(AreaTable)}),
    }),
    "quant": _obj({f.name: _INT1 for f in fields(QuantSpec)}),
    "mapper": _obj({"alpha": _NUM0, "beta": _NUM0}),
    "workload": {"oneOf": [{"enum": sorted(WORKLOADS)}, {"type": "array", "items": LAYER_SCHEMA, "minItems": 1}]},
    "block_size": _INT1,
    "block_sizes": {"type": "array", "items": _INT1},
    "damping": _NUM0,
    "batches": {"type": "integer", "minimum": 0},
    "cadence": _INT1,
    "invert": _obj({"split": {"enum": ["truncate", "round"]}, "refine": {"type": "boolean"},
                    "noise": _NUM0, "early_stop": {"type": "boolean"}}),
    "sweep": _obj({
        "sizes": {"type": "array", "items": _INT1, "minItems": 1},
        "kappas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 1}, "minItems": 1},
        "trials": _INT1,
        "families": {"type": "array", "items": {"enum": ["kfac", "haar", "identity"]}, "minItems": 1},
    }),
    "dse": _obj({"ratios": {"type": "array", "items": _INT1, "minItems": 1}}),
    "demo": _obj({
        "bits": {"type": "array", "items": {"enum": [8, 12, 16, 32]}, "minItems": 1},
        "sizes": {"type": "array", "items": _INT1, "minItems": 2},
        "n_train": _INT1, "batch": _INT1, "steps": {"type": "integer", "minimum": 0},
        "lr": _NUM0, "damping": _NUM0, "cadence": _INT1, "log_every": _INT1,
        "input_scales": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                         "minItems": 2, "maxItems": 2},
        "noise": _NUM0, "n_taylor": _INT1, "stat_decay": {"type": "number", "minimum": 0, "maximum": 1},
    }),
})
SCHEMA["$schema"] = "https://json-schema.org/draft/2020-12/schema"
SCHEMA["title"] = "pimsolve run configuration"

DEFAULTS = {
    "seed": 0,
    "n_taylor": 18,
    "arch": {**{k: v for k, v in asdict(ArchConfig()).items() if k != "area_table"},
             "area_table": asdict(AreaTable())},
    "quant": asdict(QuantSpec()),
    "mapper": {"alpha": 1.0, "beta": 0.1},
    "workload": "soi_table",
    "block_size": 1024,
    "block_sizes": [256, 512, 1024, 2048, 4096],
    "damping": 1e-2,
    "batches": 100,
    "cadence": 10,
    "invert": {"split": "round", "refine": True, "noise": 0.0, "early_stop": True},
    "sweep": {"sizes": [16, 64, 256], "kappas": [10.0, 100.0], "trials": 20, "families": ["kfac"]},
    "dse": {"ratios": [4, 8, 12, 16, 20, 24, 28, 32, 40, 48]},
    "demo": {"bits": [8, 16, 32], **{k: (list(v) if isinstance(v, tuple) else v)
                                     for k, v in asdict(DemoConfig()).items() if k != "seed"}},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def n_taylor(self) -> int:
        return self.raw["n_taylor"]

    @property
    def arch(self) -> ArchConfig:
        a = dict(self.raw["arch"])
        a["area_table"] = AreaTable(**a["area_table"])
        return ArchConfig(**a)

    @property
    def quant(self) -> QuantSpec:
        return QuantSpec(**self.raw["quant"])

    @property
    def params(self) -> CostParams:
        return CostParams(s=self.raw["arch"]["s"], **self.raw["mapper"])

    @property
    def workload(self) -> list[LayerSpec]:
        w = self.raw["workload"]
        bs = self.raw["block_size"]
        if isinstance(w, str):
            from dataclasses import replace

            return [replace(layer, block_size=bs) for layer in WORKLOADS[w]()]
        return [LayerSpec(**{"block_size": bs, **layer}) for layer in w]

    @property
    def demo(self) -> DemoConfig:
        d = {k: v for k, v in self.raw["demo"].items() if k != "bits"}
        for k in ("sizes", "input_scales"):
            d[k] = tuple(d[k])
        return DemoConfig(seed=self.seed, **d)

    def resolved(self) -> dict:
        return copy.deepcopy(self.raw)


def validate(doc: dict, where: str = "config") -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"{where}: {path}: {exc.message}") from None


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then ``overrides``; each layer is validated
    and the merged result is checked again (so QuantSpec invariants hold)."""
    doc = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ParseError(f"cannot read config: {exc.strerror}", None, str(p)) from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, str(p)) from None
        validate(doc, str(p))
    merged = _merge(DEFAULTS, doc)
    if overrides:
        merged = _merge(merged, overrides)
    validate(merged)
    cfg = RunConfig(merged)
    try:
        cfg.quant, cfg.arch  # noqa: B018 - constructing checks cross-field invariants
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return cfg
