"""Area, cycle and write accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .crossbar import ArchConfig, AreaTable, vmm_cycles
from .dfg import LayerSpec
from .fixedpoint import QuantSpec
from .mapper import CostParams, MappingPlan, decide_wu_order, layer_name, map_workload, weight_crossbars


@dataclass
class CostLedger:
    cycles: dict = field(default_factory=lambda: {p: 0 for p in ("FP", "BP", "WU", "SU")})
    writes: dict = field(default_factory=lambda: {p: 0 for p in ("FP", "BP", "WU", "SU")})
    inv_crossbars: int = 0
    vmm_crossbars: int = 0
    area: dict = field(default_factory=dict)

    def add_cycles(self, phase: str, n: int) -> None:
        if n < 0:
            raise ValueError("cycle counts are non-negative")
        self.cycles[phase] += n

    def add_writes(self, phase: str, n: int) -> None:
        if n < 0:
            raise ValueError("write counts are non-negative")
        self.writes[phase] += n

    def to_dict(self) -> dict:
        return {"cycles": dict(self.cycles), "writes": dict(self.writes),
                "inv_crossbars": self.inv_crossbars, "vmm_crossbars": self.vmm_crossbars,
                "area": dict(self.area)}


def area_rollup(cfg: ArchConfig | None = None) -> dict:
    """Area in mm^2 at every aggregation level.

    ``*_total`` entries multiply a unit by its count: 28 VMM crossbars per
    sub-tile, 16 sub-tiles per tile, 22 tiles per chip with the defaults.
    """
    cfg = cfg or ArchConfig()
    t: AreaTable = cfg.area_table
    vmm_xb = t.adc + t.dac + t.reram_vmm
    inv_xb = t.adc + t.dac + t.reram_inv + t.opamp
    n_vmm = cfg.vmm_per_subtile
    vmm_group = n_vmm * vmm_xb
    sub_tile = vmm_group + inv_xb + t.ir + t.or_ + t.act + t.shift_add + t.mul
    sub_tiles = cfg.inv_per_tile * sub_tile
    tile = sub_tiles + t.edram + t.bus
    tiles = cfg.tiles * tile
    return {
        "vmm_crossbar": vmm_xb,
        "vmm_crossbars_per_subtile": n_vmm,
        "vmm_group": vmm_group,
        "inv_crossbar": inv_xb,
        "sub_tile": sub_tile,
        "sub_tile_total": sub_tiles,
        "tile": tile,
        "tile_total": tiles,
        "chip": tiles + t.hyper_transport,
    }


@dataclass(frozen=True)
class WriteReport:
    batches: int
    cadence: int
    weight_writes: int
    soi_writes: int
    inv_compute_writes: int
    soi_updates: int

    @property
    def soi_frequency(self) -> Fraction:
        """SOI programming events per batch, per INV crossbar."""
        return Fraction(self.soi_updates, self.batches) if self.batches else Fraction(0)

    @property
    def weight_frequency(self) -> Fraction:
        return Fraction(1) if self.batches else Fraction(0)

    @property
    def frequency_ratio(self) -> Fraction:
        return self.soi_frequency / self.weight_frequency if self.batches else Fraction(0)

    def to_dict(self) -> dict:
        return {"batches": self.batches, "cadence": self.cadence, "weight_writes": self.weight_writes,
                "soi_writes": self.soi_writes, "inv_compute_writes": self.inv_compute_writes,
                "soi_updates": self.soi_updates, "soi_frequency": str(self.soi_frequency),
                "frequency_ratio": str(self.frequency_ratio)}


def write_accounting(batches: int, cadence: int = 10, plan: MappingPlan | None = None, *,
                     vmm_crossbars: int | None = None, inv_crossbars: int | None = None,
                     inv_solves: int = 0) -> WriteReport:
    """Write events over ``batches`` training batches.

    Weights are reprogrammed every batch, SOI banks every ``cadence``
    batches.  Solving on a programmed bank writes nothing, however many
    ``inv_solves`` ran.
    """
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    if batches < 0:
        raise ValueError("batches must be >= 0")
    if plan is not None:
        tot = plan.totals()
        vmm_crossbars = tot["vmm_crossbars"] if vmm_crossbars is None else vmm_crossbars
        inv_crossbars = tot["inv_crossbars"] if inv_crossbars is None else inv_crossbars
    vmm_crossbars = vmm_crossbars or 0
    inv_crossbars = inv_crossbars or 0
    updates = batches // cadence
    return WriteReport(batches, cadence, batches * vmm_crossbars, updates * inv_crossbars, 0, updates)


def phase_cycles(plan: MappingPlan, layers: list[LayerSpec], spec: QuantSpec | None = None) -> dict:
    """Per-phase cycle totals.

    FP and BP are pipelined across layers, so each costs its slowest stage
    (``hw * c_VMM`` per layer).  WU and SU add up the chosen pattern costs.
    """
    spec = spec or QuantSpec()
    names = [layer_name(layer, i) for i, layer in enumerate(layers)]
    mapped = set(plan.layers())
    missing = [n for n in names if n not in mapped]
    if missing:
        raise ValueError(f"plan does not cover layers: {missing}")
    c_vmm = vmm_cycles(spec.q_x, spec)
    stage = max((layer.hw * c_vmm for layer in layers), default=0)
    out = {"FP": stage, "BP": stage, "WU": 0, "SU": 0}
    wanted = set(names)
    for e in plan.entries:
        if e.layer in wanted:
            out["SU" if e.pattern == "mm-inv" else "WU"] += e.cycles
    return out


def build_ledger(layers: list[LayerSpec], spec: QuantSpec | None = None, params: CostParams | None = None,
                 arch: ArchConfig | None = None, batches: int = 100, cadence: int = 10,
                 n_taylor: int = 18, plan: MappingPlan | None = None) -> tuple[CostLedger, MappingPlan, WriteReport]:
    spec = spec or QuantSpec()
    arch = arch or ArchConfig()
    plan = plan or map_workload(layers, spec, params, arch, n_taylor=n_taylor)
    ledger = CostLedger()
    for phase, c in phase_cycles(plan, layers, spec).items():
        ledger.add_cycles(phase, c)
    tot = plan.totals()
    ledger.inv_crossbars = tot["inv_crossbars"]
    ledger.vmm_crossbars = tot["vmm_crossbars"]
    wr = write_accounting(batches, cadence, plan)
    ledger.add_writes("WU", wr.weight_writes)
    ledger.add_writes("SU", wr.soi_writes)
    ledger.area = area_rollup(arch)
    return ledger, plan, wr


def dse_sweep(layers: list[LayerSpec], ratios=(4, 8, 12, 16, 20, 24, 28, 32, 40, 48),
              arch: ArchConfig | None = None, spec: QuantSpec | None = None, n_taylor: int = 18,
              cycle_ns: float = 100.0) -> list[dict]:
    """Exploratory VMM:INV ratio sweep under a coarse throughput model.

    Each layer's FP+BP work runs on the VMM crossbars and its WU work on the
    INV crossbars; a layer that needs more crossbars than a chip has is
    time-multiplexed.  Throughput counts multiply-accumulates as 2 ops.
    The numbers are only meaningful relative to each other.
    """
    arch = arch or ArchConfig()
    spec = spec or QuantSpec()
    c_vmm = vmm_cycles(spec.q_x, spec)
    rows = []
    for r in ratios:
        cfg = replace(arch, vmm_per_tile=r * arch.inv_per_tile)
        vmm_total = cfg.vmm_per_tile * cfg.tiles
        inv_total = cfg.inv_per_tile * cfg.tiles
        ops = 0
        cycles = 0
        for layer in layers:
            need_v = weight_crossbars(layer, spec, cfg.s)
            cycles += 2 * layer.hw * c_vmm * math.ceil(need_v / vmm_total)
            ops += 2 * 2 * layer.hw * layer.a_dim * layer.c_out
            wu = decide_wu_order(layer, spec, n_taylor)
            need_i = sum(-(-d // cfg.s) ** 2 for d in layer.a_blocks + layer.g_blocks)
            cycles += wu.cycles * math.ceil(need_i / inv_total)
            ops += 2 * (layer.a_dim ** 2 * layer.c_out + layer.c_out ** 2 * layer.a_dim)
        area = area_rollup(cfg)["chip"]
        seconds = cycles * cycle_ns * 1e-9
        gops = ops / seconds / 1e9 if seconds else 0.0
        rows.append({"vmm_per_inv": r, "vmm_per_tile": cfg.vmm_per_tile, "area_mm2": area,
                     "cycles": cycles, "gops": gops, "gops_per_mm2": gops / area if area else 0.0})
    return rows
