"""Strategy selection for MM->INV and successive-INV patterns."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .crossbar import ArchConfig, vmm_cycles
from .dfg import Dfg, LayerSpec, block_partition, build_kfac_graphs
from .errors import CapacityError
from .fixedpoint import QuantSpec
from .hpinv import cycles_fused, cycles_plain


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class CostParams:
    alpha: float = 1.0
    beta: float = 0.1
    s: int = 256

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.s < 1:
            raise ValueError("s must be >= 1")


@dataclass
class MmInvDecision:
    strategy: str  # "fuse" | "no-fuse"
    c_fuse: float
    c_nonfuse: float
    occ_fuse: int
    occ_nonfuse: int
    cycles: int
    beta_flip: float | None  # beta at which the two costs are equal
    forced: str | None = None


def mm_inv_costs(m: int, n: int, k_dim: int, spec: QuantSpec, params: CostParams, n_taylor: int = 18):
    s = params.s
    occ_f = _ceil(n, s) * (_ceil(m, s) + _ceil(k_dim, s))
    occ_p = _ceil(m, s) * _ceil(k_dim, s)
    cf, cp = cycles_fused(spec, n_taylor), cycles_plain(spec, n_taylor)
    return (params.alpha * cf + params.beta * occ_f, params.alpha * cp + params.beta * occ_p,
            occ_f, occ_p, cf, cp)


def decide_mm_inv(m: int, n: int, k_dim: int, spec: QuantSpec | None = None,
                  params: CostParams | None = None, n_taylor: int = 18,
                  capacity: int | None = None) -> MmInvDecision:
    """Fuse an ``(m x n) @ (n x k_dim)`` product into the inversion or not.

    Ties go to no-fuse.  With ``capacity`` set, a strategy needing more INV
    crossbars than that is ruled out; if both are, :class:`CapacityError`.
    """
    spec = spec or QuantSpec()
    params = params or CostParams()
    c_f, c_p, occ_f, occ_p, cf, cp = mm_inv_costs(m, n, k_dim, spec, params, n_taylor)
    strategy = "fuse" if c_f < c_p else "no-fuse"
    forced = None
    if capacity is not None:
        fits = {"fuse": occ_f <= capacity, "no-fuse": occ_p <= capacity}
        if not any(fits.values()):
            raise CapacityError(f"MM-INV {m}x{n}x{k_dim}: fuse needs {occ_f}, plain {occ_p} INV "
                                f"crossbars, tile has {capacity}")
        if not fits[strategy]:
            forced = f"{strategy} exceeds {capacity} INV crossbars"
            strategy = "no-fuse" if strategy == "fuse" else "fuse"
    flip = None
    if occ_p != occ_f:
        b = params.alpha * (cf - cp) / (occ_p - occ_f)
        flip = b if b >= 0 else None
    return MmInvDecision(strategy, c_f, c_p, occ_f, occ_p, cf if strategy == "fuse" else cp, flip, forced)


@dataclass
class WuDecision:
    strategy: str  # "strategy1" | "strategy2"
    cycles1: int
    cycles2: int

    @property
    def cycles(self) -> int:
        return self.cycles1 if self.strategy == "strategy1" else self.cycles2


def wu_costs(layer: LayerSpec, spec: QuantSpec, n_taylor: int = 18) -> tuple[int, int]:
    """Strategy 1 applies A^-1 and G^-1 to the gradient matrix,
    strategy 2 to the activations and errors before their product."""
    c_inv = cycles_plain(spec, n_taylor)
    c_vmm = vmm_cycles(spec.q_x, spec)
    c1 = (layer.a_dim + layer.c_out) * c_inv + c_vmm
    c2 = layer.hw * c_inv + layer.c_out * c_vmm
    return c1, c2


def decide_wu_order(layer: LayerSpec, spec: QuantSpec | None = None, n_taylor: int = 18) -> WuDecision:
    c1, c2 = wu_costs(layer, spec or QuantSpec(), n_taylor)
    return WuDecision("strategy1" if c1 <= c2 else "strategy2", c1, c2)


def occupation_vs_blocksize(layer: LayerSpec, block_sizes, s: int = 256) -> list[dict]:
    """INV crossbars for A's blocks, each mapped the cheaper way."""
    hw_t = _ceil(layer.hw, s)
    rows = []
    for b in block_sizes:
        blocks = block_partition(layer.a_dim, b)
        total = sum(min(_ceil(d, s) ** 2, 2 * hw_t * _ceil(d, s)) for d in blocks)
        rows.append({"block_size": int(b), "blocks": len(blocks), "inv_crossbars": total})
    return rows


def plateau_value(layer: LayerSpec, s: int = 256) -> float:
    return 2 * layer.hw * layer.a_dim / s ** 2


# -- whole-workload mapping -------------------------------------------------


@dataclass
class PatternEntry:
    layer: str
    pattern: str  # "mm-inv" or "wu-order"
    nodes: list  # (phase, node id) covered by this decision
    strategy: str
    inv_crossbars: int
    vmm_crossbars: int
    cycles: int
    detail: dict = field(default_factory=dict)


@dataclass
class MappingPlan:
    entries: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    graphs: dict = field(default_factory=dict, repr=False)

    def totals(self) -> dict:
        out = {"inv_crossbars": 0, "vmm_crossbars": 0, "cycles": {"SU": 0, "WU": 0}}
        for e in self.entries:
            out["inv_crossbars"] += e.inv_crossbars
            out["vmm_crossbars"] += e.vmm_crossbars
            out["cycles"]["SU" if e.pattern == "mm-inv" else "WU"] += e.cycles
        return out

    def layers(self) -> list[str]:
        return sorted({e.layer for e in self.entries})

    def uncovered_inv_nodes(self) -> list:
        covered = {}
        for e in self.entries:
            for key in e.nodes:
                covered[(e.layer, *key)] = covered.get((e.layer, *key), 0) + 1
        missing = []
        for lname, graphs in self.graphs.items():
            for phase in ("SU", "WU"):
                for node in graphs[phase].find("INV"):
                    if covered.get((lname, phase, node.id), 0) != 1:
                        missing.append((lname, phase, node.id))
        return missing

    def to_dict(self) -> dict:
        return {"entries": [asdict(e) for e in self.entries], "totals": self.totals(),
                "violations": list(self.violations)}


def layer_name(layer: LayerSpec, i: int) -> str:
    return layer.name or f"layer{i}"


def weight_crossbars(layer: LayerSpec, spec: QuantSpec, s: int) -> int:
    """VMM crossbars holding ``W``: one per s x s tile and cell slice."""
    return _ceil(layer.a_dim, s) * _ceil(layer.c_out, s) * _ceil(spec.q_a, spec.r_c)


def map_layer(layer: LayerSpec, name: str, spec: QuantSpec, params: CostParams, arch: ArchConfig,
              damping: float = 1e-2, n_taylor: int = 18) -> tuple[list, list, dict]:
    graphs = build_kfac_graphs(layer, damping)
    entries, violations = [], []
    su: Dfg = graphs["SU"]
    for node in su.find("INV"):
        damped = su.producer(node)
        mmt = su.producer(damped)
        m, n = su.producer(mmt).shape  # factor m x n, product m x m
        try:
            d = decide_mm_inv(m, n, m, spec, params, n_taylor, capacity=arch.inv_per_tile)
        except CapacityError as exc:
            violations.append({"layer": name, "node": node.id, "message": str(exc)})
            continue
        occ = d.occ_fuse if d.strategy == "fuse" else d.occ_nonfuse
        entries.append(PatternEntry(
            name, "mm-inv", [("SU", node.id)], d.strategy, occ, 0, d.cycles,
            {"factor": node.attrs["factor"], "block": node.attrs["block"], "m": m, "n": n,
             "c_fuse": d.c_fuse, "c_nonfuse": d.c_nonfuse, "occ_fuse": d.occ_fuse,
             "occ_nonfuse": d.occ_nonfuse, "beta_flip": d.beta_flip, "forced": d.forced}))
    wu = decide_wu_order(layer, spec, n_taylor)
    wu_nodes = [("WU", n.id) for n in graphs["WU"].find("INV")]
    entries.append(PatternEntry(name, "wu-order", wu_nodes, wu.strategy, 0,
                                weight_crossbars(layer, spec, arch.s), wu.cycles,
                                {"cycles1": wu.cycles1, "cycles2": wu.cycles2}))
    return entries, violations, graphs


def map_workload(layers: list[LayerSpec], spec: QuantSpec | None = None, params: CostParams | None = None,
                 arch: ArchConfig | None = None, damping: float = 1e-2, n_taylor: int = 18) -> MappingPlan:
    spec = spec or QuantSpec()
    arch = arch or ArchConfig()
    params = params or CostParams(s=arch.s)
    plan = MappingPlan()
    for i, layer in enumerate(layers):
        name = layer_name(layer, i)
        entries, violations, graphs = map_layer(layer, name, spec, params, arch, damping, n_taylor)
        plan.entries += entries
        plan.violations += violations
        plan.graphs[name] = graphs
    return plan
