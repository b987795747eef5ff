"""Dataflow graphs for one K-FAC training step of a single layer.

Conventions: the layer computes ``y = W a`` with ``a`` the unfolded input
of shape ``(c_in k^2, hw)``.  Graphs store the transposed weight
``w_t = W^T`` so that the update reads ``w_t -= eta * A^-1 (a g^T) G^-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PHASES = ("FP", "BP", "WU", "SU")
OPS = ("INPUT", "RESHAPE", "SLICE", "CONCAT", "MM", "MMT", "INV", "SCALE", "ADD", "ACT", "DAMP")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int
    c_out: int
    kernel: int = 1
    h: int = 1
    w: int = 1
    block_size: int = 1024
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"layer kind must be conv or fc, got {self.kind!r}")
        for f in ("c_in", "c_out", "kernel", "h", "w", "block_size"):
            if getattr(self, f) < 1:
                raise ValueError(f"LayerSpec.{f} must be >= 1")
        if self.kind == "fc" and (self.kernel, self.h, self.w) != (1, 1, 1):
            raise ValueError("fc layers have kernel = h = w = 1")

    @property
    def hw(self) -> int:
        return self.h * self.w

    @property
    def a_dim(self) -> int:
        return self.c_in * self.kernel ** 2

    @property
    def g_dim(self) -> int:
        return self.c_out

    @property
    def a_blocks(self) -> list[int]:
        return block_partition(self.a_dim, self.block_size)

    @property
    def g_blocks(self) -> list[int]:
        return block_partition(self.g_dim, self.block_size)


def block_partition(m: int, block: int) -> list[int]:
    if m < 1 or block < 1:
        raise ValueError("dimensions must be >= 1")
    full, rest = divmod(m, block)
    return [block] * full + ([rest] if rest else [])


def block_label(m: int, block: int = 1024) -> str:
    """Compact ``bB+r`` notation: b full blocks plus an r x r remainder."""
    full, rest = divmod(m, block)
    return f"{full}B+{rest}"


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    inputs: tuple
    shape: tuple
    attrs: dict = field(default_factory=dict, hash=False, compare=False)


class ShapeError(ValueError):
    pass


def _infer(op: str, shapes: list, attrs: dict) -> tuple:
    def need(k):
        if len(shapes) != k:
            raise ShapeError(f"{op} takes {k} inputs, got {len(shapes)}")

    if op == "INPUT":
        need(0)
        return tuple(attrs["shape"])
    if op == "RESHAPE":
        need(1)
        new = tuple(attrs["shape"])
        if np.prod(new) != np.prod(shapes[0]):
            raise ShapeError(f"cannot reshape {shapes[0]} to {new}")
        return new
    if op == "SLICE":
        need(1)
        axis = 0 if "rows" in attrs else 1
        lo, hi = attrs["rows"] if axis == 0 else attrs["cols"]
        if not 0 <= lo < hi <= shapes[0][axis]:
            raise ShapeError(f"slice {lo}:{hi} outside {shapes[0]} on axis {axis}")
        out = list(shapes[0])
        out[axis] = hi - lo
        return tuple(out)
    if op == "CONCAT":
        axis = attrs.get("axis", 0)
        rest = [s[:axis] + s[axis + 1:] for s in shapes]
        if not shapes or any(r != rest[0] for r in rest):
            raise ShapeError(f"CONCAT needs matching dims off axis {axis}, got {shapes}")
        out = list(shapes[0])
        out[axis] = sum(s[axis] for s in shapes)
        return tuple(out)
    if op == "MM":
        need(2)
        a, b = shapes
        a = a[::-1] if attrs.get("ta") else a
        b = b[::-1] if attrs.get("tb") else b
        if a[1] != b[0]:
            raise ShapeError(f"MM inner dims differ: {a} x {b}")
        return (a[0], b[1])
    if op == "MMT":
        need(1)
        return (shapes[0][0], shapes[0][0])
    if op == "DAMP":
        need(1)
        if shapes[0][0] != shapes[0][1]:
            raise ShapeError(f"DAMP needs a square matrix, got {shapes[0]}")
        return shapes[0]
    if op == "INV":
        # one input: program the matrix into INV crossbars (operator node),
        # two inputs: apply its inverse on the given side of the rhs
        if len(shapes) == 1:
            if shapes[0][0] != shapes[0][1]:
                raise ShapeError("INV needs a square matrix")
            return shapes[0]
        need(2)
        m, x = shapes
        if m[0] != m[1]:
            raise ShapeError("INV needs a square matrix")
        side = attrs.get("side", "left")
        if (side == "left" and x[0] != m[0]) or (side == "right" and x[1] != m[0]):
            raise ShapeError(f"INV {side}: {m} against {x}")
        return x
    if op in ("SCALE", "ACT"):
        need(1)
        return shapes[0]
    if op == "ADD":
        need(2)
        if shapes[0] != shapes[1]:
            raise ShapeError(f"ADD shapes differ: {shapes}")
        return shapes[0]
    raise ShapeError(f"unknown op {op}")


class Dfg:
    """A single-phase graph.  Nodes are appended in topological order, so
    the graph is acyclic by construction."""

    def __init__(self, phase: str):
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self.phase = phase
        self.nodes: list[Node] = []
        self.outputs: dict[str, int] = {}

    def add(self, op: str, *inputs: int, **attrs) -> int:
        if op not in OPS:
            raise ValueError(f"unknown op {op!r}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"input {i} does not precede the new node")
        shape = _infer(op, [self.nodes[i].shape for i in inputs], attrs)
        node = Node(len(self.nodes), op, tuple(inputs), shape, attrs)
        self.nodes.append(node)
        return node.id

    def edges(self) -> list[tuple[int, int, tuple]]:
        return [(i, n.id, self.nodes[i].shape) for n in self.nodes for i in n.inputs]

    def check(self) -> None:
        """Re-derive every shape from its inputs."""
        for n in self.nodes:
            if any(i >= n.id for i in n.inputs):
                raise ShapeError(f"node {n.id} consumes a later node")
            got = _infer(n.op, [self.nodes[i].shape for i in n.inputs], n.attrs)
            if got != n.shape:
                raise ShapeError(f"node {n.id} ({n.op}) recorded {n.shape}, inferred {got}")

    def find(self, op: str) -> list[Node]:
        return [n for n in self.nodes if n.op == op]

    def producer(self, node: Node, k: int = 0) -> Node:
        return self.nodes[node.inputs[k]]

    def __len__(self) -> int:
        return len(self.nodes)


ACTIVATIONS: dict[str, Callable] = {
    "identity": lambda x: x,
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
}


def build_kfac_graphs(layer: LayerSpec, damping: float, lr: float = 1.0, batch: int = 1,
                      activation: str = "identity") -> dict[str, Dfg]:
    """FP, BP, WU and SU graphs of one K-FAC step.

    The unfolded input carries ``hw * batch`` columns; SOI means over those
    columns are folded into MMT.  A and G are block-diagonal with blocks
    from :func:`block_partition`.
    """
    m_a, m_g = layer.a_dim, layer.g_dim
    cols = layer.hw * batch

    fp = Dfg("FP")
    raw = fp.add("INPUT", name="a_raw", shape=(layer.c_in, layer.kernel ** 2, cols))
    a = fp.add("RESHAPE", raw, shape=(m_a, cols))
    w = fp.add("INPUT", name="w_t", shape=(m_a, m_g))
    y = fp.add("MM", w, a, ta=True)
    fp.outputs["y"] = fp.add("ACT", y, fn=activation)

    bp = Dfg("BP")
    w = bp.add("INPUT", name="w_t", shape=(m_a, m_g))
    g = bp.add("INPUT", name="g", shape=(m_g, cols))
    bp.outputs["grad_in"] = bp.add("MM", w, g)

    su = Dfg("SU")
    for name, dim, blocks in (("a", m_a, layer.a_blocks), ("g", m_g, layer.g_blocks)):
        if name == "a":
            src = su.add("INPUT", name="a_raw", shape=(layer.c_in, layer.kernel ** 2, cols))
            src = su.add("RESHAPE", src, shape=(dim, cols))
        else:
            src = su.add("INPUT", name="g", shape=(dim, cols))
        lo = 0
        for j, size in enumerate(blocks):
            part = su.add("SLICE", src, rows=(lo, lo + size)) if len(blocks) > 1 else src
            cov = su.add("MMT", part, scale=1.0 / cols)
            damped = su.add("DAMP", cov, lam=damping)
            su.outputs[f"{name.upper()}{j}"] = su.add("INV", damped, factor=name, block=j)
            lo += size

    wu = Dfg("WU")
    a = wu.add("INPUT", name="a", shape=(m_a, cols))
    g = wu.add("INPUT", name="g", shape=(m_g, cols))
    grad = wu.add("SCALE", wu.add("MM", a, g, tb=True), factor=1.0 / cols)
    # left-multiply by the block-diagonal A^-1
    pieces, lo = [], 0
    for j, size in enumerate(layer.a_blocks):
        soi = wu.add("INPUT", name=f"A{j}", shape=(size, size))
        rows = wu.add("SLICE", grad, rows=(lo, lo + size)) if len(layer.a_blocks) > 1 else grad
        pieces.append(wu.add("INV", soi, rows, side="left", factor="a", block=j))
        lo += size
    left = pieces[0] if len(pieces) == 1 else wu.add("CONCAT", *pieces)
    # right-multiply by the block-diagonal G^-1, column block by column block
    pieces, lo = [], 0
    for j, size in enumerate(layer.g_blocks):
        soi = wu.add("INPUT", name=f"G{j}", shape=(size, size))
        part = wu.add("SLICE", left, cols=(lo, lo + size)) if len(layer.g_blocks) > 1 else left
        pieces.append(wu.add("INV", soi, part, side="right", factor="g", block=j))
        lo += size
    delta = pieces[0] if len(pieces) == 1 else wu.add("CONCAT", *pieces, axis=1)
    wu.outputs["delta"] = delta
    w = wu.add("INPUT", name="w_t", shape=(m_a, m_g))
    wu.outputs["w_t"] = wu.add("ADD", w, wu.add("SCALE", delta, factor=-lr))

    graphs = {"FP": fp, "BP": bp, "WU": wu, "SU": su}
    for gr in graphs.values():
        gr.check()
    return graphs


def evaluate(graph: Dfg, feeds: dict[str, np.ndarray], inv: Callable | None = None) -> dict[str, np.ndarray]:
    """Evaluate in float64.  ``inv(matrix, rhs)`` may replace the dense
    solve used for INV nodes."""
    solve = inv or np.linalg.solve
    vals: list = []
    for n in graph.nodes:
        args = [vals[i] for i in n.inputs]
        op, at = n.op, n.attrs
        if op == "INPUT":
            v = np.asarray(feeds[at["name"]], dtype=np.float64)
            if v.shape != n.shape:
                raise ShapeError(f"feed {at['name']} has shape {v.shape}, expected {n.shape}")
        elif op == "RESHAPE":
            v = args[0].reshape(n.shape)
        elif op == "SLICE":
            if "rows" in at:
                v = args[0][at["rows"][0]:at["rows"][1]]
            else:
                v = args[0][:, at["cols"][0]:at["cols"][1]]
        elif op == "CONCAT":
            v = np.concatenate(args, axis=at.get("axis", 0))
        elif op == "MM":
            a = args[0].T if at.get("ta") else args[0]
            b = args[1].T if at.get("tb") else args[1]
            v = a @ b
        elif op == "MMT":
            v = at.get("scale", 1.0) * (args[0] @ args[0].T)
        elif op == "DAMP":
            v = args[0] + at["lam"] * np.eye(n.shape[0])
        elif op == "INV":
            if len(args) == 1:
                v = args[0]  # programmed operator: the matrix itself
            elif at.get("side", "left") == "left":
                v = solve(args[0], args[1])
            else:
                v = solve(args[0].T, args[1].T).T
        elif op == "SCALE":
            v = at["factor"] * args[0]
        elif op == "ADD":
            v = args[0] + args[1]
        elif op == "ACT":
            v = ACTIVATIONS[at.get("fn", "identity")](args[0])
        else:  # pragma: no cover
            raise ShapeError(op)
        vals.append(v)
    return {k: vals[i] for k, i in graph.outputs.items()}
