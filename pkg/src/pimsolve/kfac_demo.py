"""A small K-FAC trainer whose factor inversions run on the crossbar engine.

The network is a fully connected MLP (tanh hidden layers, linear output)
fit to a noisy teacher network with mean-squared error.  Inputs are
anisotropic, so a first-order method crawls along the flat directions and
the preconditioner matters.

For MSE the output-layer Fisher factor is the identity; hidden-layer G
factors are the exact per-sample Gauss-Newton factors ``J J^T`` obtained
by back-propagating the identity.  Each layer's weight matrix includes a
bias column, so the input factor A uses ``[a; 1]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dfg import LayerSpec
from .errors import NonConvergenceError
from .fixedpoint import Fixed, QuantSpec, fit_frac_bits, from_float, quantize
from .hpinv import InvProblem, invert, make_bank, split_matrix
from .mapper import decide_wu_order

log = logging.getLogger(__name__)

SUPPORTED_BITS = (8, 12, 16, 32)


@dataclass(frozen=True)
class DemoConfig:
    sizes: tuple = (16, 32, 8)
    n_train: int = 512
    batch: int = 64
    steps: int = 120
    lr: float = 0.15
    # relative to the mean diagonal of each factor; smaller values let
    # single batches swing the preconditioner enough to diverge
    damping: float = 0.3
    cadence: int = 10
    log_every: int = 10
    input_scales: tuple = (3.0, 0.1)  # spread of per-feature input std, log-spaced
    noise: float = 0.05
    n_taylor: int = 18
    stat_decay: float = 0.9
    seed: int = 0


@dataclass
class KfacState:
    weights: list
    lr: float
    damping: float = 1e-2
    cadence: int = 10
    soi_precision: int = 16
    n_taylor: int = 18
    step: int = 0
    soi: list = field(default_factory=list)  # per layer (A, G) damped, float
    solvers: list = field(default_factory=list)
    fallbacks: int = 0
    strategies: list = field(default_factory=list)
    stat_decay: float = 0.0  # running average of factor statistics across batches
    stats: list = field(default_factory=list)


def init_mlp(sizes, rng) -> list[np.ndarray]:
    ws = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
        ws.append(np.concatenate([w, np.zeros((n_out, 1))], axis=1))
    return ws


def make_dataset(cfg: DemoConfig, rng):
    d = cfg.sizes[0]
    scales = np.geomspace(cfg.input_scales[0], cfg.input_scales[1], d)
    x = rng.standard_normal((cfg.n_train, d)) * scales
    teacher = init_mlp(cfg.sizes, rng)
    for w in teacher:
        w[:, -1] = rng.standard_normal(w.shape[0]) * 0.5
    y, _ = forward(teacher, x)
    y = y + cfg.noise * rng.standard_normal(y.shape)
    return x, y


def forward(weights, x):
    """Returns output and per-layer ``(a_with_bias, pre_activation)``."""
    acts = []
    h = x.T
    for i, w in enumerate(weights):
        a = np.vstack([h, np.ones((1, h.shape[1]))])
        z = w @ a
        acts.append((a, z))
        h = np.tanh(z) if i < len(weights) - 1 else z
    return h.T, acts


def mse(weights, x, y) -> float:
    out, _ = forward(weights, x)
    return float(0.5 * np.mean(np.sum((out - y) ** 2, axis=1)))


def backward(weights, acts, err):
    """Gradients and per-layer pre-activation error signals.

    ``err`` is ``(d_out, B)``: d loss / d output per sample.
    """
    n = len(weights)
    deltas = [None] * n
    deltas[-1] = err
    for i in range(n - 2, -1, -1):
        back = weights[i + 1][:, :-1].T @ deltas[i + 1]
        deltas[i] = back * (1 - np.tanh(acts[i][1]) ** 2)
    grads = [deltas[i] @ acts[i][0].T for i in range(n)]
    return grads, deltas


def gn_factors(weights, acts):
    """K-FAC factors: ``A = E[a a^T]``, ``G = E[J J^T]`` per layer."""
    n = len(weights)
    bsz = acts[0][0].shape[1]
    d_out = weights[-1].shape[0]
    # Jacobians of the output w.r.t. each pre-activation, (B, d_l, d_out)
    jac = [None] * n
    jac[-1] = np.broadcast_to(np.eye(d_out), (bsz, d_out, d_out))
    for i in range(n - 2, -1, -1):
        back = np.einsum("kj,bjo->bko", weights[i + 1][:, :-1].T, jac[i + 1])
        jac[i] = back * (1 - np.tanh(acts[i][1].T) ** 2)[:, :, None]
    out = []
    for i in range(n):
        a = acts[i][0]
        a_f = a @ a.T / bsz
        g_f = np.einsum("bko,bjo->kj", jac[i], jac[i]) / bsz
        out.append((a_f, g_f))
    return out


def damp(m: np.ndarray, rel: float) -> np.ndarray:
    lam = rel * float(np.mean(np.diag(m)))
    return m + lam * np.eye(m.shape[0])


class FactorSolver:
    """Applies the inverse of one damped factor at a given precision.

    ``bits`` of 32 means a float64 dense solve.  Otherwise the factor is
    block-float quantized to ``bits`` and programmed into an INV bank once;
    each call quantizes the right-hand-side columns and runs the engine.
    """

    def __init__(self, m: np.ndarray, bits: int, n_taylor: int = 18, equilibrate: bool = True,
                 split: str = "round"):
        if not np.allclose(m, m.T):
            raise ValueError("factor is not symmetric")
        self.bits = bits
        self.m = m
        self.n_taylor = n_taylor
        if bits >= 32:
            self._chol = np.linalg.cholesky(m)
            return
        # power-of-two symmetric scaling P m P with a near-unit diagonal;
        # exact in fixed point and keeps small diagonals out of the low bits
        if equilibrate:
            self.p = np.ldexp(1.0, -np.rint(np.log2(np.diag(m)) / 2).astype(int))
        else:
            self.p = np.ones(m.shape[0])
        scaled = m * self.p[:, None] * self.p[None, :]
        self.spec = QuantSpec(q_a=bits, q_b=bits, q_x=bits)
        self.a = quantize(scaled, bits, fit_frac_bits(scaled, bits))
        self.split = split
        a_h, a_l = split_matrix(self.a, self.spec, split)
        self.bank = make_bank(a_h, self.spec, a_l)

    def __call__(self, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
        if self.bits >= 32:
            y = np.linalg.solve(self._chol, rhs)
            return np.linalg.solve(self._chol.T, y), True
        d, f = from_float(rhs * self.p[:, None], self.bits)
        b = Fixed(d, self.bits, f)
        res = invert(InvProblem(self.a, b, spec=self.spec, n_taylor=self.n_taylor, split=self.split),
                     bank=self.bank)
        return res.x.to_float() * self.p[:, None], res.converged


def _layer_spec(w: np.ndarray, cols: int) -> LayerSpec:
    # an fc layer over a batch processes one column per sample
    return LayerSpec("fc", w.shape[1], w.shape[0]) if cols == 1 else \
        LayerSpec("conv", w.shape[1], w.shape[0], 1, 1, cols)


def update_stats(state: KfacState, acts) -> None:
    new = gn_factors(state.weights, acts)
    if not state.stats or state.stat_decay == 0:
        state.stats = new
        return
    d = state.stat_decay
    state.stats = [(d * a0 + (1 - d) * a1, d * g0 + (1 - d) * g1)
                   for (a0, g0), (a1, g1) in zip(state.stats, new)]


def refresh_soi(state: KfacState) -> None:
    state.soi = []
    state.solvers = []
    for a_f, g_f in state.stats:
        a_d, g_d = damp(a_f, state.damping), damp(g_f, state.damping)
        for m in (a_d, g_d):
            if np.min(np.linalg.eigvalsh(m)) <= 0:
                raise ValueError("damped factor is not positive definite")
        state.soi.append((a_d, g_d))
        try:
            state.solvers.append((FactorSolver(a_d, state.soi_precision, state.n_taylor),
                                  FactorSolver(g_d, state.soi_precision, state.n_taylor)))
        except NonConvergenceError:
            state.solvers.append(None)


def precondition(solvers, grad, a, delta, strategy: str):
    """``G^-1 grad A^-1`` by one of the two orderings.

    strategy1 solves against the gradient matrix, strategy2 against the
    activations and error signals before forming their product.
    """
    s_a, s_g = solvers
    if strategy == "strategy1":
        left, ok1 = s_a(grad.T)  # A^-1 grad^T
        res, ok2 = s_g(left.T)  # G^-1 (grad A^-1)
        return res, ok1 and ok2
    pa, ok1 = s_a(a)
    pg, ok2 = s_g(delta)
    return pg @ pa.T, ok1 and ok2


def kfac_step(state: KfacState, batch) -> tuple[KfacState, float]:
    x, y = batch
    out, acts = forward(state.weights, x)
    loss = float(0.5 * np.mean(np.sum((out - y) ** 2, axis=1)))
    bsz = x.shape[0]
    err = (out - y).T / bsz
    if not np.isfinite(loss):
        raise FloatingPointError("training diverged")
    grads, deltas = backward(state.weights, acts, err)
    update_stats(state, acts)
    if state.step % state.cadence == 0 or not state.solvers:
        refresh_soi(state)
    new_w = []
    state.strategies = []
    for i, (w, g) in enumerate(zip(state.weights, grads)):
        strategy = decide_wu_order(_layer_spec(w, bsz)).strategy
        state.strategies.append(strategy)
        solvers = state.solvers[i]
        ok = solvers is not None
        if ok:
            step, ok = precondition(solvers, g, acts[i][0], deltas[i], strategy)
        if not ok or not np.all(np.isfinite(step)):
            log.warning("layer %d: SOI solve failed, taking a gradient step", i)
            state.fallbacks += 1
            step = g
        new_w.append(w - state.lr * step)
    state.weights = new_w
    state.step += 1
    return state, loss


def train(cfg: DemoConfig, bits: int) -> list[dict]:
    """One run; returns the logged ``{"step", "loss"}`` trajectory."""
    if bits not in SUPPORTED_BITS:
        raise ValueError(f"bits must be one of {SUPPORTED_BITS}")
    rng = np.random.default_rng(cfg.seed)
    x, y = make_dataset(cfg, rng)
    weights = init_mlp(cfg.sizes, np.random.default_rng(cfg.seed + 1))
    state = KfacState(weights, cfg.lr, cfg.damping, cfg.cadence, bits, cfg.n_taylor,
                      stat_decay=cfg.stat_decay)
    order = np.random.default_rng(cfg.seed + 2)
    curve = []
    for t in range(cfg.steps):
        if t % cfg.log_every == 0:
            curve.append({"step": t, "loss": mse(state.weights, x, y), "fallbacks": state.fallbacks})
        idx = order.choice(cfg.n_train, cfg.batch, replace=False)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                state, _ = kfac_step(state, (x[idx], y[idx]))
                diverged = not np.isfinite(mse(state.weights, x, y))
        except (FloatingPointError, np.linalg.LinAlgError, ValueError):
            diverged = True
        if diverged:
            curve.append({"step": t + 1, "loss": float("inf"), "fallbacks": state.fallbacks})
            return curve
    if cfg.steps:
        curve.append({"step": cfg.steps, "loss": mse(state.weights, x, y), "fallbacks": state.fallbacks})
    return curve


def precision_study(bits_list=(8, 16, 32), epochs: int | None = None, seed: int = 0,
                    cfg: DemoConfig | None = None) -> dict:
    """Identical runs that differ only in SOI precision.

    ``epochs`` passes over the training set, when given, override
    ``cfg.steps``.
    """
    cfg = cfg or DemoConfig()
    cfg = replace(cfg, seed=seed)
    if epochs is not None:
        cfg = replace(cfg, steps=epochs * (cfg.n_train // cfg.batch))
    return {int(b): train(cfg, int(b)) for b in bits_list}
