"""Random test systems.

``kfac`` matrices mimic damped second-order factors: a sample covariance of
rectified activations plus just enough damping to hit a target condition
number.  ``haar`` matrices have uniformly random eigenvectors; their
8-bit high part is a much worse preconditioner and the Neumann series
usually diverges at large n, which the sweep reports as such.
"""
from __future__ import annotations

import numpy as np

from .fixedpoint import Fixed, quantize

FAMILIES = ("kfac", "haar", "identity")


def scale_to_unit(a: np.ndarray, peak: float = 0.999) -> np.ndarray:
    return a * (peak / np.max(np.abs(a)))


def kfac_matrix(n: int, kappa: float, rng: np.random.Generator, p: int | None = None) -> np.ndarray:
    if kappa <= 1:
        raise ValueError("kappa must exceed 1")
    p = p or int(rng.integers(2 * n, 4 * n + 1))
    s = np.zeros((n, n))
    while not np.any(s):  # tiny draws can be all zero after the ReLU
        act = np.maximum(rng.standard_normal((n, p)) + rng.uniform(-0.5, 0.5), 0.0)
        s = act @ act.T / p
    ev = np.linalg.eigvalsh(s)
    lmax, lmin = ev[-1], max(ev[0], 0.0)
    damp = max((lmax - kappa * lmin) / (kappa - 1), 0.0)
    return scale_to_unit(s + damp * np.eye(n))


def haar_matrix(n: int, kappa: float, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(0.0, np.log(kappa), n))
    lam[0], lam[-1] = 1.0, kappa
    return scale_to_unit((q * lam) @ q.T)


def random_system(family: str, n: int, kappa: float, rng: np.random.Generator,
                  bits: int = 16) -> tuple[Fixed, Fixed]:
    """Quantized ``(A, b)`` with ``b`` uniform over the full ``bits`` range."""
    if family == "identity":
        # frac one short of the maximum so that 1.0 is representable
        a = quantize(np.eye(n), bits, bits - 2)
    elif family == "kfac":
        a = quantize(kfac_matrix(n, kappa, rng), bits, bits - 1)
    elif family == "haar":
        a = quantize(haar_matrix(n, kappa, rng), bits, bits - 1)
    else:
        raise ValueError(f"unknown matrix family {family!r}")
    lim = 1 << (bits - 1)
    b = Fixed(rng.integers(-lim, lim, n), bits, bits - 1)
    return a, b


def random_factor(m: int, p: int, rng: np.random.Generator, bits: int = 16) -> Fixed:
    """Dense Gaussian factor scaled into [-1, 1)."""
    return quantize(scale_to_unit(rng.standard_normal((m, p))), bits, bits - 1)
