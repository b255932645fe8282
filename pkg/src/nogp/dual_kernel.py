"""Dual kernels of activation functions.

For a centred bivariate Gaussian ``(b1, b2)`` with variances ``k11, k22`` and
covariance ``k12`` the dual kernel of ``sigma`` is ``E[sigma(b1) sigma(b2)]``.
For ReLU this is the order-1 arc-cosine kernel

    sqrt(k11 k22) / (2 pi) * (sin t + (pi - t) cos t),   cos t = k12 / sqrt(k11 k22).
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .bivariate import BivariateKernel

#: Variances down to ``-NEG_TOL`` are treated as rounding noise and clamped to 0.
NEG_TOL = 1e-9


class ActivationKind(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value) -> "ActivationKind | None":
        if value is None or isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("", "none", "null"):
            return None
        return cls(text)


def _clamp_variance(k: np.ndarray, name: str) -> np.ndarray:
    if np.any(k < -NEG_TOL):
        raise ValueError(f"{name} has negative entries (min {np.min(k):.3g})")
    return np.maximum(k, 0.0)


def relu_dual(k11, k12, k22):
    """ReLU dual kernel, vectorised over broadcastable inputs.

    Returns a float for scalar inputs and an array otherwise.
    """
    k11 = _clamp_variance(np.asarray(k11, dtype=float), "k11")
    k22 = _clamp_variance(np.asarray(k22, dtype=float), "k22")
    k12 = np.asarray(k12, dtype=float)
    norm = np.sqrt(k11 * k22)
    if np.any(np.abs(k12) > norm * (1 + NEG_TOL) + NEG_TOL):
        raise ValueError("covariance exceeds the Cauchy-Schwarz bound sqrt(k11 k22)")
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.where(norm > 0, k12 / norm, 1.0)
    cos = np.clip(cos, -1.0, 1.0)
    theta = np.arccos(cos)
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    # Written so that theta = 0 gives exactly norm / 2.
    out = norm * (sin / (2 * np.pi) + (1.0 - theta / np.pi) * cos / 2)
    out = np.where(norm > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def apply_dual(kind, K: BivariateKernel) -> BivariateKernel:
    """Covariance of ``sigma`` applied entry-wise to a Gaussian process with kernel ``K``."""
    kind = ActivationKind.parse(kind)
    if kind is None or kind is ActivationKind.IDENTITY:
        return K
    if kind is not ActivationKind.RELU:
        raise ValueError(f"unsupported activation {kind!r}")
    diag = _clamp_variance(K.diagonal(), "kernel diagonal")
    out = np.empty_like(K.values)
    # one function row at a time keeps temporaries small for large kernels
    for i in range(K.n_functions):
        out[i] = relu_dual(diag[i][:, None], K.values[i], diag[:, None, :])
    return BivariateKernel(K.grid, out)
