"""Covariance maps of infinite-width neural operator layers and their composition.

A layer ``H = A_k + W`` followed by an optional activation maps the covariance
``h`` of its inputs to

    A_{c_k}[h] + sigma_w^2 h          (then the activation's dual kernel),

where ``A_{c_k}`` integrates ``h`` against the covariance of the random
integral kernel.  Two kernel priors are supported:

* FNO: band-limited Fourier coefficients with variance ``sigma_k2``, giving
  ``sigma_k2 (2 pi)^{2d} sum_{|s|<=B} FS_[s,-s][h] exp(i s.(z - z'))``;
* toroidal Matern: a product of Matern kernels in the output and input
  variables, giving ``sigma_k2 (2 pi)^d c_z(z, z') sum_n FS_[n,-n][h] prod_j c_hat(n_j^2)``.

Composing the maps layer after layer gives the covariance of the infinite-width
network.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .bivariate import BivariateKernel
from .dual_kernel import ActivationKind, apply_dual
from .torus_spectral import (
    TWO_PI,
    GridFunction,
    SpectralFunction,
    TorusGrid,
    analysis_matrix,
    as_band,
    fourier_coeffs,
    mode_grid,
    synthesis_matrix,
)

logger = logging.getLogger(__name__)

DEFAULT_TRUNCATION = 128
DEFAULT_TAIL_TOL = 1e-6
DEFAULT_OVERSAMPLE = 4


class TruncationError(ValueError):
    """The omitted tail of a Matern series is too large relative to its retained mass."""


# --------------------------------------------------------------------------
# layer descriptions


def _parse_nu(nu) -> float:
    if isinstance(nu, str):
        nu = float(nu.strip().lower().replace("infinity", "inf"))
    nu = float(nu)
    if not nu > 0:
        raise ValueError(f"smoothness must be positive or inf, got {nu}")
    return nu


def _nu_to_json(nu: float):
    return "inf" if math.isinf(nu) else nu


def _lengthscales(ell) -> tuple[float, ...]:
    out = tuple(float(v) for v in np.atleast_1d(ell))
    if not out or any(not v > 0 for v in out):
        raise ValueError(f"lengthscales must be positive, got {out}")
    return out


@dataclass(frozen=True)
class FnoIntegral:
    """Band-limited kernel with i.i.d. Gaussian Fourier coefficients."""

    band: int | tuple[int, ...]
    sigma_k2: float

    def __post_init__(self):
        band = self.band
        if not np.isscalar(band):
            band = tuple(int(b) for b in band)
        else:
            band = int(band)
        if np.any(np.asarray(band) < 0):
            raise ValueError("band-limit must be non-negative")
        if self.sigma_k2 < 0:
            raise ValueError("sigma_k2 must be non-negative")
        object.__setattr__(self, "band", band)
        object.__setattr__(self, "sigma_k2", float(self.sigma_k2))


@dataclass(frozen=True)
class MaternIntegral:
    """Kernel drawn from a product of toroidal Matern GPs in output and input variables."""

    nu_x: float
    ell_x: tuple[float, ...]
    nu_z: float
    ell_z: tuple[float, ...]
    truncation: int = DEFAULT_TRUNCATION
    sigma_k2: float = 1.0
    unit_diagonal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nu_x", _parse_nu(self.nu_x))
        object.__setattr__(self, "nu_z", _parse_nu(self.nu_z))
        object.__setattr__(self, "ell_x", _lengthscales(self.ell_x))
        object.__setattr__(self, "ell_z", _lengthscales(self.ell_z))
        if int(self.truncation) < 1:
            raise ValueError("truncation must be >= 1")
        object.__setattr__(self, "truncation", int(self.truncation))
        if self.sigma_k2 < 0:
            raise ValueError("sigma_k2 must be non-negative")
        object.__setattr__(self, "sigma_k2", float(self.sigma_k2))


@dataclass(frozen=True)
class LayerSpec:
    """One layer: optional integral term, point-wise linear term, optional activation."""

    integral: FnoIntegral | MaternIntegral | None
    sigma_w2: float = 1.0
    activation: ActivationKind | None = None

    def __post_init__(self):
        if self.sigma_w2 < 0:
            raise ValueError("sigma_w2 must be non-negative")
        object.__setattr__(self, "sigma_w2", float(self.sigma_w2))
        object.__setattr__(self, "activation", ActivationKind.parse(self.activation))

    def to_dict(self) -> dict:
        act = None if self.activation is None else self.activation.value
        integ = self.integral
        if integ is None:
            return {"type": "linear", "sigma_w2": self.sigma_w2, "activation": act}
        if isinstance(integ, FnoIntegral):
            band = integ.band if isinstance(integ.band, int) else list(integ.band)
            return {"type": "fno", "band": band, "sigma_k2": integ.sigma_k2,
                    "sigma_w2": self.sigma_w2, "activation": act}
        return {
            "type": "matern",
            "nu_x": _nu_to_json(integ.nu_x), "ell_x": list(integ.ell_x),
            "nu_z": _nu_to_json(integ.nu_z), "ell_z": list(integ.ell_z),
            "truncation": integ.truncation, "sigma_k2": integ.sigma_k2,
            "unit_diagonal": integ.unit_diagonal,
            "sigma_w2": self.sigma_w2, "activation": act,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        kind = data.get("type", "linear")
        if kind == "linear":
            integral = None
        elif kind == "fno":
            integral = FnoIntegral(data["band"], data["sigma_k2"])
        elif kind == "matern":
            integral = MaternIntegral(
                data["nu_x"], data["ell_x"], data["nu_z"], data["ell_z"],
                data.get("truncation", DEFAULT_TRUNCATION), data.get("sigma_k2", 1.0),
                bool(data.get("unit_diagonal", False)),
            )
        else:
            raise ValueError(f"unknown layer type {kind!r}")
        return cls(integral, data.get("sigma_w2", 1.0), data.get("activation"))


@dataclass(frozen=True)
class NoGpConfig:
    """Ordered layers of an infinite-width neural operator with a scalar output."""

    layers: tuple[LayerSpec, ...]
    input_channels: int = 1

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a configuration needs at least one layer")
        if layers[-1].activation is not None:
            raise ValueError("the final layer is the output head and takes no activation")
        if int(self.input_channels) < 1:
            raise ValueError("input_channels must be >= 1")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_channels", int(self.input_channels))

    @property
    def depth(self) -> int:
        return len(self.layers)

    def to_dict(self) -> dict:
        return {"input_channels": self.input_channels,
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, data) -> "NoGpConfig":
        if isinstance(data, list):
            data = {"layers": data}
        return cls(tuple(LayerSpec.from_dict(d) for d in data["layers"]),
                   data.get("input_channels", 1))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NoGpConfig":
        return cls.from_dict(json.loads(text))


def fno_architecture(band, sigma_k2: float | None = None, sigma_w2: float = 1.0,
                     sigma_head2: float = 1.0, input_channels: int = 1) -> NoGpConfig:
    """One FNO hidden layer with ReLU followed by a linear scalar head.

    ``sigma_k2`` defaults to ``1 / (2B + 1)`` (per dimension product).
    """
    if sigma_k2 is None:
        sigma_k2 = 1.0 / float(np.prod([2 * b + 1 for b in np.atleast_1d(band)]))
    return NoGpConfig(
        (LayerSpec(FnoIntegral(band, sigma_k2), sigma_w2, ActivationKind.RELU),
         LayerSpec(None, sigma_head2, None)),
        input_channels,
    )


def matern_architecture(nu, ell, sigma_k2: float = 1.0, sigma_w2: float = 1.0,
                        sigma_head2: float = 1.0, truncation: int = DEFAULT_TRUNCATION,
                        input_channels: int = 1) -> NoGpConfig:
    """One toroidal-Matern hidden layer with ReLU and a linear scalar head."""
    integral = MaternIntegral(nu, ell, nu, ell, truncation, sigma_k2)
    return NoGpConfig(
        (LayerSpec(integral, sigma_w2, ActivationKind.RELU), LayerSpec(None, sigma_head2, None)),
        input_channels,
    )


# --------------------------------------------------------------------------
# Matern building blocks


def matern_spectral_density(lam, nu, ell, d: int = 1):
    """``c_hat(lam; nu, ell)``: ``exp(-ell^2 lam / 2)`` if ``nu`` is infinite,
    else ``(2 nu / ell^2 + lam)^(-nu - d/2)``."""
    lam = np.asarray(lam, dtype=float)
    nu = _parse_nu(nu)
    if math.isinf(nu):
        out = np.exp(-0.5 * ell * ell * lam)
    else:
        out = (2.0 * nu / (ell * ell) + lam) ** (-nu - d / 2.0)
    return float(out) if out.ndim == 0 else out


def matern_series_tail(nu, ell: float, truncation: int) -> tuple[float, float]:
    """``(tail, retained)`` masses of the one-dimensional spectral series.

    ``retained = sum_{|n|<=N} c_hat(n^2)`` and ``tail`` bounds the omitted
    ``sum_{|n|>N} c_hat(n^2)`` by ``2 int_N^inf c_hat(t^2) dt``.
    """
    nu = _parse_nu(nu)
    n = np.arange(1, truncation + 1)
    retained = matern_spectral_density(0.0, nu, ell) + 2.0 * np.sum(
        matern_spectral_density(n * n, nu, ell))
    if math.isinf(nu):
        tail = 2.0 * math.sqrt(math.pi / 2.0) / ell * special.erfc(ell * truncation / math.sqrt(2.0))
    else:
        tail = 2.0 * integrate.quad(lambda t: matern_spectral_density(t * t, nu, ell),
                                    truncation, np.inf)[0]
    return float(tail), float(retained)


def _check_tail(nu, ells, truncation, tol):
    if tol is None:
        return
    for ell in ells:
        tail, retained = matern_series_tail(nu, ell, truncation)
        if tail > tol * retained:
            raise TruncationError(
                f"Matern series (nu={nu}, ell={ell}) truncated at N={truncation} omits "
                f"{tail:.3g} against retained mass {retained:.3g}; increase the truncation"
            )


def _matern_1d(u: np.ndarray, nu, ell: float, truncation: int) -> np.ndarray:
    """``(1/2 pi) sum_{|n|<=N} c_hat(n^2) cos(n u)`` evaluated at differences ``u``."""
    n = np.arange(1, truncation + 1)
    dens = matern_spectral_density(n * n, nu, ell)
    u = np.asarray(u, dtype=float)
    series = matern_spectral_density(0.0, nu, ell) + 2.0 * (np.cos(u[..., None] * n) @ dens)
    return series / TWO_PI


def matern_diagonal(nu, ells, truncation: int) -> float:
    """``c(x, x)`` of the truncated product kernel (constant on the torus)."""
    return float(np.prod([_matern_1d(0.0, nu, ell, truncation) for ell in ells]))


def matern_kernel_eval(x, x2, nu, ell, truncation: int = DEFAULT_TRUNCATION,
                       tail_tol: float | None = DEFAULT_TAIL_TOL):
    """Tensor-product toroidal Matern kernel between points ``x`` and ``x2``.

    ``x`` and ``x2`` broadcast over leading axes with the last axis the torus
    dimension (a bare scalar is a one-dimensional point).  ``ell`` is a scalar
    or one lengthscale per dimension.  Raises :class:`TruncationError` when the
    omitted series tail exceeds ``tail_tol`` times the retained mass (pass
    ``tail_tol=None`` to skip the check).
    """
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x2.ndim == 0:
        x2 = x2[None]
    dim = max(x.shape[-1], x2.shape[-1])
    ells = _lengthscales(ell)
    if len(ells) == 1:
        ells = ells * dim
    if len(ells) != dim:
        raise ValueError(f"got {len(ells)} lengthscales for a {dim}-dimensional torus")
    _check_tail(nu, set(ells), truncation, tail_tol)
    diff = x - x2
    out = np.ones(diff.shape[:-1])
    for j, ell_j in enumerate(ells):
        out = out * _matern_1d(diff[..., j], nu, ell_j, truncation)
    return float(out) if out.ndim == 0 else out


def matern_kernel_joint(x, x2, nu, ell: float, truncation: int = DEFAULT_TRUNCATION):
    """Isotropic Matern kernel ``(2 pi)^-d sum_n cos(n.(x - x')) c_hat(|n|^2; nu, ell, d)``.

    Uses the summed eigenvalue of the d-torus rather than a product of
    one-dimensional series; for ``nu = inf`` the two coincide.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    diff = x - x2
    dim = diff.shape[-1]
    modes = mode_grid((truncation,) * dim)
    dens = matern_spectral_density(np.sum(modes * modes, axis=1), nu, float(ell), dim)
    flat = diff.reshape(-1, dim)
    out = np.cos(flat @ modes.T) @ dens / TWO_PI ** dim
    out = out.reshape(diff.shape[:-1])
    return float(out) if out.ndim == 0 else out


def _matern_grid_matrix(grid: TorusGrid, nu, ells, truncation: int) -> np.ndarray:
    """``c(x_p, x_q)`` over all grid node pairs, built per axis and Kronecker-combined."""
    if len(ells) == 1:
        ells = ells * grid.dim
    out = np.ones((1, 1))
    for axis, ell in zip(grid.axes(), ells):
        u = axis[:, None] - axis[None, :]
        out = np.kron(out, _matern_1d(u, nu, ell, truncation))
    return out


def _matern_weights(modes: np.ndarray, nu, ells) -> np.ndarray:
    if len(ells) == 1:
        ells = ells * modes.shape[1]
    w = np.ones(modes.shape[0])
    for j, ell in enumerate(ells):
        w = w * matern_spectral_density(modes[:, j] ** 2, nu, ell)
    return w


# --------------------------------------------------------------------------
# covariance maps on grid kernels


def input_cov(fs: Sequence, grid: TorusGrid, input_channels: int | None = None) -> BivariateKernel:
    """Empirical input covariance ``K[i, j, p, q] = f_j(x_q)^T f_i(x_p) / J0``."""
    values = _input_values(fs, grid)
    j0 = values.shape[2]
    if input_channels is not None and input_channels != j0:
        raise ValueError(f"inputs have {j0} channels, configuration expects {input_channels}")
    return BivariateKernel(grid, np.einsum("ipc,jqc->ijpq", values, values) / j0)


def _input_values(fs: Sequence, grid: TorusGrid) -> np.ndarray:
    out = []
    for f in fs:
        if isinstance(f, GridFunction):
            if f.grid.same_nodes(grid):
                out.append(f.flat)
            else:
                out.append(fourier_coeffs(f).on_grid(grid).flat)
        elif isinstance(f, SpectralFunction):
            out.append(f.on_grid(grid).flat)
        else:
            raise TypeError(f"unsupported input type {type(f).__name__}")
    channels = {v.shape[1] for v in out}
    if len(channels) != 1:
        raise ValueError(f"inputs have mismatched channel counts {sorted(channels)}")
    return np.stack(out)


def antidiagonal_spectrum(H: BivariateKernel, band) -> np.ndarray:
    """``FS_[s,-s]`` of every block: ``(1/M^2) sum_pq H[i,j,p,q] e^{-i s.x_p} e^{i s.x_q}``.

    Returns an ``(n, n, S)`` complex array over :func:`mode_grid` order.
    """
    E = analysis_matrix(H.grid, band)
    tmp = H.values @ np.conj(E).T
    return np.einsum("sp,ijps->ijs", E, tmp)


def _spectrum_to_kernel(spec: np.ndarray, grid: TorusGrid, band) -> np.ndarray:
    """``Re sum_s spec[i,j,s] exp(i s.(x_p - x_q))`` as an ``(n, n, M, M)`` array."""
    P = synthesis_matrix(grid.points(), band)
    out = ((spec[:, :, None, :] * P[None, None]) @ np.conj(P).T).real
    return out


def _symmetrized(values: np.ndarray) -> np.ndarray:
    return (values + values.transpose(1, 0, 3, 2)) / 2


def fno_integral_cov(H: BivariateKernel, band, sigma_k2: float) -> BivariateKernel:
    """Covariance of an FNO integral term applied to inputs with covariance ``H``.

    Requires the grid to resolve ``band`` (at least ``2B+1`` points per axis).
    """
    grid = H.grid
    band = grid.check_band(band)
    spec = antidiagonal_spectrum(H, band)
    scale = sigma_k2 * TWO_PI ** (2 * grid.dim)
    return BivariateKernel(grid, _symmetrized(scale * _spectrum_to_kernel(spec, grid, band)))


def matern_integral_cov(H: BivariateKernel, spec: MaternIntegral,
                        tail_tol: float | None = DEFAULT_TAIL_TOL) -> BivariateKernel:
    """Covariance of a toroidal-Matern integral term applied to inputs with covariance ``H``.

    The input-side sum runs over ``|n_j| <= N``; if the grid cannot resolve
    mode ``N`` the sum is cut at the grid's Nyquist band with a warning.
    """
    grid = H.grid
    nyq = grid.max_band()
    band = tuple(min(spec.truncation, b) for b in nyq)
    if any(b < spec.truncation for b in nyq):
        logger.warning("Matern input-side truncation %d reduced to grid Nyquist band %s",
                       spec.truncation, band)
    inner = antidiagonal_spectrum(H, band) @ _matern_weights(mode_grid(band), spec.nu_x, spec.ell_x)
    return BivariateKernel(grid, _matern_output(inner.real, grid, spec, tail_tol))


def _matern_output(inner: np.ndarray, grid: TorusGrid, spec: MaternIntegral,
                   tail_tol) -> np.ndarray:
    ell_z = spec.ell_z * grid.dim if len(spec.ell_z) == 1 else spec.ell_z
    _check_tail(spec.nu_z, set(ell_z), spec.truncation, tail_tol)
    cz = _matern_grid_matrix(grid, spec.nu_z, ell_z, spec.truncation)
    scale = spec.sigma_k2 * TWO_PI ** grid.dim
    if spec.unit_diagonal:
        ell_x = spec.ell_x * grid.dim if len(spec.ell_x) == 1 else spec.ell_x
        scale /= matern_diagonal(spec.nu_z, ell_z, spec.truncation)
        scale /= matern_diagonal(spec.nu_x, ell_x, spec.truncation)
    inner = (inner + inner.T) / 2
    return scale * inner[:, :, None, None] * cz[None, None]


def integral_cov(H: BivariateKernel, integral) -> BivariateKernel:
    if isinstance(integral, FnoIntegral):
        return fno_integral_cov(H, integral.band, integral.sigma_k2)
    if isinstance(integral, MaternIntegral):
        return matern_integral_cov(H, integral)
    raise TypeError(f"unknown integral parametrization {type(integral).__name__}")


def layer_cov_map(H: BivariateKernel, spec: LayerSpec) -> BivariateKernel:
    """``A_{c_k}[H] + sigma_w^2 H`` followed by the activation's dual kernel."""
    out = spec.sigma_w2 * H.values
    if spec.integral is not None:
        out = out + integral_cov(H, spec.integral).values
    return apply_dual(spec.activation, BivariateKernel(H.grid, out))


# --------------------------------------------------------------------------
# composition


def _band_of(integral, dim: int) -> tuple[int, ...] | None:
    if isinstance(integral, FnoIntegral):
        return as_band(integral.band, dim)
    return None


def work_grid(config: NoGpConfig, grid: TorusGrid, input_band,
              oversample: int = DEFAULT_OVERSAMPLE) -> tuple[TorusGrid, int]:
    """Grid on which intermediate covariances (and hidden activations) live.

    Returns ``(grid.refine(r), r)``.  ``r = 1`` unless an integral layer after
    the first one needs discrete Fourier coefficients: then every such band and
    the band of the (linear) signal must be resolved, and ``r >= oversample``
    if the signal went through an activation or a Matern layer first.
    """
    dim = grid.dim
    if all(layer.integral is None for layer in config.layers[1:]):
        return grid, 1
    need = np.zeros(dim, dtype=int)
    signal_band = np.asarray(as_band(input_band, dim))
    rough = False
    r0 = 1
    for k, layer in enumerate(config.layers):
        band = _band_of(layer.integral, dim)
        if k > 0 and layer.integral is not None:
            if band is not None:
                need = np.maximum(need, band)
            if rough:
                r0 = max(r0, int(oversample))
            else:
                need = np.maximum(need, signal_band)
        if band is not None:
            signal_band = np.maximum(signal_band, band)
        if isinstance(layer.integral, MaternIntegral) or layer.activation is not None:
            rough = True
    r = r0
    while not all(m * r >= 2 * b + 1 for m, b in zip(grid.sizes, need)):
        r += 1
    return (grid, 1) if r == 1 else (grid.refine(r), r)


@dataclass
class _Inputs:
    """Spectral and grid views of a fixed list of input functions."""

    spectral: list[SpectralFunction]
    raw: list[GridFunction | None]
    channels: int
    band: tuple[int, ...]
    _coeff_cache: dict = field(default_factory=dict)
    _value_cache: dict = field(default_factory=dict)

    @classmethod
    def from_functions(cls, fs: Sequence) -> "_Inputs":
        spectral, raw = [], []
        for f in fs:
            if isinstance(f, GridFunction):
                spectral.append(fourier_coeffs(f))
                raw.append(f)
            elif isinstance(f, SpectralFunction):
                spectral.append(f)
                raw.append(None)
            else:
                raise TypeError(f"unsupported input type {type(f).__name__}")
        if not spectral:
            raise ValueError("need at least one input function")
        channels = {f.channels for f in spectral}
        dims = {f.dim for f in spectral}
        if len(channels) != 1 or len(dims) != 1:
            raise ValueError("inputs must share channel count and torus dimension")
        band = tuple(int(b) for b in np.max([f.band for f in spectral], axis=0))
        return cls(spectral, raw, channels.pop(), band)

    def values(self, grid: TorusGrid) -> np.ndarray:
        """``(n, M, J0)`` values on ``grid``; raw samples are used where available."""
        key = (grid.sizes, grid.origin)
        if key not in self._value_cache:
            out = []
            for f, g in zip(self.spectral, self.raw):
                if g is not None and g.grid.same_nodes(grid):
                    out.append(g.flat)
                else:
                    out.append(f.on_grid(grid).flat)
            self._value_cache[key] = np.stack(out)
        return self._value_cache[key]

    def coeffs(self, band) -> np.ndarray:
        """``(n, S, J0)`` Fourier coefficients over the cube of ``band`` (zero-padded)."""
        band = tuple(band)
        if band not in self._coeff_cache:
            self._coeff_cache[band] = np.stack([f.with_band(band).flat for f in self.spectral])
        return self._coeff_cache[band]


class CovarianceComposer:
    """Composes layer covariance maps for a fixed set of input functions.

    The input covariance and the first layer's unit-variance integral term do
    not depend on the variances, so they are cached; repeated calls with
    different hyperparameters (as in marginal-likelihood optimisation) only
    redo the cheap parts.  First-layer integral terms use the inputs' exact
    Fourier coefficients, so they are free of aliasing on any grid.
    """

    def __init__(self, fs: Sequence, grid: TorusGrid, oversample: int = DEFAULT_OVERSAMPLE):
        self.inputs = _Inputs.from_functions(fs)
        if self.inputs.spectral[0].dim != grid.dim:
            raise ValueError("inputs and grid have different torus dimensions")
        self.grid = grid
        self.oversample = int(oversample)
        self._cache: dict = {}

    @property
    def n_functions(self) -> int:
        return len(self.inputs.spectral)

    def input_kernel(self, grid: TorusGrid) -> np.ndarray:
        key = ("input", grid.sizes)
        if key not in self._cache:
            v = self.inputs.values(grid)
            flat = v.reshape(-1, v.shape[2])
            n, m = v.shape[0], v.shape[1]
            mat = flat @ flat.T / self.inputs.channels
            self._cache[key] = mat.reshape(n, m, n, m).transpose(0, 2, 1, 3)
        return self._cache[key]

    def _fno_unit(self, band, grid: TorusGrid) -> np.ndarray:
        """First-layer FNO integral term with ``sigma_k2 = 1``."""
        key = ("fno", band, grid.sizes)
        if key not in self._cache:
            a = self.inputs.coeffs(band)                      # (n, S, J0)
            P = synthesis_matrix(grid.points(), band)         # (M, S)
            n, m = a.shape[0], P.shape[0]
            G = (P[None, :, :, None] * a[:, None, :, :]).reshape(n * m, -1)
            mat = G.real @ G.real.T + G.imag @ G.imag.T
            mat *= TWO_PI ** (2 * grid.dim) / self.inputs.channels
            mat = (mat + mat.T) / 2
            self._cache[key] = mat.reshape(n, m, n, m).transpose(0, 2, 1, 3)
        return self._cache[key]

    def _matern_first(self, spec: MaternIntegral, grid: TorusGrid) -> np.ndarray:
        band = tuple(min(spec.truncation, b) for b in self.inputs.band)
        a = self.inputs.coeffs(band)
        n = a.shape[0]
        w = _matern_weights(mode_grid(band), spec.nu_x, spec.ell_x)
        A = a.reshape(n, -1) if a.shape[2] == 1 else a.transpose(0, 2, 1).reshape(n, -1)
        W = np.tile(w, a.shape[2])
        inner = ((A * W) @ np.conj(A).T).real / self.inputs.channels
        return _matern_output(inner, grid, spec, DEFAULT_TAIL_TOL)

    def first_layer(self, layer: LayerSpec, grid: TorusGrid) -> np.ndarray:
        """Pre-activation covariance of the first layer on ``grid``."""
        out = layer.sigma_w2 * self.input_kernel(grid)
        integ = layer.integral
        if isinstance(integ, FnoIntegral):
            band = as_band(integ.band, grid.dim)
            out = out + integ.sigma_k2 * self._fno_unit(band, grid)
        elif isinstance(integ, MaternIntegral):
            out = out + self._matern_first(integ, grid)
        elif integ is not None:
            raise TypeError(f"unknown integral parametrization {type(integ).__name__}")
        return out

    def __call__(self, config: NoGpConfig) -> BivariateKernel:
        if config.input_channels != self.inputs.channels:
            raise ValueError(f"inputs have {self.inputs.channels} channels, "
                             f"configuration expects {config.input_channels}")
        work, factor = work_grid(config, self.grid, self.inputs.band, self.oversample)
        first = config.layers[0]
        K = apply_dual(first.activation, BivariateKernel(work, self.first_layer(first, work)))
        for layer in config.layers[1:]:
            K = layer_cov_map(K, layer)
        if factor > 1:
            K = K.restrict(self.grid, self.grid.subgrid_indices(factor))
        return BivariateKernel(self.grid, K.values)


def compose_covariance(config: NoGpConfig, fs: Sequence, grid: TorusGrid,
                       oversample: int = DEFAULT_OVERSAMPLE) -> BivariateKernel:
    """Covariance of the infinite-width network over ``fs`` evaluated on ``grid``."""
    return CovarianceComposer(fs, grid, oversample)(config)
