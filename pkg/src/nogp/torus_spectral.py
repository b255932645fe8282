"""Fourier-series arithmetic for band-limited functions on the flat torus.

Conventions used throughout the package:

* the torus is ``[-pi, pi)^d`` with the (unnormalised) Lebesgue measure;
* ``psi_s(x) = exp(-i s.x)`` and ``FS_s[f] = (2 pi)^-d * int f(x) psi_s(x) dx``,
  so that ``f(x) = sum_s FS_s[f] exp(i s.x)``;
* Fourier coefficients are stored densely over the cube
  ``{-B_1..B_1} x ... x {-B_d..B_d}``, followed by a trailing channel axis.

Grids are equispaced and periodic.  By default they are anchored at ``-pi``;
an explicit ``origin`` may shift them (e.g. the centred grid
``{-5, ..., 5} * 2 pi / 11``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * np.pi


def _as_tuple(value, dim: int | None = None, name: str = "value") -> tuple:
    arr = np.atleast_1d(np.asarray(value))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a scalar or a flat sequence")
    out = tuple(arr.tolist())
    if dim is not None:
        if len(out) == 1 and dim > 1:
            out = out * dim
        if len(out) != dim:
            raise ValueError(f"{name} has {len(out)} entries, expected {dim}")
    return out


def as_band(band, dim: int) -> tuple[int, ...]:
    """Normalise a scalar or per-dimension band-limit to a tuple of ints."""
    out = tuple(int(b) for b in _as_tuple(band, dim, "band"))
    if any(b < 0 for b in out):
        raise ValueError(f"band-limits must be non-negative, got {out}")
    return out


def mode_grid(band: Sequence[int]) -> np.ndarray:
    """Integer modes of the cube ``prod_j {-B_j..B_j}`` in row-major order.

    Returns an ``(S, d)`` integer array.
    """
    axes = [np.arange(-b, b + 1) for b in band]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class TorusGrid:
    """Equispaced periodic grid ``x_k = origin + 2 pi k / m`` per dimension."""

    sizes: tuple[int, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        sizes = tuple(int(m) for m in _as_tuple(self.sizes, name="sizes"))
        if not sizes or any(m < 1 for m in sizes):
            raise ValueError(f"grid sizes must be positive, got {sizes}")
        if self.origin is None:
            origin = (-np.pi,) * len(sizes)
        else:
            origin = tuple(float(o) for o in _as_tuple(self.origin, len(sizes), "origin"))
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered(cls, sizes) -> "TorusGrid":
        """Grid whose points are ``2 pi s / m`` for ``s = -(m // 2), ...``."""
        sizes = tuple(int(m) for m in _as_tuple(sizes, name="sizes"))
        return cls(sizes, tuple(-TWO_PI * (m // 2) / m for m in sizes))

    @classmethod
    def anchored_at(cls, point, sizes) -> "TorusGrid":
        """Grid with ``point`` as its first node."""
        sizes = tuple(int(m) for m in _as_tuple(sizes, name="sizes"))
        return cls(sizes, _as_tuple(point, len(sizes), "point"))

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(TWO_PI / m for m in self.sizes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [o + TWO_PI * np.arange(m) / m for o, m in zip(self.origin, self.sizes)]

    def points(self) -> np.ndarray:
        """All grid nodes as an ``(M, d)`` array in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def max_band(self) -> tuple[int, ...]:
        # For even m the +-m/2 mode is ambiguous and therefore excluded.
        return tuple((m - 1) // 2 for m in self.sizes)

    def supports_band(self, band) -> bool:
        band = as_band(band, self.dim)
        return all(2 * b + 1 <= m for b, m in zip(band, self.sizes))

    def check_band(self, band) -> tuple[int, ...]:
        band = as_band(band, self.dim)
        if not self.supports_band(band):
            raise ValueError(
                f"grid of sizes {self.sizes} cannot resolve band-limit {band}; "
                f"need at least {tuple(2 * b + 1 for b in band)} points"
            )
        return band

    def refine(self, factor: int) -> "TorusGrid":
        """Grid with ``factor`` times as many points, sharing every node of ``self``."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        return TorusGrid(tuple(m * factor for m in self.sizes), self.origin)

    def subgrid_indices(self, factor: int) -> np.ndarray:
        """Flat indices into ``self.refine(factor)`` of the nodes of ``self``."""
        fine = tuple(m * factor for m in self.sizes)
        idx = np.meshgrid(*[np.arange(m) * factor for m in self.sizes], indexing="ij")
        return np.ravel_multi_index([i.ravel() for i in idx], fine)

    def same_nodes(self, other: "TorusGrid") -> bool:
        return self.sizes == other.sizes and np.allclose(self.origin, other.origin, atol=1e-12)


def analysis_matrix(grid: TorusGrid, band) -> np.ndarray:
    """Discrete Fourier analysis ``E[s, p] = exp(-i s.x_p) / M`` of shape ``(S, M)``."""
    modes = mode_grid(as_band(band, grid.dim))
    return np.exp(-1j * modes @ grid.points().T) / grid.n_points


def synthesis_matrix(points: np.ndarray, band) -> np.ndarray:
    """Series evaluation ``P[p, s] = exp(i s.x_p)`` of shape ``(P, S)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    modes = mode_grid(as_band(band, points.shape[1]))
    return np.exp(1j * points @ modes.T)


def symmetrize(coeffs: np.ndarray, n_mode_axes: int) -> np.ndarray:
    """Project onto conjugate-symmetric coefficients over the last mode axes.

    ``coeffs`` has shape ``(..., *cube, channels)`` with ``n_mode_axes`` cube axes.
    The result satisfies ``c[-s] == conj(c[s])`` exactly.
    """
    axes = tuple(range(coeffs.ndim - 1 - n_mode_axes, coeffs.ndim - 1))
    rev = np.flip(coeffs, axis=axes)
    return (coeffs + np.conj(rev)) / 2


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values of a ``channels``-valued function on a torus grid.

    ``values`` has shape ``(*grid.sizes, channels)``; a missing channel axis
    is added for scalar functions.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape == self.grid.sizes:
            vals = vals[..., None]
        if vals.ndim != self.grid.dim + 1 or vals.shape[:-1] != self.grid.sizes:
            raise ValueError(
                f"values of shape {vals.shape} do not match grid sizes {self.grid.sizes}"
            )
        if vals.shape[-1] < 1:
            raise ValueError("a grid function needs at least one channel")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        """Values as an ``(M, channels)`` array, points in row-major order."""
        return self.values.reshape(self.grid.n_points, self.channels)

    def to_dict(self) -> dict:
        out = {
            "sizes": list(self.grid.sizes),
            "channels": self.channels,
            "values": self.values.ravel().tolist(),
        }
        if not self.grid.same_nodes(TorusGrid(self.grid.sizes)):
            out["origin"] = list(self.grid.origin)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridFunction":
        grid = TorusGrid(tuple(data["sizes"]), data.get("origin"))
        values = np.asarray(data["values"], dtype=float)
        channels = int(data["channels"])
        if values.size != grid.n_points * channels:
            raise ValueError("value list length does not match sizes and channels")
        return cls(grid, values.reshape(*grid.sizes, channels))


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    """Fourier coefficients of a real band-limited function on the torus.

    ``coeffs[s + B, p]`` holds ``FS_s[f_p]``; shape ``(2B_1+1, ..., 2B_d+1, channels)``.
    """

    band: tuple[int, ...]
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        band = tuple(int(b) for b in _as_tuple(self.band, name="band"))
        if any(b < 0 for b in band):
            raise ValueError("band-limits must be non-negative")
        c = np.asarray(self.coeffs, dtype=complex)
        cube = tuple(2 * b + 1 for b in band)
        if c.shape == cube:
            c = c[..., None]
        if c.shape[:-1] != cube:
            raise ValueError(f"coefficients of shape {c.shape} do not match band {band}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "band", band)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return len(self.band)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        """Coefficients as an ``(S, channels)`` array over :func:`mode_grid` order."""
        return self.coeffs.reshape(-1, self.channels)

    def modes(self) -> np.ndarray:
        return mode_grid(self.band)

    def symmetry_residual(self) -> float:
        """``max |c[s] - conj(c[-s])|``; zero for a real-valued function."""
        rev = np.flip(self.coeffs, axis=tuple(range(self.dim)))
        return float(np.max(np.abs(self.coeffs - np.conj(rev)), initial=0.0))

    def with_band(self, band) -> "SpectralFunction":
        """Zero-pad or truncate to another band-limit."""
        band = as_band(band, self.dim)
        out = np.zeros(tuple(2 * b + 1 for b in band) + (self.channels,), dtype=complex)
        src, dst = [], []
        for old, new in zip(self.band, band):
            keep = min(old, new)
            src.append(slice(old - keep, old + keep + 1))
            dst.append(slice(new - keep, new + keep + 1))
        out[tuple(dst)] = self.coeffs[tuple(src)]
        return SpectralFunction(band, out)

    def evaluate(self, points) -> np.ndarray:
        return evaluate_spectral(self, points)

    def on_grid(self, grid: TorusGrid) -> GridFunction:
        vals = evaluate_spectral(self, grid.points())
        return GridFunction(grid, vals.reshape(*grid.sizes, self.channels))

    def to_dict(self) -> dict:
        flat = self.flat.ravel()
        return {
            "band": list(self.band),
            "channels": self.channels,
            "coeffs": [[float(z.real), float(z.imag)] for z in flat],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralFunction":
        band = tuple(int(b) for b in data["band"])
        pairs = np.asarray(data["coeffs"], dtype=float).reshape(-1, 2)
        channels = int(data["channels"])
        cube = tuple(2 * b + 1 for b in band)
        if pairs.shape[0] != int(np.prod(cube)) * channels:
            raise ValueError("coefficient list length does not match band and channels")
        return cls(band, (pairs[:, 0] + 1j * pairs[:, 1]).reshape(*cube, channels))


def fourier_coeffs(f: GridFunction, band=None) -> SpectralFunction:
    """Discrete Fourier coefficients of grid values up to ``band``.

    Exact for functions band-limited at ``band`` when the grid resolves it.
    Defaults to the largest band the grid supports.
    """
    grid = f.grid
    band = grid.max_band() if band is None else grid.check_band(band)
    coeffs = analysis_matrix(grid, band) @ f.flat
    coeffs = coeffs.reshape(tuple(2 * b + 1 for b in band) + (f.channels,))
    return SpectralFunction(band, symmetrize(coeffs, len(band)))


def evaluate_spectral(f: SpectralFunction, points) -> np.ndarray:
    """Evaluate ``sum_s FS_s[f] exp(i s.x)`` at ``points``; returns ``(P, channels)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != f.dim:
        raise ValueError(f"points have dimension {points.shape[1]}, function has {f.dim}")
    return (synthesis_matrix(points, f.band) @ f.flat).real


def hermitian_normal(rng: np.random.Generator, prefix: tuple, band, variance: float) -> np.ndarray:
    """Gaussian conjugate-symmetric coefficients of shape ``prefix + cube``.

    ``Re``/``Im`` of every non-zero mode are independent ``N(0, variance/2)``,
    the zero mode is real ``N(0, variance)`` and ``c[-s] = conj(c[s])`` exactly.
    """
    band = tuple(band)
    shape = tuple(prefix) + tuple(2 * b + 1 for b in band)
    axes = tuple(range(len(prefix), len(shape)))
    scale = np.sqrt(variance / 2.0)
    re = rng.standard_normal(shape) * scale
    im = rng.standard_normal(shape) * scale
    re = (re + np.flip(re, axis=axes)) / np.sqrt(2.0)
    im = (im - np.flip(im, axis=axes)) / np.sqrt(2.0)
    return re + 1j * im


def sample_bandlimited_gp(band, variance: float, channels: int = 1,
                          rng: np.random.Generator | None = None) -> SpectralFunction:
    """Draw a band-limited function with covariance ``variance * sum_s psi_-s(x - x')``.

    ``band`` may be a scalar (one-dimensional torus) or one entry per dimension.
    """
    if variance <= 0:
        raise ValueError("variance must be positive")
    rng = np.random.default_rng() if rng is None else rng
    band = tuple(int(b) for b in _as_tuple(band, name="band"))
    c = hermitian_normal(rng, (int(channels),), band, variance)
    return SpectralFunction(band, np.moveaxis(c, 0, -1))


def pairwise_inner_product(f, g, grid: TorusGrid) -> np.ndarray:
    """Matrix ``H[p, q] = g(x_q)^T f(x_p)`` over the nodes of ``grid``."""
    fv = _values_on(f, grid)
    gv = _values_on(g, grid)
    if fv.shape[1] != gv.shape[1]:
        raise ValueError(f"channel mismatch: {fv.shape[1]} vs {gv.shape[1]}")
    return fv @ gv.T


def _values_on(f, grid: TorusGrid) -> np.ndarray:
    if isinstance(f, SpectralFunction):
        return evaluate_spectral(f, grid.points())
    if isinstance(f, GridFunction):
        if not f.grid.same_nodes(grid):
            raise ValueError("grid function lives on a different grid")
        return f.flat
    raise TypeError(f"expected SpectralFunction or GridFunction, got {type(f).__name__}")


def interpolate_canonical(values) -> SpectralFunction:
    """Trigonometric interpolant through values at the centred nodes ``2 pi s / m``.

    For ``m = 2B + 1`` values this is the Dirichlet-kernel expansion
    ``f(x) = (1/m) sum_s f_s sum_{s'} psi_s'(x - 2 pi s / m)``.
    """
    values = np.asarray(values, dtype=float)
    sizes = values.shape if values.ndim >= 1 else (1,)
    if values.ndim == 0:
        values = values.reshape(1)
    return fourier_coeffs(GridFunction(TorusGrid.centered(sizes), values))
