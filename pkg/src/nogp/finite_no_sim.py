"""Finite-width Fourier neural operators with Gaussian-initialised parameters.

Parameters are drawn as in the infinite-width prior: the Fourier coefficients
of every scalar kernel ``k_ij`` are conjugate-symmetric Gaussians with variance
``sigma_k2 / J_in`` and the skip weights are i.i.d. ``N(0, sigma_w2 / J_in)``.
A layer acts as

    FS_s[H[f]] = (2 pi)^d FS_s[k]^T FS_s[f] + W FS_s[f],

with activations applied point-wise on a grid.  Parameters are batched: every
array carries a leading replica axis so Monte Carlo studies run vectorised.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .dual_kernel import ActivationKind
from .layer_cov import (
    DEFAULT_OVERSAMPLE,
    FnoIntegral,
    LayerSpec,
    NoGpConfig,
    fno_architecture,
    work_grid,
)
from .torus_spectral import (
    TWO_PI,
    GridFunction,
    SpectralFunction,
    TorusGrid,
    analysis_matrix,
    as_band,
    fourier_coeffs,
    hermitian_normal,
    interpolate_canonical,
    synthesis_matrix,
)

#: Upper bound on complex kernel coefficients held in memory per Monte Carlo chunk.
CHUNK_COEFFS = 2_000_000


@dataclass(frozen=True, eq=False)
class FnoLayerParams:
    """Batched parameters of one layer.

    ``kernel`` has shape ``(b, J_out, J_in, *cube)`` (``None`` for a layer
    without integral term) and ``skip`` has shape ``(b, J_out, J_in)``.
    """

    kernel: np.ndarray | None
    band: tuple[int, ...] | None
    skip: np.ndarray
    activation: ActivationKind | None

    @property
    def n_replicas(self) -> int:
        return self.skip.shape[0]


@dataclass(frozen=True, eq=False)
class FnoParams:
    layers: tuple[FnoLayerParams, ...]
    widths: tuple[int, ...]
    config: NoGpConfig

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_replicas(self) -> int:
        return self.layers[0].n_replicas

    def replica(self, r: int) -> "FnoParams":
        sl = slice(r, r + 1)
        layers = tuple(
            FnoLayerParams(None if p.kernel is None else p.kernel[sl], p.band, p.skip[sl],
                           p.activation)
            for p in self.layers
        )
        return FnoParams(layers, self.widths, self.config)

    def n_scalar_parameters(self) -> int:
        """Number of real degrees of freedom of one replica."""
        total = 0
        for p in self.layers:
            total += p.skip[0].size
            if p.kernel is not None:
                # conjugate symmetry ties s and -s; the zero mode is real
                n_modes = int(np.prod(p.kernel.shape[3:]))
                total += p.kernel.shape[1] * p.kernel.shape[2] * n_modes
        return total


def resolve_widths(config: NoGpConfig, widths) -> tuple[int, ...]:
    """Full width vector ``(J_0, J_1, ..., J_D)`` with ``J_D = 1``.

    ``widths`` may be a single hidden width, the ``D - 1`` hidden widths, or the
    full vector.
    """
    depth = config.depth
    w = [int(v) for v in np.atleast_1d(widths)]
    if len(w) == 1 and depth > 1:
        w = w * (depth - 1)
    elif len(w) == 1 and depth == 1:
        w = []
    if len(w) == depth - 1:
        w = [config.input_channels] + w + [1]
    if len(w) != depth + 1:
        raise ValueError(f"cannot match widths {widths} to a depth-{depth} network")
    if w[0] != config.input_channels or w[-1] != 1:
        raise ValueError("widths must start at the input channels and end with a scalar output")
    if any(v < 1 for v in w):
        raise ValueError("widths must be >= 1")
    return tuple(w)


def sample_fno_params(config: NoGpConfig, widths, rng: np.random.Generator,
                      n_replicas: int = 1, dim: int = 1) -> FnoParams:
    """Draw ``n_replicas`` independent parameter sets from the Gaussian prior.

    Every layer must have an FNO or no integral term; ``dim`` is the torus
    dimension used to expand scalar band-limits.
    """
    widths = resolve_widths(config, widths)
    layers = []
    for k, spec in enumerate(config.layers):
        j_in, j_out = widths[k], widths[k + 1]
        integ = spec.integral
        kernel = band = None
        if integ is not None:
            if not isinstance(integ, FnoIntegral):
                raise ValueError("finite-width simulation supports FNO integral layers only")
            band = as_band(integ.band, dim)
            kernel = hermitian_normal(rng, (n_replicas, j_out, j_in), band, integ.sigma_k2 / j_in)
        skip = rng.standard_normal((n_replicas, j_out, j_in)) * np.sqrt(spec.sigma_w2 / j_in)
        layers.append(FnoLayerParams(kernel, band, skip, spec.activation))
    return FnoParams(tuple(layers), widths, config)


def _as_spectral(f) -> SpectralFunction:
    if isinstance(f, SpectralFunction):
        return f
    if isinstance(f, GridFunction):
        return fourier_coeffs(f)
    raise TypeError(f"unsupported input type {type(f).__name__}")


def _layer_band(p: FnoLayerParams, dim: int) -> tuple[int, ...]:
    return as_band(p.band, dim)


def _activate(kind, values: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.RELU:
        return np.maximum(values, 0.0)
    return values


def _forward(params: FnoParams, fs: Sequence, grid: TorusGrid,
             oversample: int = DEFAULT_OVERSAMPLE) -> np.ndarray:
    """Outputs of every replica on every input: ``(b, n, M, J_D)`` on ``grid``."""
    spectral = [_as_spectral(f) for f in fs]
    dim = grid.dim
    in_band = tuple(np.max([f.band for f in spectral], axis=0))
    work, factor = work_grid(params.config, grid, in_band, oversample)
    points = work.points()
    b = params.n_replicas

    # First layer: exact spectral product with the input coefficients.
    first = params.layers[0]
    values = np.stack([f.on_grid(work).flat for f in spectral])           # (n, M, J0)
    out = np.einsum("bjc,nmc->bnmj", first.skip, values)
    if first.kernel is not None:
        band = _layer_band(first, dim)
        coeffs = np.stack([f.with_band(band).flat for f in spectral])     # (n, S, J0)
        kflat = first.kernel.reshape(b, first.kernel.shape[1], first.kernel.shape[2], -1)
        spec = TWO_PI ** dim * np.einsum("bjcs,nsc->bnsj", kflat, coeffs)
        out = out + np.einsum("ms,bnsj->bnmj", synthesis_matrix(points, band), spec).real
    out = _activate(first.activation, out)

    # Later layers: coefficients of the (non band-limited) hidden signal by DFT.
    for p in params.layers[1:]:
        new = np.einsum("bjc,bnmc->bnmj", p.skip, out)
        if p.kernel is not None:
            band = _layer_band(p, dim)
            coeffs = np.einsum("sm,bnmc->bnsc", analysis_matrix(work, band), out)
            kflat = p.kernel.reshape(b, p.kernel.shape[1], p.kernel.shape[2], -1)
            spec = TWO_PI ** dim * np.einsum("bjcs,bnsc->bnsj", kflat, coeffs)
            new = new + np.einsum("ms,bnsj->bnmj", synthesis_matrix(points, band), spec).real
        out = _activate(p.activation, new)

    if factor > 1:
        out = out[:, :, grid.subgrid_indices(factor)]
    return out


def eval_fno(params: FnoParams, f, grid: TorusGrid,
             oversample: int = DEFAULT_OVERSAMPLE) -> GridFunction:
    """Output of a single-replica network on ``grid``.

    Integral layers after an activation read the hidden signal's Fourier
    coefficients off an internal grid (the output grid refined according to
    ``oversample``); the first integral layer is exact.
    """
    if params.n_replicas != 1:
        raise ValueError("eval_fno evaluates one replica; use FnoParams.replica")
    out = _forward(params, [f], grid, oversample)[0, 0]
    return GridFunction(grid, out.reshape(*grid.sizes, out.shape[-1]))


def eval_fno_many(params: FnoParams, fs: Sequence, grid: TorusGrid,
                  oversample: int = DEFAULT_OVERSAMPLE) -> np.ndarray:
    """Outputs of a single-replica network on several inputs: ``(n, M, J_D)``."""
    if params.n_replicas != 1:
        raise ValueError("eval_fno_many evaluates one replica; use FnoParams.replica")
    return _forward(params, fs, grid, oversample)[0]


def _chunk_size(config: NoGpConfig, widths: tuple[int, ...], dim: int) -> int:
    per_replica = 1
    for k, spec in enumerate(config.layers):
        size = widths[k] * widths[k + 1]
        if isinstance(spec.integral, FnoIntegral):
            size *= int(np.prod([2 * b + 1 for b in as_band(spec.integral.band, dim)]))
        per_replica = max(per_replica, size)
    return max(1, CHUNK_COEFFS // per_replica)


def mc_grid_samples(config: NoGpConfig, widths, fs: Sequence, grid: TorusGrid, n_samples: int,
                    rng: np.random.Generator, oversample: int = DEFAULT_OVERSAMPLE,
                    chunk: int | None = None) -> np.ndarray:
    """Scalar network outputs over fresh parameter draws.

    Returns an ``(n_samples, n_functions, M)`` array; each sample uses one
    parameter draw shared across the input functions.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    widths = resolve_widths(config, widths)
    chunk = chunk or _chunk_size(config, widths, grid.dim)
    out = []
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        params = sample_fno_params(config, widths, rng, b, grid.dim)
        out.append(_forward(params, fs, grid, oversample)[..., 0])
        done += b
    return np.concatenate(out)


def mc_output_samples(config: NoGpConfig, widths, f, x, n_samples: int,
                      rng: np.random.Generator, grid_sizes=None,
                      oversample: int = DEFAULT_OVERSAMPLE) -> np.ndarray:
    """Samples of the network output at the point ``x`` under fresh parameter draws.

    The evaluation grid is anchored at ``x``.  Its size only matters when an
    integral layer follows an activation; it defaults to one node then, and
    otherwise to the smallest grid resolving every band.
    """
    f = _as_spectral(f)
    dim = f.dim
    if grid_sizes is None:
        if all(layer.integral is None for layer in config.layers[1:]):
            grid_sizes = (1,) * dim
        else:
            bands = [as_band(layer.integral.band, dim) for layer in config.layers
                     if isinstance(layer.integral, FnoIntegral)] + [f.band]
            grid_sizes = tuple(2 * int(b) + 1 for b in np.max(bands, axis=0))
    grid = TorusGrid.anchored_at(x, grid_sizes)
    return mc_grid_samples(config, widths, [f], grid, n_samples, rng, oversample)[:, 0, 0]


def tvd_to_gaussian(samples, mu: float, var: float, n_bins: int = 100) -> float:
    """Binned total-variation distance between samples and ``N(mu, var)``.

    Bins are equispaced over ``mu +- 6 sigma`` with one extra bin for each tail.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("need at least one sample")
    if not var > 0:
        raise ValueError("variance must be positive")
    if n_bins < 2:
        raise ValueError("need at least two bins")
    sd = np.sqrt(var)
    edges = np.linspace(mu - 6 * sd, mu + 6 * sd, n_bins + 1)
    full = np.concatenate([[-np.inf], edges, [np.inf]])
    counts = np.histogram(samples, bins=full)[0]
    masses = np.diff(stats.norm.cdf(full, loc=mu, scale=sd))
    return float(0.5 * np.sum(np.abs(counts / samples.size - masses)))


# --------------------------------------------------------------------------
# width-limit study on a random interpolated input


def random_canonical_input(rng: np.random.Generator, band: int = 3) -> SpectralFunction:
    """Interpolant of i.i.d. ``U(-1, 1)`` values at the ``2B + 1`` centred nodes."""
    return interpolate_canonical(rng.uniform(-1.0, 1.0, 2 * band + 1))


def limit_study_config(band: int = 3, sigma_w2: float = 1.0, sigma_head2: float = 1.0) -> NoGpConfig:
    """One FNO hidden layer (kernel variance ``1/(2B+1)``), ReLU, linear scalar head."""
    return fno_architecture(band, 1.0 / (2 * band + 1), sigma_w2, sigma_head2)


def hidden_layer_config(band: int = 3, sigma_w2: float = 1.0) -> NoGpConfig:
    """A single pre-activation FNO layer ``H[f] = A_k f + w f`` with scalar output."""
    return NoGpConfig((LayerSpec(FnoIntegral(band, 1.0 / (2 * band + 1)), sigma_w2, None),))
