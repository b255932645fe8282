"""Block covariance tensors over (function, grid point) pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus_spectral import TorusGrid


@dataclass(frozen=True, eq=False)
class BivariateKernel:
    """``values[i, j, p, q] = c[f_i, f_j](x_p, x_q)`` on the nodes of ``grid``.

    Grid points are flattened in row-major order, so ``values`` always has
    shape ``(n, n, M, M)`` regardless of the torus dimension.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        m = self.grid.n_points
        if vals.ndim != 4 or vals.shape[0] != vals.shape[1] or vals.shape[2:] != (m, m):
            raise ValueError(
                f"kernel of shape {vals.shape} is not (n, n, {m}, {m}) for grid {self.grid.sizes}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def n_functions(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[2]

    def block(self, i: int, j: int) -> np.ndarray:
        return self.values[i, j]

    def diagonal(self) -> np.ndarray:
        """``d[i, p] = K[i, i, p, p]``."""
        n, m = self.n_functions, self.n_points
        return self.values[np.arange(n), np.arange(n)][:, np.arange(m), np.arange(m)]

    def flat(self) -> np.ndarray:
        """``(n M, n M)`` matrix with rows ordered function-major, point-minor."""
        n, m = self.n_functions, self.n_points
        return self.values.transpose(0, 2, 1, 3).reshape(n * m, n * m)

    @classmethod
    def from_flat(cls, grid: TorusGrid, matrix: np.ndarray) -> "BivariateKernel":
        m = grid.n_points
        n = matrix.shape[0] // m
        if matrix.shape != (n * m, n * m):
            raise ValueError("flat matrix size is not a multiple of the grid size")
        return cls(grid, matrix.reshape(n, m, n, m).transpose(0, 2, 1, 3))

    def symmetry_error(self) -> float:
        """``max |K[i, j, p, q] - K[j, i, q, p]|``."""
        return float(np.max(np.abs(self.values - self.values.transpose(1, 0, 3, 2)), initial=0.0))

    def min_eigenvalue_ratio(self) -> float:
        """Smallest eigenvalue of the flattened matrix divided by its trace."""
        mat = self.flat()
        mat = (mat + mat.T) / 2
        tr = np.trace(mat)
        if tr == 0:
            return 0.0
        return float(np.linalg.eigvalsh(mat)[0] / tr)

    def scaled(self, alpha: float) -> "BivariateKernel":
        return BivariateKernel(self.grid, alpha * self.values)

    def restrict(self, grid: TorusGrid, indices: np.ndarray) -> "BivariateKernel":
        """Kernel on the sub-grid made of the given flat node ``indices``."""
        idx = np.asarray(indices)
        return BivariateKernel(grid, self.values[:, :, idx][:, :, :, idx])

    def select(self, functions) -> "BivariateKernel":
        idx = np.asarray(functions)
        return BivariateKernel(self.grid, self.values[idx][:, idx])

    def to_csv(self, path) -> None:
        np.savetxt(path, self.flat(), delimiter=",", fmt="%.17g")
