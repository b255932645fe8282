"""Independent reference computations used by several test modules."""
import numpy as np


def trapezoid_nodes(n):
    """Nodes and weight of the composite trapezoid rule on [-pi, pi)."""
    return -np.pi + 2 * np.pi * np.arange(n) / n, 2 * np.pi / n


def values_at(fs, x):
    return np.stack([f.evaluate(x[:, None])[:, 0] for f in fs])


def fno_cov_quadrature(fs, z, band, sigma_k2, n_nodes=512):
    """Double quadrature of  int int Cov[k(z - x), k(z' - x')] f_i(x) f_j(x') dx dx'.

    ``Cov[k(u), k(u')] = sigma_k2 * sum_{|s| <= B} cos(s (u - u'))`` for the
    band-limited random kernel.
    """
    x, w = trapezoid_nodes(n_nodes)
    F = values_at(fs, x)
    out = np.empty((len(fs), len(fs), len(z), len(z)))
    for p, zp in enumerate(z):
        for q, zq in enumerate(z):
            u = (zp - x)[:, None] - (zq - x)[None, :]
            ck = sigma_k2 * sum(np.cos(s * u) for s in range(-band, band + 1))
            out[:, :, p, q] = w * w * F @ ck @ F.T
    return out


def matern_series(u, nu, ell, truncation):
    """(1/2 pi) sum_{|n| <= N} c_hat(n^2) cos(n u), written out directly."""
    n = np.arange(-truncation, truncation + 1)
    if np.isinf(nu):
        dens = np.exp(-0.5 * ell ** 2 * n ** 2)
    else:
        dens = (2 * nu / ell ** 2 + n ** 2) ** (-nu - 0.5)
    return np.cos(np.multiply.outer(u, n)) @ dens / (2 * np.pi)


def matern_cov_quadrature(fs, z, nu, ell, sigma_k2, truncation=128, n_nodes=512):
    """sigma_k2 * c_z(z, z') * int int c_x(x, x') f_i(x) f_j(x') dx dx'."""
    x, w = trapezoid_nodes(n_nodes)
    F = values_at(fs, x)
    cx = matern_series(x[:, None] - x[None, :], nu, ell, truncation)
    inner = w * w * F @ cx @ F.T
    cz = matern_series(z[:, None] - z[None, :], nu, ell, truncation)
    return sigma_k2 * inner[:, :, None, None] * cz[None, None]


def dense_gp(K, y, noise, Kstar=None, Kss=None):
    """Marginal likelihood and posterior via an explicit inverse."""
    A = K + noise * np.eye(len(K))
    Ainv = np.linalg.inv(A)
    sign, logdet = np.linalg.slogdet(A)
    lml = -0.5 * y @ Ainv @ y - 0.5 * logdet - 0.5 * len(y) * np.log(2 * np.pi)
    if Kstar is None:
        return lml
    return lml, Kstar.T @ Ainv @ y, Kss - Kstar.T @ Ainv @ Kstar
