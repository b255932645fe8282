import numpy as np
import pytest

from nogp.bivariate import BivariateKernel
from nogp.dual_kernel import ActivationKind, apply_dual, relu_dual
from nogp.torus_spectral import TorusGrid


def test_closed_form_special_angles():
    assert relu_dual(1.0, 1.0, 1.0) == 0.5
    assert relu_dual(1.0, 0.0, 1.0) == pytest.approx(1 / (2 * np.pi), rel=1e-15)
    assert relu_dual(1.0, -1.0, 1.0) == pytest.approx(0.0, abs=1e-16)
    assert relu_dual(0.0, 0.0, 3.0) == 0.0


def test_orthogonal_case_matches_monte_carlo():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((2, 10**6))
    prod = np.maximum(z[0], 0) * np.maximum(z[1], 0)
    assert abs(prod.mean() - relu_dual(1, 0, 1)) < 3 * prod.std() / np.sqrt(z.shape[1])


def test_rejects_negative_variance_and_cauchy_schwarz_violation():
    with pytest.raises(ValueError):
        relu_dual(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        relu_dual(1.0, 1.5, 1.0)
    # rounding-level violations are tolerated
    assert relu_dual(1.0, 1.0 + 1e-12, 1.0) == pytest.approx(0.5)
    assert relu_dual(-1e-12, 0.0, 1.0) == 0.0


def _random_psd_kernel(rng, n, m):
    A = rng.standard_normal((n * m, n * m + 2))
    return BivariateKernel.from_flat(TorusGrid((m,)), A @ A.T)


def test_identity_is_exact(rng):
    K = _random_psd_kernel(rng, 2, 3)
    assert apply_dual(ActivationKind.IDENTITY, K) is K
    assert apply_dual(None, K) is K


def test_all_ones_kernel_maps_to_one_half():
    K = BivariateKernel(TorusGrid((3,)), np.ones((2, 2, 3, 3)))
    np.testing.assert_array_equal(apply_dual("relu", K).values, 0.5)


def test_entries_match_bivariate_monte_carlo(rng):
    K = _random_psd_kernel(rng, 3, 4)  # 12 x 12
    out = apply_dual("relu", K).flat()
    C = K.flat()
    z = np.random.default_rng(11).standard_normal((10**6, 12)) @ np.linalg.cholesky(C).T
    r = np.maximum(z, 0)
    for a, b in [(0, 0), (0, 5), (3, 11), (7, 2), (10, 10), (4, 9)]:
        prod = r[:, a] * r[:, b]
        assert abs(prod.mean() - out[a, b]) < 3 * prod.std() / np.sqrt(len(prod))


def test_psd_preserved_and_diagonal_halved(rng):
    for m in (4, 8):
        K = _random_psd_kernel(rng, 8, m)  # up to 64 x 64
        out = apply_dual("relu", K)
        mat = out.flat()
        assert np.linalg.eigvalsh(mat)[0] >= -1e-8 * np.trace(mat)
        np.testing.assert_array_equal(out.diagonal(), K.diagonal() / 2)
        assert out.symmetry_error() == 0.0


def test_one_homogeneity():
    rng = np.random.default_rng(0)
    k11, k22 = rng.uniform(0.1, 3, 50), rng.uniform(0.1, 3, 50)
    k12 = rng.uniform(-1, 1, 50) * np.sqrt(k11 * k22)
    for a in (0.3, 2.0, 17.0):
        np.testing.assert_allclose(relu_dual(a * k11, a * k12, a * k22),
                                   a * relu_dual(k11, k12, k22), rtol=1e-12)
