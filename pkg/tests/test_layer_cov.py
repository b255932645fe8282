import json

import numpy as np
import pytest

from oracles import fno_cov_quadrature, matern_cov_quadrature, matern_series
from nogp.bivariate import BivariateKernel
from nogp.dual_kernel import relu_dual
from nogp.layer_cov import (
    CovarianceComposer,
    FnoIntegral,
    LayerSpec,
    MaternIntegral,
    NoGpConfig,
    TruncationError,
    compose_covariance,
    fno_architecture,
    fno_integral_cov,
    input_cov,
    layer_cov_map,
    matern_integral_cov,
    matern_kernel_eval,
    matern_kernel_joint,
    matern_series_tail,
    matern_spectral_density,
    work_grid,
)
from nogp.torus_spectral import GridFunction, SpectralFunction, TorusGrid, pairwise_inner_product


def _cos(t, band):
    c = np.zeros(2 * band + 1)
    c[band + t] = c[band - t] = 0.5
    return SpectralFunction((band,), c)


def test_input_cov_examples(random_inputs):
    g = TorusGrid((8,))
    ones = GridFunction(g, np.ones(8))
    np.testing.assert_array_equal(input_cov([ones], g).values, 1.0)
    x = g.points()[:, 0]
    cos, sin = GridFunction(g, np.cos(x)), GridFunction(g, np.sin(x))
    K = input_cov([cos, sin], g)
    np.testing.assert_allclose(K.values[0, 1], np.outer(np.cos(x), np.sin(x)))
    fs = random_inputs(3)
    K = input_cov(fs, g)
    for i in range(3):
        for j in range(3):
            np.testing.assert_allclose(K.values[i, j], pairwise_inner_product(fs[i], fs[j], g),
                                       atol=1e-14)


def test_input_cov_divides_by_channels(random_inputs):
    fs = random_inputs(2, channels=3)
    g = TorusGrid((7,))
    K = input_cov(fs, g)
    np.testing.assert_allclose(K.values[0, 1], pairwise_inner_product(fs[0], fs[1], g) / 3)
    with pytest.raises(ValueError):
        input_cov(fs, g, input_channels=1)


@pytest.mark.parametrize("t", [1, 2, 3])
def test_fno_cov_of_cosine(t):
    g = TorusGrid((9,))
    out = fno_integral_cov(input_cov([_cos(t, 3)], g), 3, 1.0).values[0, 0]
    x = g.points()[:, 0]
    expected = (2 * np.pi) ** 2 * 0.5 * np.cos(t * (x[:, None] - x[None, :]))
    np.testing.assert_allclose(out, expected, atol=1e-12)
    z = g.points()[:, 0]
    quad = fno_cov_quadrature([_cos(t, 3)], z, 3, 1.0)[0, 0]
    np.testing.assert_allclose(out, quad, rtol=1e-6, atol=1e-9)


def test_fno_cov_out_of_band_is_zero():
    g = TorusGrid((11,))
    out = fno_integral_cov(input_cov([_cos(4, 4)], g), 3, 1.0)
    np.testing.assert_allclose(out.values, 0.0, atol=1e-12)


def test_fno_cov_of_constant():
    g = TorusGrid((5,))
    out = fno_integral_cov(BivariateKernel(g, np.ones((1, 1, 5, 5))), 2, 2.0)
    np.testing.assert_allclose(out.values, 2 * (2 * np.pi) ** 2, rtol=1e-14)


def test_fno_cov_rejects_coarse_grid(random_inputs):
    g = TorusGrid((5,))
    with pytest.raises(ValueError):
        fno_integral_cov(input_cov(random_inputs(1), g), 3, 1.0)


def test_fno_cov_matches_quadrature(random_inputs):
    fs = random_inputs(3, band=3)
    g = TorusGrid((9,))
    out = fno_integral_cov(input_cov(fs, g), 2, 0.3).values
    quad = fno_cov_quadrature(fs, g.points()[:, 0], 2, 0.3)
    np.testing.assert_allclose(out, quad, rtol=0, atol=1e-9 * np.abs(quad).max())


def test_fno_cov_stationary_in_shifts(random_inputs):
    g = TorusGrid((9,))
    K = fno_integral_cov(input_cov(random_inputs(1), g), 3, 1.0).values[0, 0]
    for r in range(9):
        np.testing.assert_allclose(np.roll(K, (r, r), axis=(0, 1)), K, atol=1e-10)


def test_matern_density_and_tail():
    assert matern_spectral_density(0.0, np.inf, 2.0) == 1.0
    assert matern_spectral_density(3.0, 1.5, 1.0) == pytest.approx((3 + 3.0) ** -2.0)
    tail, retained = matern_series_tail(np.inf, 1.0, 5)
    n = np.arange(6, 200)
    exact_tail = 2 * np.sum(np.exp(-0.5 * n ** 2))
    assert exact_tail <= tail  # integral comparison bounds the decreasing series
    assert retained == pytest.approx(1 + 2 * np.sum(np.exp(-0.5 * np.arange(1, 6) ** 2)))


def test_matern_truncation_error_for_rough_kernels():
    with pytest.raises(TruncationError):
        matern_kernel_eval(0.0, 0.0, 0.5, 1.0, truncation=128)
    # a smooth kernel passes at the default truncation
    assert matern_kernel_eval(0.0, 0.0, 2.5, 1.0) > 0


def test_matern_kernel_matches_direct_series():
    u = np.linspace(-3, 3, 7)
    for nu in (2.5, 3.5, np.inf):
        np.testing.assert_allclose(matern_kernel_eval(u[:, None], 0.0, nu, 0.8),
                                   matern_series(u, nu, 0.8, 128), rtol=1e-13)


def test_matern_product_equals_joint_for_squared_exponential(rng):
    x = rng.uniform(-np.pi, np.pi, (20, 2))
    y = rng.uniform(-np.pi, np.pi, (20, 2))
    np.testing.assert_allclose(matern_kernel_eval(x, y, np.inf, 0.6, 64),
                               matern_kernel_joint(x, y, np.inf, 0.6, 64), atol=1e-12)


def test_matern_cov_matches_quadrature(random_inputs):
    fs = random_inputs(2, band=3)
    g = TorusGrid((9,))
    spec = MaternIntegral(2.5, 0.7, 2.5, 0.7, sigma_k2=1.3)
    out = matern_integral_cov(input_cov(fs, g), spec).values
    quad = matern_cov_quadrature(fs, g.points()[:, 0], 2.5, 0.7, 1.3)
    np.testing.assert_allclose(out, quad, rtol=0, atol=1e-10 * np.abs(quad).max())


def test_matern_unit_diagonal_flag(random_inputs):
    fs = random_inputs(1)
    g = TorusGrid((9,))
    raw = matern_integral_cov(input_cov(fs, g), MaternIntegral(np.inf, 1.0, np.inf, 1.0))
    unit = matern_integral_cov(input_cov(fs, g),
                               MaternIntegral(np.inf, 1.0, np.inf, 1.0, unit_diagonal=True))
    scale = matern_kernel_eval(0.0, 0.0, np.inf, 1.0) ** 2
    np.testing.assert_allclose(unit.values * scale, raw.values, rtol=1e-12)


def test_layer_map_identity_and_additivity(random_inputs):
    g = TorusGrid((9,))
    H = input_cov(random_inputs(2), g)
    same = layer_cov_map(H, LayerSpec(FnoIntegral(2, 0.0), 1.0, None))
    np.testing.assert_allclose(same.values, H.values, atol=1e-14)
    only = layer_cov_map(H, LayerSpec(FnoIntegral(2, 0.5), 0.0, None))
    np.testing.assert_allclose(only.values, fno_integral_cov(H, 2, 0.5).values)


def test_composer_matches_generic_maps(random_inputs):
    fs = random_inputs(3, band=3)
    g = TorusGrid((9,))
    for integral in (FnoIntegral(3, 0.2), MaternIntegral(2.5, 0.9, 2.5, 0.9, sigma_k2=0.7)):
        spec = LayerSpec(integral, 0.8, "relu")
        cfg = NoGpConfig((spec, LayerSpec(None, 1.7)))
        generic = layer_cov_map(layer_cov_map(input_cov(fs, g), spec), cfg.layers[1])
        np.testing.assert_allclose(compose_covariance(cfg, fs, g).values, generic.values,
                                   rtol=1e-11, atol=1e-13)


def test_single_hidden_layer_unrolled(random_inputs):
    fs = random_inputs(2)
    g = TorusGrid((7,))
    cfg = fno_architecture(3, 1 / 7, 1.0, 2.5)
    K = compose_covariance(cfg, fs, g).values
    c1 = (1 / 7 * fno_integral_cov(input_cov(fs, g), 3, 1.0).values + input_cov(fs, g).values)
    for i, j, p, q in [(0, 1, 2, 5), (1, 1, 0, 6), (0, 0, 3, 3)]:
        expected = 2.5 * relu_dual(c1[i, i, p, p], c1[i, j, p, q], c1[j, j, q, q])
        assert K[i, j, p, q] == pytest.approx(expected, rel=1e-13)


def test_first_layer_band_may_exceed_grid_nyquist(random_inputs):
    fs = random_inputs(2, band=2)
    coarse = TorusGrid((5,))
    cfg = fno_architecture(20, 0.1)
    K = compose_covariance(cfg, fs, coarse).values
    fine = compose_covariance(cfg, fs, coarse.refine(9)).values
    np.testing.assert_allclose(K, fine[:, :, ::9][:, :, :, ::9], rtol=1e-12)


def test_work_grid_refines_only_when_needed():
    g = TorusGrid((9,))
    assert work_grid(fno_architecture(20), g, 3) == (g, 1)
    deep = NoGpConfig((LayerSpec(FnoIntegral(2, 1.0), 1.0, "relu"),
                       LayerSpec(FnoIntegral(2, 1.0), 1.0, None)))
    assert work_grid(deep, g, 3)[1] == 4
    linear = NoGpConfig((LayerSpec(FnoIntegral(2, 1.0), 1.0, None),
                         LayerSpec(FnoIntegral(6, 1.0), 1.0, None)))
    grid, r = work_grid(linear, g, 3)
    assert r == 2 and grid.sizes == (18,)


def test_deep_linear_chain_is_exact(random_inputs):
    fs = random_inputs(2, band=3)
    g = TorusGrid((9,))
    cfg = NoGpConfig((LayerSpec(FnoIntegral(3, 0.4), 0.5, None),
                      LayerSpec(FnoIntegral(2, 0.3), 1.2, None)))
    K = compose_covariance(cfg, fs, g).values
    fine = TorusGrid((9,)).refine(3)
    H = input_cov(fs, fine)
    ref = layer_cov_map(layer_cov_map(H, cfg.layers[0]), cfg.layers[1]).values
    np.testing.assert_allclose(K, ref[:, :, ::3][:, :, :, ::3], atol=1e-11)


def test_zero_inputs_give_zero_kernel():
    g = TorusGrid((7,))
    z = GridFunction(g, np.zeros(7))
    K = compose_covariance(fno_architecture(3), [z, z], g)
    np.testing.assert_array_equal(K.values, 0.0)


def test_config_json_round_trip():
    cfg = NoGpConfig((
        LayerSpec(FnoIntegral(5, 0.0909), 1.0, "relu"),
        LayerSpec(MaternIntegral(np.inf, (0.5, 0.7), 2.5, 1.0, 64, 2.0, True), 0.3, "relu"),
        LayerSpec(None, 1.0, None),
    ), 2)
    back = NoGpConfig.from_json(cfg.to_json())
    assert back == cfg
    first = json.loads(cfg.to_json())["layers"][0]
    assert first == {"type": "fno", "band": 5, "sigma_k2": 0.0909, "sigma_w2": 1.0,
                     "activation": "relu"}


def test_config_validation():
    with pytest.raises(ValueError):
        NoGpConfig((LayerSpec(None, 1.0, "relu"),))
    with pytest.raises(ValueError):
        NoGpConfig(())
    with pytest.raises(ValueError):
        MaternIntegral(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        MaternIntegral(1.0, -1.0, 1.0, 1.0)
