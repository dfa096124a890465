import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from czlab.kernels import cauchy, riesz
from czlab.measures import (BallQuery, make_annulus_lebesgue, make_ball_lebesgue,
                            make_segment_hausdorff, zero_measure)
from czlab.riesz_checks import (GridField, GridSpec, RieszCheckError, ball_volume, calibrate_b,
                                central_divergence, convergence_order, deposit, divergence_identity,
                                field_u, flux_residual, fourier_g, frac_laplacian_pv, hessian_norm,
                                lower_bound_constant, mollifier, philem_check, pv_integral,
                                second_derivative_bound, smooth_bump, sphere_area,
                                tballint_diagnostic, truncation_convergence)

K = riesz(2, 1.0)
K15 = riesz(2, 1.5)


@pytest.fixture(scope="module")
def disc512():
    return make_ball_lebesgue(2, [0, 0], 1.0, 512)


@pytest.fixture(scope="module")
def annulus():
    return make_annulus_lebesgue(2, [0, 0], 1.0, 2.0, 128)


def test_sphere_and_ball_constants():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_grid_spec():
    g = GridSpec([0, 0], 2.0, 64)
    assert g.spacing == pytest.approx(1 / 16)
    np.testing.assert_allclose(g.origin, [-2, -2])
    assert g.nodes().shape == (64 * 64, 2)
    with pytest.raises(RieszCheckError):
        GridSpec([0, 0], -1.0, 64)


def test_grid_field_csv():
    F = GridField(np.zeros(2), 0.5, np.arange(8.0).reshape(2, 2, 2))
    lines = F.to_csv().splitlines()
    assert lines[0] == "x0,x1,v0,v1"
    assert len(lines) == 5
    with pytest.raises(RieszCheckError):
        GridField(np.zeros(2), 0.0, np.zeros((2, 2, 1)))


def test_deposit_preserves_mass(disc64):
    g = GridSpec([0, 0], 2.0, 64)
    rho = deposit(disc64, g)
    assert rho.sum() * g.spacing ** 2 == pytest.approx(disc64.total_mass, rel=1e-12)


def test_mollifier_unit_mass():
    m = mollifier(1 / 32, 2)
    assert m.sum() * (1 / 32) ** 2 == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_central_divergence_linear_field(a, b, c):
    h = 0.1
    x, y = np.meshgrid(np.arange(16) * h, np.arange(16) * h, indexing="ij")
    F = np.stack([a * x + b * y, c * x - b * y], axis=-1)
    div = central_divergence(F, h)
    np.testing.assert_allclose(div[2:-2, 2:-2], a - b, atol=1e-12)


def test_divergence_disc_convergence(disc512):
    errs = [divergence_identity(disc512, GridSpec([0, 0], 2.0, n), 1.0).error for n in (64, 128, 256)]
    assert errs[-1] <= 0.05
    orders = convergence_order(errs, [64, 128, 256])
    assert min(orders) >= 1
    np.testing.assert_allclose(errs, [7.23e-3, 1.837e-3, 4.614e-4], rtol=2e-3)


def test_divergence_b_is_sphere_area(disc512):
    res = divergence_identity(disc512, GridSpec([0, 0], 2.0, 128), 1.0)
    assert not res.b_fitted
    assert res.b == pytest.approx(2 * math.pi)
    assert flux_residual(res.mollified) <= 1e-12


def test_divergence_zero_measure():
    res = divergence_identity(zero_measure(), GridSpec([0, 0], 2.0, 64), 1.0)
    assert res.error == 0.0
    assert np.all(res.lhs.values == 0) and np.all(res.rhs.values == 0)


def test_divergence_rejections(disc64):
    with pytest.raises(RieszCheckError):
        divergence_identity(disc64, GridSpec([0, 0], 2.0, 64), 1.5)
    with pytest.raises(RieszCheckError):
        divergence_identity(disc64, GridSpec([0, 0], 2.0, 8), 1.0)


def test_divergence_3d():
    ball = make_ball_lebesgue(3, [0, 0, 0], 1.0, 48)
    fitted = divergence_identity(ball, GridSpec([0, 0, 0], 2.0, 32), 1.0)
    assert fitted.b_fitted
    assert fitted.error <= 0.05
    exact = divergence_identity(ball, GridSpec([0, 0, 0], 2.0, 32), 2.0)
    assert exact.b == pytest.approx(4 * math.pi)
    assert exact.error <= 0.05


def test_lower_bound_stable_across_decades():
    line = make_segment_hausdorff(2, [[-200, 0], [200, 0]], 40_000)
    c = [lower_bound_constant(K, line, [0, 0], r).constant for r in (0.3, 3.0, 30.0)]
    assert max(c) / min(c) <= 1.25 / 0.75
    assert all(abs(v / np.median(c) - 1) <= 0.25 for v in c)
    np.testing.assert_allclose(c, [1.56858, 1.55190, 1.39538], rtol=1e-4)


def test_lower_bound_needs_riesz(line):
    with pytest.raises(RieszCheckError, match="kernel"):
        lower_bound_constant(cauchy(), line, [0, 0], 1.0)


def test_pv_constant_field():
    one = lambda x: np.ones((len(np.atleast_2d(x)), 2))  # noqa: E731
    res = pv_integral(one, np.zeros(2), 1.5, 0.1, 10.0, far_value=np.ones(2))
    assert np.all(res.value == 0.0)


def test_pv_annulus(annulus):
    res = frac_laplacian_pv(K15, annulus, [0.3, 0.2])
    assert res.relative <= 0.05
    assert res.relative == pytest.approx(5.679e-3, rel=1e-3)
    assert abs(res.tail).max() > res.tail_bound


def test_pv_annulus_centre_vanishes(annulus):
    res = frac_laplacian_pv(K15, annulus, [0.0, 0.0])
    assert np.abs(res.value).max() <= 1e-12


def test_pv_mirror_invariance(annulus):
    u = field_u(K15, annulus)
    mirrored = lambda x: u(-np.atleast_2d(x))  # noqa: E731
    a = pv_integral(u, np.array([0.3, 0.2]), 1.5, 1 / 16, 64.0)
    b = pv_integral(mirrored, np.array([-0.3, -0.2]), 1.5, 1 / 16, 64.0)
    np.testing.assert_allclose(a.value, b.value, atol=1e-10)


def test_pv_too_close(annulus):
    with pytest.raises(RieszCheckError, match="too close"):
        frac_laplacian_pv(K15, annulus, [1.0, 0.0])


def test_hessian_of_quadratic():
    u = lambda x: np.stack([x[:, 0] ** 2 + 3 * x[:, 0] * x[:, 1], x[:, 1] ** 2], axis=1)  # noqa: E731
    assert hessian_norm(u, np.array([0.4, -1.0]), 1e-3) == pytest.approx(math.sqrt(4 + 9 + 9), rel=1e-6)


def test_second_derivative_bound_refines():
    pts = [[0.3, 0.2], [0.0, 0.5]]
    a, b = (second_derivative_bound(K15, make_annulus_lebesgue(2, [0, 0], 1.0, 2.0, c), pts)
            for c in (128, 256))
    assert abs(a / b - 1) <= 0.01


def test_philem_zero_measure():
    res = philem_check(K, zero_measure(), BallQuery([0, 0], 1.0))
    assert res.lhs == 0.0


def test_philem_line_constant(line):
    consts = [philem_check(K, line, BallQuery([0, 0], r)).constant for r in (0.5, 1.0, 2.0, 4.0)]
    assert max(consts) / min(consts) <= 1.25 / 0.75
    np.testing.assert_allclose(consts, [0.22161, 0.22154, 0.22901, 0.24561], rtol=1e-3)


def test_philem_far_gamma_does_not_help(line):
    q = BallQuery([0, 0], 1.0)
    base = philem_check(K, line, q)
    with_far = philem_check(K, line, q, gammas=np.array([[0.0, 0.0], [0.0, 30.0]]))
    assert with_far.constant <= base.constant * (1 + 1e-12)


def test_fourier_g_s1():
    f = smooth_bump(GridSpec([0, 0], 8.0, 128))
    res = fourier_g(f, 1.0)
    assert res.b == pytest.approx(1.0, abs=1e-3)
    assert res.l2_error <= 0.05
    assert res.mean_ratio <= 1e-6
    assert res.l2_error == pytest.approx(0.0082, abs=5e-4)


def test_fourier_g_s15():
    f = smooth_bump(GridSpec([0, 0], 8.0, 128))
    res = fourier_g(f, 1.5, stride=2)
    assert res.l2_error <= 0.05
    assert res.b == pytest.approx(0.42317, rel=1e-3)
    assert res.envelope_ratio <= 2.5


def test_calibrate_b_s1():
    b, _ = calibrate_b(smooth_bump(GridSpec([0, 0], 8.0, 64)), 1.0)
    assert b == pytest.approx(1.0, abs=1e-3)


def test_fourier_g_rejections():
    with pytest.raises(RieszCheckError):
        fourier_g(smooth_bump(GridSpec([0, 0], 8.0, 96)), 1.0)
    with pytest.raises(RieszCheckError, match="border|boundary"):
        fourier_g(smooth_bump(GridSpec([0, 0], 2.2, 64)), 1.0)


def test_truncation_contained():
    short = make_segment_hausdorff(2, [[-3, 0], [3, 0]], 3000)
    t = truncation_convergence(K, short, [8, 16, 32], 2.0)
    assert np.all(t.sup == 0.0)


def test_truncation_long_line():
    line = make_segment_hausdorff(2, [[-1000, 0], [1000, 0]], 200_000)
    t = truncation_convergence(K, line, [8, 16, 32, 64], 2.0)
    assert t.ok
    np.testing.assert_allclose(t.sup, [0.4983, 0.2441, 0.1197, 0.0578], rtol=2e-3)


def test_truncation_needs_margin(line):
    with pytest.raises(RieszCheckError):
        truncation_convergence(K, line, [4, 8], 2.0)


def test_tballint_growth(line):
    g = tballint_diagnostic(K, line)
    assert g.ok
    np.testing.assert_allclose(g.ratios, [6.28981, 5.06529, 3.98680], rtol=1e-4)
