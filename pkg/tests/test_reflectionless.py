import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from czlab.kernels import riesz, zbar_over_z2
from czlab.measures import PointMeasure, make_ball_lebesgue, make_cantor, make_segment_hausdorff, zero_measure
from czlab.reflectionless import (Bump, ReflectionlessError, TestFunction, cotlar_scale, cotlar_sup,
                                  default_reference, defect, doubling_radius, holder_check,
                                  make_reference, mean_zero_correct, pairing_T1, random_pairs,
                                  standard_family, truncation_error_check, ttilde1, weighted_sum)

K = riesz(2, 1.0)
ZB = zbar_over_z2(normalized=True)


def _line_psi(mu):
    return mean_zero_correct(Bump([0.3, 0], 0.5, 0.25), Bump([0, 0], 1.0, 0.2), mu)


def test_mean_zero_already():
    mu = PointMeasure([[-1, 0], [1, 0]], [1.0, 1.0])
    psi = mean_zero_correct(Bump([0, 0], 0.5), Bump([0, 0], 2.0), mu)
    assert psi.lam == 0.0


def test_mean_zero_self_reference(cantor5):
    b = Bump([0.5, 0.5], 0.4, 0.2)
    psi = mean_zero_correct(b, b, cantor5)
    assert psi.lam == 1.0
    assert np.all(psi(cantor5.atoms) == 0.0)


def test_degenerate_reference(cantor5):
    with pytest.raises(ReflectionlessError, match="degenerate"):
        mean_zero_correct(Bump(cantor5.atoms[0], 0.3), Bump([5, 5], 0.5), cantor5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 0.6), st.sampled_from(["tent", "smooth"]))
def test_mean_zero_random_bump(x, y, r, prof):
    mu = make_cantor(2, 0.25, 4)
    psi = mean_zero_correct(Bump([x, y], r, 0.1, prof), Bump([0.5, 0.5], 0.8, 0.1), mu)
    vals = psi(mu.atoms)
    assert abs(weighted_sum(vals, mu.weights)) <= 1e-14 * max(np.sum(np.abs(vals) * mu.weights), 1e-300)
    assert psi.measured_lip() <= psi.lip_bound * (1 + 1e-9)


def test_pairing_rejects_non_mean_zero(line):
    with pytest.raises(ReflectionlessError):
        pairing_T1(K, line, TestFunction(Bump([0, 0], 0.5, 0.2)))


def test_line_pairing_vanishes_with_length():
    vals = [np.linalg.norm(pairing_T1(K, (m := make_segment_hausdorff(2, [[-L, 0], [L, 0]], 200 * L)),
                                      _line_psi(m)))
            for L in (25, 50, 100)]
    assert vals[0] > vals[1] > vals[2]
    np.testing.assert_allclose(vals, [3.00034e-3, 1.50004e-3, 7.5001e-4], rtol=1e-4)


def test_cantor_pairing_bounded_below():
    vals = []
    for depth in (3, 4, 5):
        mu = make_cantor(2, 0.25, depth)
        vals.append(defect(K, mu, 0.5, center=[0.5, 0.5]).raw)
    assert min(vals) > 0
    # stability is measured against the finest depth
    assert max(abs(v / vals[-1] - 1) for v in vals) <= 0.25
    np.testing.assert_allclose(vals, [3.14576e-4, 3.89494e-4, 4.08291e-4], rtol=1e-4)


def test_truncation_supported_inside():
    mu = make_segment_hausdorff(2, [[-1, 0], [1, 0]], 2000)
    chk = truncation_error_check(K, mu, _line_psi(mu), [4, 8])
    assert np.all(chk.lhs == 0.0)


def test_truncation_zero_psi(line):
    chk = truncation_error_check(K, line, TestFunction(Bump([0, 0], 0.5, 0.0)), [4, 8])
    assert np.all(chk.lhs == 0.0)


def test_truncation_slope_on_line(line):
    chk = truncation_error_check(K, line, _line_psi(line), [4, 8, 16, 32])
    assert chk.slope <= -K.alpha + 0.2
    assert not chk.violated
    assert chk.slope == pytest.approx(-1.9014, abs=1e-3)


def test_truncation_rejects_small_r_prime(line):
    with pytest.raises(ReflectionlessError):
        truncation_error_check(K, line, _line_psi(line), [1.5])


def test_reference_pair_invariants(disc64):
    ref = make_reference(disc64, [0.2, 0], 0.3)
    assert np.all(ref.eta >= 0)
    assert abs(weighted_sum(ref.eta, disc64.weights) - 1) <= 1e-12
    outside = np.linalg.norm(disc64.atoms - ref.ball.center, axis=1) > ref.ball.radius
    assert np.all(ref.eta[outside] == 0)
    with pytest.raises(ReflectionlessError):
        make_reference(disc64, [5, 5], 0.5)


def test_ttilde_zero_measure():
    assert np.array_equal(ttilde1(K, zero_measure(), 0.1, [[0, 0]]), [[0.0, 0.0]])


def test_ttilde_on_line_small(line):
    on = np.c_[np.linspace(-5, 5, 11), np.zeros(11)]
    dg = np.geomspace(0.1, 10, 7)
    vals = np.linalg.norm(ttilde1(K, line, dg, on), axis=-1)
    assert vals.max() <= 0.02 * cotlar_scale(line, 1.0, on, dg).min()


def test_ttilde_off_line_closed_form(line):
    # for the segment [-50, 50] the field at (x, 1) is the integral of (x - t, 1) / ((x - t)^2 + 1)
    xs = np.array([0.0, 3.0, -2.0])
    v = ttilde1(K, line, 0.1, np.c_[xs, np.ones(3)])
    normal = np.arctan(50 - xs) + np.arctan(50 + xs)
    tangential = 0.5 * np.log(((xs + 50) ** 2 + 1) / ((xs - 50) ** 2 + 1))
    np.testing.assert_allclose(v[:, 1], normal, rtol=1e-3)
    np.testing.assert_allclose(v[:, 0], tangential, atol=2e-3)
    assert np.ptp(v[:, 1]) / v[0, 1] <= 0.02


def test_reference_pairs_on_disc_differ_by_defect():
    diffs = []
    for cells in (64, 128):
        mu = make_ball_lebesgue(2, [0, 0], 1.0, cells)
        r1, r2 = make_reference(mu, [0.3, 0], 0.3), make_reference(mu, [-0.2, 0.4], 0.25)
        t = np.array([[0, 0], [0.5, 0.1], [-0.3, -0.3]])
        dl = 12 * mu.mesh_scale
        diff = np.abs(ttilde1(ZB, mu, dl, t, r1) - ttilde1(ZB, mu, dl, t, r2)).max()
        # eta_1 - eta_2 divided by its Lipschitz constant lies in the defect family's class
        lip = r1.eta.max() / r1.ball.radius + r2.eta.max() / r2.ball.radius
        assert diff <= lip * defect(ZB, mu, 0.8, center=[0, 0]).raw
        diffs.append(diff)
    assert diffs[1] < diffs[0]


def test_defect_zero_measure():
    assert defect(K, zero_measure(), 1.0).raw == 0.0


def test_defect_empty_family(line):
    with pytest.raises(ReflectionlessError, match="family"):
        defect(K, line, 1.0, family=[])


def test_standard_family_members(line):
    fam = standard_family(line, [0, 0], 1.0)
    assert len(fam) > 0
    for psi in fam:
        assert psi.lip_bound < 1
        sup = psi.support
        assert np.linalg.norm(sup.center) + sup.radius <= 1 + 1e-9


def test_holder_identical_points(line):
    x = np.array([[0.3, 0.4]])
    assert holder_check(K, line, 0.5, x, x).constant == 0.0


def test_holder_stable_and_scaling():
    xs, xp = random_pairs([0, 0], [5, 1], 0.5, 200, seed=1)
    c = []
    for n in (10_000, 20_000):
        mu = make_segment_hausdorff(2, [[-50, 0], [50, 0]], n)
        c.append(holder_check(K, mu, 0.5, xs, xp, default_reference(mu)).constant)
    assert abs(c[1] / c[0] - 1) <= 0.2
    assert c[0] == pytest.approx(3.815, rel=1e-3)
    # doubling delta, the separations and the line together
    x0 = np.array([0.0, 0.0])
    mu = make_segment_hausdorff(2, [[-100, 0], [100, 0]], 20_000)
    big = make_segment_hausdorff(2, [[-200, 0], [200, 0]], 40_000)
    a = holder_check(K, mu, 0.5, xs[:50], xp[:50], make_reference(mu, x0, 2.0)).ratios
    b = holder_check(K, big, 1.0, 2 * xs[:50], 2 * xp[:50], make_reference(big, x0, 4.0)).ratios
    assert np.max(np.abs(b / a - 1)) <= 0.02


def test_cotlar_zero_measure():
    assert cotlar_sup(K, zero_measure(), [[0, 0]], [0.1, 0.2]).sups[0] == 0.0


def test_cotlar_line_uniform(line):
    rng = np.random.default_rng(0)
    on = np.c_[np.linspace(-5, 5, 10), np.zeros(10)]
    off = np.c_[rng.uniform(-5, 5, 40), rng.choice([-1, 1], 40) * rng.uniform(0.5, 2, 40)]
    t = np.vstack([on, off])
    C = cotlar_sup(K, line, t, np.geomspace(0.2, 200, 13), default_reference(line))
    assert C.ratio <= 3


def test_doubling_radius_on_cantor(cantor5):
    rng = np.random.default_rng(2)
    for x in cantor5.atoms[rng.integers(cantor5.n, size=20)]:
        j, r = doubling_radius(cantor5, x, 0.01, 1.0)
        dist = np.linalg.norm(cantor5.atoms - x, axis=1)
        m = lambda rr: cantor5.weights[dist <= rr].sum()  # noqa: E731
        assert m(2 * r) < 4 * m(r)
        assert all(m(2 ** (i + 1) * 0.01) >= 4 * m(2 ** i * 0.01) for i in range(j))
