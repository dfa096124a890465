import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from czlab.kernels import (BUILTIN, KernelError, cauchy, custom, make_kernel, riesz,
                           validate, zbar_over_z2)

angles = st.floats(0, 2 * np.pi, allow_nan=False)
builtin = st.sampled_from([riesz(2, 1.0), riesz(2, 0.5), cauchy(), zbar_over_z2(True)])


def test_riesz_eval():
    np.testing.assert_allclose(riesz(2, 1.0).eval([0, 2]), [0, 0.5])


def test_zbar_z2_at_one_and_i():
    K = zbar_over_z2()
    np.testing.assert_allclose(K.eval([1, 0]), [1, 0])
    np.testing.assert_allclose(K.eval([0, 1]), [0, 1], atol=1e-15)


def test_cauchy_is_conjugate_over_r2():
    z = 0.3 - 1.2j
    v = cauchy().eval([z.real, z.imag])
    w = np.conj(z) / abs(z) ** 2
    np.testing.assert_allclose(v, [w.real, w.imag])


def test_singular_at_origin():
    with pytest.raises(KernelError):
        riesz().eval([0, 0])


def test_regularized():
    K = riesz(2, 1.0)
    np.testing.assert_allclose(K.eval_regularized(2.0, [1, 0]), [0.25, 0])
    np.testing.assert_array_equal(K.eval_regularized(2.0, [0, 0]), [0, 0])
    x = np.array([3.0, 0.0])
    assert np.array_equal(K.eval_regularized(2.0, x), K.eval(x))
    with pytest.raises(KernelError):
        K.eval_regularized(0.0, x)


def test_wrong_dimension():
    with pytest.raises(KernelError):
        riesz(3, 1.0).eval([1.0, 2.0])


def test_s_range():
    with pytest.raises(KernelError):
        riesz(2, 2.0)


def test_validate_riesz():
    rep = validate(riesz(3, 1.0))
    assert rep.passed
    assert rep.sup_omega == pytest.approx(1.0)
    assert rep.odd_residual == 0.0


def test_zbar_needs_normalization():
    # Omega = conj(z)^3/|z|^2 has Holder ratio 3 on the circle
    rep = validate(zbar_over_z2(), 10_000)
    assert rep.holder_ratio == pytest.approx(3.0, rel=1e-3)
    assert not rep.passed
    assert validate(zbar_over_z2(normalized=True), 10_000).passed


def test_broken_kernel_rejected():
    with pytest.raises(KernelError, match="normalization"):
        custom(lambda x: 2 * x, 2, 2, 1.0, 1.0)
    k = custom(lambda x: 2 * x, 2, 2, 1.0, 1.0, policy="renormalize")
    assert validate(k).sup_omega == pytest.approx(1.0)


def test_even_kernel_rejected():
    with pytest.raises(KernelError, match="odd"):
        custom(lambda x: np.abs(x), 2, 2, 1.0, 1.0)


def test_make_kernel():
    assert set(BUILTIN) == {"riesz", "cauchy", "zbar_z2"}
    assert make_kernel("riesz", d=3, s=2.0).s == 2.0
    with pytest.raises(KernelError, match="kernel.name"):
        make_kernel("hilbert")


@settings(max_examples=60, deadline=None)
@given(builtin, angles, st.floats(0.01, 100))
def test_homogeneity_and_oddness(K, t, lam):
    u = np.array([np.cos(t), np.sin(t)])
    om = K.omega_scaled(u)
    assert np.linalg.norm(om) <= 1 + 1e-12
    np.testing.assert_allclose(K.omega_scaled(-u), -om, atol=1e-15)
    np.testing.assert_allclose(K.omega_scaled(lam * u), lam * om, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(K.eval(lam * u), om / lam ** K.s, rtol=1e-12, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(builtin, angles, angles)
def test_holder_on_sphere(K, a, b):
    u = np.array([np.cos(a), np.sin(a)])
    v = np.array([np.cos(b), np.sin(b)])
    diff = np.linalg.norm(K.omega_scaled(u) - K.omega_scaled(v))
    assert diff <= np.linalg.norm(u - v) ** K.alpha + 1e-9


@settings(max_examples=40, deadline=None)
@given(builtin, angles, st.floats(0.01, 10), st.floats(0.01, 10))
def test_regularized_caps_at_delta(K, t, r, delta):
    x = r * np.array([np.cos(t), np.sin(t)])
    v = K.eval_regularized(delta, x)
    expected = K.omega_scaled(x) / max(delta, r) ** (K.s + 1)
    np.testing.assert_allclose(v, expected, rtol=1e-12, atol=1e-300)
