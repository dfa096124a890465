import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from czlab.collapse import (CollapseError, LevelSetSample, alternative_check, decay_bound, decay_step,
                            delta_grid, density_test, derived_constants, fit_beta, increment_step,
                            largest_kappa0, level_set, porosity_scan, probe_lattice, rearrange_check,
                            run_schedule)
from czlab.kernels import riesz, zbar_over_z2
from czlab.measures import (BallQuery, PointMeasure, make_ball_lebesgue, make_cantor,
                            make_segment_hausdorff, zero_measure)

K = riesz(2, 1.0)
C6, EPS = 0.762, 0.45
KAPPA = (EPS / (2 * C6)) ** 2 * 0.99


def _sample(probes, mask, spacing):
    score = np.where(mask, 1.0, -1.0)
    return LevelSetSample(probes, spacing, np.array([1.0, 0.0]), 0.0, np.array([0.1]), score)


@pytest.fixture(scope="module")
def half_line():
    seg = make_segment_hausdorff(2, [[0, 0], [20, 0]], 4000)
    return PointMeasure(seg.atoms, 0.25 * seg.weights, seg.mesh_scale, 1.0)


@pytest.fixture(scope="module")
def half_line_set(half_line):
    sp = KAPPA / 4
    probes = probe_lattice([0, 0], 1.5, sp)
    return level_set(K, half_line, [-1, 0], EPS, 1.0, probes, delta_grid(half_line, 1.0), sp)


def test_level_set_zero_measure():
    probes = probe_lattice([0, 0], 1.0, 0.1)
    assert not level_set(K, zero_measure(), [1, 0], 0.1, 1.0, probes, [0.5], 0.1).mask.any()
    assert level_set(K, zero_measure(), [1, 0], -0.1, 1.0, probes, [0.5], 0.1).mask.all()


def test_level_set_half_line(half_line, half_line_set):
    assert half_line_set.mask.all()
    probes = half_line_set.probes
    other = level_set(K, half_line, [1, 0], EPS, 1.0, probes[:200], half_line_set.deltas, KAPPA / 4)
    assert not other.mask.any()


def test_level_set_bad_inputs(half_line):
    with pytest.raises(CollapseError):
        level_set(K, half_line, [0, 0], 0.1, 1.0, [[0, 1]], [0.5], 0.1)
    with pytest.raises(CollapseError):
        level_set(K, half_line, [1, 0], 0.1, 1.0, [[0, 1]], [2.0], 0.1)


def test_delta_grid_validity(half_line):
    g = delta_grid(half_line, 1.0)
    assert np.all(g >= 10 * half_line.mesh_scale) and np.all(g < 1.0)
    with pytest.raises(CollapseError):
        delta_grid(make_ball_lebesgue(2, [0, 0], 1, 8), 0.5)


def test_density_trivial():
    probes = probe_lattice([0, 0], 1.0, 0.05)
    q = BallQuery([0, 0], 1.0)
    assert density_test(_sample(probes, np.ones(len(probes), bool), 0.05), q, 0.3)
    assert not density_test(_sample(probes, np.zeros(len(probes), bool), 0.05), q, 1.9)


def test_density_half_ball():
    probes = probe_lattice([0, 0], 1.0, 0.02)
    E = _sample(probes, probes[:, 0] > 0, 0.02)
    q = BallQuery([0, 0], 1.0)
    assert density_test(E, q, 1.1)
    assert not density_test(E, q, 0.5)


def test_density_spacing_too_coarse():
    probes = probe_lattice([0, 0], 1.0, 0.2)
    with pytest.raises(CollapseError, match="spacing"):
        density_test(_sample(probes, np.ones(len(probes), bool), 0.2), BallQuery([0, 0], 1.0), 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 1.0), st.floats(0.0, 1.0))
def test_density_monotone_in_kappa(seed, kappa, extra):
    probes = probe_lattice([0, 0], 1.0, 0.025)
    mask = np.random.default_rng(seed).uniform(size=len(probes)) < 0.05
    E = _sample(probes, mask, 0.025)
    q = BallQuery([0, 0], 1.0)
    if density_test(E, q, kappa):
        assert density_test(E, q, kappa + extra)


def test_decay_bound_arithmetic():
    assert decay_bound(1.0, 0.5) == pytest.approx(64 / 65, rel=1e-15)


def test_rearrange_exact():
    rng = np.random.default_rng(0)
    n = 100_000
    B = rng.integers(0, 2**20, n)
    A = (rng.uniform(size=n) * (B + 1)).astype(np.int64)
    e, l = rng.integers(1, 2**9, n), rng.integers(1, 2**9, n)
    hyp, concl = rearrange_check(A, B, e, l)
    assert hyp.sum() > 0
    assert np.all(concl[hyp])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**20 - 1), st.integers(0, 2**20 - 1), st.integers(1, 2**9 - 1),
       st.integers(1, 2**9 - 1))
def test_rearrange_property(a, b, e, l):
    A, B = sorted((a, b))
    hyp, concl = rearrange_check([A], [B], [e], [l])
    if hyp[0]:
        assert concl[0]
        assert A <= decay_bound(l, e) * B * (1 + 1e-12)


def test_rearrange_range_guard():
    with pytest.raises(CollapseError):
        rearrange_check([1], [2**21], [1], [1])


def test_decay_step_half_line(half_line, half_line_set):
    res = decay_step(half_line, 1.5, KAPPA, EPS, 0.5, half_line_set, C6)
    assert res.status == "verified"
    assert res.ratio <= res.bound
    assert res.ratio == pytest.approx(0.80333333, rel=1e-6)


def test_decay_step_inconclusive(half_line, half_line_set):
    assert decay_step(half_line, 1.5, KAPPA, 0.01, 0.5, half_line_set, C6).status == "inconclusive"
    E = _sample(half_line_set.probes, np.zeros(len(half_line_set.probes), bool), half_line_set.spacing)
    assert decay_step(half_line, 1.5, KAPPA, EPS, 0.5, E, C6).status == "inconclusive"


def test_increment_half_line(half_line, half_line_set):
    res = increment_step(half_line, half_line_set, EPS, KAPPA, 0.5, 1.5, C6, 1.0)
    assert res.verified and res.status == "verified"
    assert res.eps < EPS and res.t < 1.5


def test_increment_mass_hypothesis(half_line, half_line_set):
    res = increment_step(half_line, half_line_set, EPS, KAPPA, 0.01, 1.5, C6, 1.0)
    assert res.status == "inconclusive"


def test_schedule_invariants():
    Lam = 2.0
    const = derived_constants(Lam, 2, 3.815, 2.83)
    k = largest_kappa0(0.2, Lam, const["c8"], const["C9"], 3.815)
    sch = run_schedule(0.2, Lam, (k / const["C9"]) ** 4, k, const["c8"], const["C9"], 3.815)
    assert sch.verified
    m = np.array([float(v) for v in sch.m_j])
    assert np.all(np.diff(m) < 0)
    np.testing.assert_allclose(m[1:] / m[:-1], m[1] / m[0], rtol=1e-12)
    assert all(a > b for a, b in zip(sch.t_j, sch.t_j[1:]))
    rt, re = sch.conservation_residuals()
    assert all(v == 0 for v in rt + re)
    assert sch.t0 == Fraction(3, 2)
    assert sch.stop_reason


def test_derived_constants_values():
    c = derived_constants(2.0, 2, 3.815, 2.83)
    assert c["c8"] == pytest.approx(1 / 65)
    assert c["C9"] == pytest.approx(math.sqrt(4 * 2.83 / (math.pi * 3.815)))


def test_kappa_scaling_exponent():
    const = derived_constants(2.0, 2, 3.815, 2.83)
    eps = [0.4, 0.2, 0.1, 0.05]
    ks = [largest_kappa0(e, 2.0, const["c8"], const["C9"], 3.815) for e in eps]
    assert all(a > b for a, b in zip(ks, ks[1:]))
    assert fit_beta(eps, ks) == pytest.approx(6.0, abs=0.05)


def test_alternative_branches(half_line):
    assert alternative_check(K, half_line, [0.2, 0], 0.1, 0.2, 2, 0.1).outcome == "dense-mass"
    assert alternative_check(K, half_line, [200, 0], 0.1, 0.2, 2, 0.1).outcome == "inconclusive"
    far = make_segment_hausdorff(2, [[1, 0], [20, 0]], 4000)
    res = alternative_check(K, far, [0, 0], 0.1, 0.1, 2, 0.1)
    assert res.outcome == "empty-ball" and res.mass_near == 0.0
    assert alternative_check(K, zero_measure(), [0, 0], 0.1, 0.1, 2, 0.1).outcome == "inconclusive"


def test_porosity_half_disc():
    disc = make_ball_lebesgue(2, [0, 0], 1.0, 64)
    half = disc.restrict(disc.atoms[:, 0] < 0)
    P = porosity_scan(K, half, BallQuery([0, 0], 1.0), 0.05, hull=False)
    assert P.status == "found" and P.lam >= 0.2


def test_porosity_cantor_gap():
    P = porosity_scan(K, make_cantor(2, 0.25, 5), BallQuery([0.5, 0.5], math.sqrt(2)), 0.05)
    assert P.status == "found"
    assert P.lam == pytest.approx(0.25, abs=0.05)
    np.testing.assert_allclose(P.balls[0].center, [0.5, 0.5], atol=0.05)


def test_porosity_disc_skipped():
    P = porosity_scan(zbar_over_z2(), make_ball_lebesgue(2, [0, 0], 1.0, 128), BallQuery([0, 0], 0.5), 0.01)
    assert P.status == "skipped"
