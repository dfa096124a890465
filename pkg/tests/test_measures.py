import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from czlab.measures import (BallQuery, MeasureError, PointMeasure, ball_mass, ball_masses,
                            from_json, from_text, growth_constant, load, make_annulus_lebesgue,
                            make_ball_lebesgue, make_cantor, make_segment_hausdorff, rescale,
                            save, to_json, to_text, zero_measure)


def test_disc_area():
    mu = make_ball_lebesgue(2, [0, 0], 1.0, 256)
    assert mu.total_mass == pytest.approx(math.pi, rel=5e-3)
    assert ball_mass(mu, BallQuery([0, 0], 0.5)) == pytest.approx(math.pi / 4, rel=1e-2)


def test_ball_volume_3d():
    mu = make_ball_lebesgue(3, [0, 0, 0], 1.0, 64)
    assert mu.total_mass == pytest.approx(4 * math.pi / 3, rel=1e-2)


def test_annulus_area():
    mu = make_annulus_lebesgue(2, [0, 0], 1.0, 2.0, 256)
    assert mu.total_mass == pytest.approx(3 * math.pi, rel=5e-3)
    assert ball_mass(mu, BallQuery([0, 0], 0.9)) == 0.0


def test_nonpositive_radius():
    with pytest.raises(MeasureError):
        BallQuery([0, 0], 0.0)
    with pytest.raises(MeasureError):
        make_ball_lebesgue(2, [0, 0], -1.0, 16)


def test_segment_atoms():
    mu = make_segment_hausdorff(2, [[-1, 0], [1, 0]], 4)
    assert mu.n == 4
    np.testing.assert_allclose(mu.weights, 0.5)
    np.testing.assert_allclose(mu.atoms[:, 0], [-0.75, -0.25, 0.25, 0.75])


def test_segment_ball_mass():
    mu = make_segment_hausdorff(2, [[0, 0], [10, 0]], 10_000)
    h = 10 / 10_000
    for r in (0.1, 0.37, 2.0):
        assert abs(ball_mass(mu, BallQuery([4.2, 0], r)) - 2 * r) <= h


def test_coincident_endpoints():
    with pytest.raises(MeasureError):
        make_segment_hausdorff(2, [[1, 1], [1, 1]], 10)


def test_cantor_depth2():
    mu = make_cantor(2, 0.25, 2)
    assert mu.n == 16
    np.testing.assert_allclose(mu.weights, 1 / 16)
    assert mu.nominal_s == pytest.approx(1.0)


def test_cantor_depth0():
    mu = make_cantor(2, 0.25, 0)
    np.testing.assert_allclose(mu.atoms, [[0.5, 0.5]])
    np.testing.assert_allclose(mu.weights, [1.0])


def test_cantor_similarity_dimension():
    mu = make_cantor(2, 1 / 3, 3, offsets=np.array([[0, 0], [2 / 3, 0]]))
    assert mu.nominal_s == pytest.approx(math.log(2) / math.log(3))
    assert mu.n == 8


def test_cantor_overlapping_children():
    with pytest.raises(MeasureError):
        make_cantor(2, 0.5, 2, offsets=np.array([[0, 0], [0.25, 0]]))


def test_cantor_generation_one_square():
    mu = make_cantor(2, 0.25, 2)
    q = BallQuery([0.125, 0.125], 0.125 * math.sqrt(2))
    assert ball_mass(mu, q) == pytest.approx(0.25)


def test_zero_measure_mass():
    assert ball_mass(zero_measure(), BallQuery([0, 0], 1.0)) == 0.0
    assert growth_constant(zero_measure(), 1.0).lam == 0.0


def test_segment_growth_tends_to_two():
    # at fixed radius r = k h an atom-centred ball holds 2k + 1 atoms, so the ratio is 2 + 1/k
    lams = [growth_constant(make_segment_hausdorff(2, [[0, 0], [1, 0]], n), 1.0, r_min=0.01,
                                            max_atom_centers=500).lam
            for n in (400, 4000, 40_000)]
    np.testing.assert_allclose(lams, [2.25, 2.025, 2.0025], rtol=1e-9)


def test_cantor_growth_stable():
    lams = [growth_constant(make_cantor(2, 0.25, k), 1.0).lam for k in (3, 4, 5)]
    assert all(1 <= v <= 8 for v in lams)
    assert max(lams) / min(lams) <= 1.1
    np.testing.assert_allclose(lams, [1.347922, 1.358971, 1.358971], rtol=1e-6)


def test_growth_maximizer_by_direct_count(cantor5):
    g = growth_constant(cantor5, 1.0)
    inside = np.linalg.norm(cantor5.atoms - g.center, axis=1) <= g.radius
    assert cantor5.weights[inside].sum() / g.radius == pytest.approx(g.lam)


def test_growth_rejects_sub_mesh_radii():
    with pytest.raises(MeasureError, match="mesh"):
        growth_constant(make_cantor(2, 0.25, 3), 1.0, r_min=1e-4)
    with pytest.raises(MeasureError):
        growth_constant(PointMeasure([[0, 0]], [1.0]), 1.0)


def test_rescale_identity_and_mass():
    mu = make_cantor(2, 0.25, 3)
    same = rescale(mu, [0, 0], 1.0, 1.0)
    np.testing.assert_array_equal(same.atoms, mu.atoms)
    np.testing.assert_array_equal(same.weights, mu.weights)
    seg = make_segment_hausdorff(2, [[-1, 0], [1, 0]], 100)
    assert seg.total_mass == pytest.approx(2.0)
    assert rescale(seg, [0, 0], 2.0, 1.0).total_mass == pytest.approx(1.0)


def test_growth_invariant_under_rescale(cantor5):
    a = growth_constant(cantor5, 1.0).lam
    b = growth_constant(rescale(cantor5, [0.5, 0.5], 2.0, 1.0), 1.0).lam
    assert abs(b / a - 1) <= 0.02


def test_serialization_roundtrip(tmp_path):
    mu = make_cantor(2, 0.25, 3)
    for mu2 in (from_json(to_json(mu)), from_text(to_text(mu))):
        np.testing.assert_array_equal(mu2.atoms, mu.atoms)
        np.testing.assert_array_equal(mu2.weights, mu.weights)
        assert mu2.mesh_scale == mu.mesh_scale
    for name in ("m.json", "m.txt"):
        save(mu, tmp_path / name)
        np.testing.assert_array_equal(load(tmp_path / name).weights, mu.weights)


def test_bad_weights():
    with pytest.raises(MeasureError):
        PointMeasure([[0, 0]], [-1.0])
    with pytest.raises(MeasureError):
        PointMeasure([[0, 0], [1, 1]], [1.0])


def test_frozen_arrays():
    mu = make_cantor(2, 0.25, 1)
    with pytest.raises(ValueError):
        mu.weights[0] = 2.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.01, 2), st.floats(0.01, 2))
def test_ball_mass_monotone(x, y, r1, r2):
    mu = make_cantor(2, 0.25, 4)
    lo, hi = sorted((r1, r2))
    m = ball_masses(mu, [[x, y]], np.array([lo, hi]))[0]
    assert 0 <= m[0] <= m[1] <= mu.total_mass + 1e-12
    assert m[1] == pytest.approx(ball_mass(mu, BallQuery([x, y], hi)))
