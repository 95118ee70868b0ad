"""Curve wells: frame construction, profile extraction, minima, predictions."""

import math

import numpy as np
import pytest

from bolab.errors import (
    ContinuumOfMinima,
    DegenerateMinimum,
    DegenerateParametrization,
    ExtentOverflow,
    MatchAmbiguity,
    OrderMismatch,
    OutsideValidity,
)
from bolab.hypersurface import (
    _match_injective,
    ambient_grid,
    build_gamma,
    build_surface_well,
    extract_f,
    find_minima,
    predict_surface,
    surface_gate,
    verify_surface,
)

# Circle-supported well used throughout: the weight 2 + x is tapered off by a
# logistic switch so the potential keeps growing at infinity, and the switch
# is flat to ~1e-13 on the extraction tube around the circle.
CIRCLE_V = "(x^2 + y^2 - 1)^2 * (2 + x / (1 + exp(80 * (sqrt(x^2 + y^2) - 1.4))))"


@pytest.fixture(scope="module")
def circle_well():
    return build_surface_well(CIRCLE_V, 1, "cos(theta)", "sin(theta)")


# --- curve frames ------------------------------------------------------------------


def test_circle_frame():
    g = build_gamma("cos(theta)", "sin(theta)")
    np.testing.assert_allclose(g.speed, 1.0, atol=1e-12)
    np.testing.assert_allclose(g.curvature, 1.0, atol=1e-10)
    # default orientation: outward radial normal
    np.testing.assert_allclose(g.normal, g.points, atol=1e-12)
    assert abs(g.total_length - 2 * math.pi) < 1e-12


def test_ellipse_frame_unit_vectors():
    g = build_gamma("2*cos(theta)", "sin(theta)")
    expected = np.sqrt(4 * np.sin(g.theta) ** 2 + np.cos(g.theta) ** 2)
    np.testing.assert_allclose(g.speed, expected, rtol=1e-12)
    np.testing.assert_allclose(np.hypot(g.normal[:, 0], g.normal[:, 1]), 1.0,
                               atol=1e-12)
    np.testing.assert_allclose(np.sum(g.normal * g.tangent, axis=1), 0.0,
                               atol=1e-12)


def test_self_intersecting_curve_rejected():
    with pytest.raises(DegenerateParametrization):
        build_gamma("sin(theta)", "sin(theta)*cos(theta)")


def test_cusped_curve_rejected():
    with pytest.raises(DegenerateParametrization, match="tangent"):
        build_gamma("cos(theta)^3", "sin(theta)^3")


def test_open_curve_rejected():
    with pytest.raises(DegenerateParametrization, match="close"):
        build_gamma("cos(theta/2)", "sin(theta/2)")


# --- profile extraction -------------------------------------------------------------


def test_flat_line_profile_exact():
    assert extract_f("y^2", 1, (0.3, 0.0), (0.0, 1.0)) == pytest.approx(
        1.0, abs=1e-12)


def test_circle_profile_value():
    # (x^2+y^2-1)^2 = (r-1)^2 (r+1)^2, so the t^2 coefficient at radius 1 is
    # 4 * (weight on the circle); with weight 2 + x that is 4 * (2 + cos).
    f = extract_f("(x^2 + y^2 - 1)^2 * (2 + x)", 1, (1.0, 0.0), (1.0, 0.0))
    assert f == pytest.approx(12.0, rel=1e-10)


def test_quartic_degeneracy_profile():
    f = extract_f("(x^2 + y^2 - 1)^4", 2, (0.0, 1.0), (0.0, 1.0))
    assert f == pytest.approx(16.0, rel=1e-10)


def test_order_mismatch_higher_vanishing():
    with pytest.raises(OrderMismatch, match="not positive"):
        extract_f("y^4", 1, (0.0, 0.0), (0.0, 1.0))


def test_order_mismatch_lower_vanishing():
    with pytest.raises(OrderMismatch, match="order-2 content"):
        extract_f("y^2", 2, (0.0, 0.0), (0.0, 1.0))


def test_order_mismatch_rough_potential():
    with pytest.raises(OrderMismatch, match="step-halving"):
        extract_f("abs(y)^3", 1, (0.0, 0.0), (0.0, 1.0))


def test_ellipse_profile_matches_gradient_square():
    # V = G^2 with G = x^2/4 + y^2 - 1: along the unit normal G grows like
    # t |grad G|, so the profile is |grad G|^2 = cos^2 + 4 sin^2.
    well = build_surface_well("(x^2/4 + y^2 - 1)^2", 1,
                              "2*cos(theta)", "sin(theta)")
    exact = np.cos(well.gamma.theta) ** 2 + 4 * np.sin(well.gamma.theta) ** 2
    np.testing.assert_allclose(well.f_samples, exact, rtol=1e-6)
    # two symmetric minima, rho^2 = (d^2f/dtheta^2)/2 = 3 at both
    assert len(well.minima) == 2
    assert well.eta0 == pytest.approx(1.0, abs=1e-9)
    for spot in well.minima:
        assert spot.rho == pytest.approx(math.sqrt(3.0), abs=1e-8)


# --- minima of sampled profiles ------------------------------------------------------


def test_find_minima_two_well():
    theta = np.linspace(0, 2 * math.pi, 1024, endpoint=False)
    eta0, minima = find_minima(4 + np.cos(2 * theta), np.ones_like(theta))
    assert eta0 == pytest.approx(3.0, abs=1e-10)
    assert [pytest.approx(s.theta, abs=1e-8) for s in minima] == [
        math.pi / 2, 3 * math.pi / 2]
    for s in minima:
        assert s.rho == pytest.approx(math.sqrt(2.0), abs=1e-8)
        assert s.trplus == s.rho


def test_find_minima_constant_profile():
    ones = np.ones(512)
    with pytest.raises(ContinuumOfMinima):
        find_minima(4.0 * ones, ones)


def test_find_minima_flat_quartic_bottom():
    theta = np.linspace(0, 2 * math.pi, 1024, endpoint=False)
    with pytest.raises(DegenerateMinimum):
        find_minima(4 + (1 + np.cos(theta)) ** 2, np.ones_like(theta))


# --- the assembled circle well -------------------------------------------------------


def test_circle_well_profile_and_minimum(circle_well):
    theta = circle_well.gamma.theta
    np.testing.assert_allclose(circle_well.f_samples, 4 * (2 + np.cos(theta)),
                               atol=1e-10)
    assert circle_well.eta0 == pytest.approx(4.0, abs=1e-8)
    (spot,) = circle_well.minima
    assert spot.theta == pytest.approx(math.pi, abs=1e-8)
    assert spot.rho == pytest.approx(math.sqrt(2.0), abs=1e-8)
    assert np.all(circle_well.f_samples > 0)
    assert circle_well.a == 2.0


def test_orientation_flip_changes_nothing(circle_well):
    flipped = build_surface_well(CIRCLE_V, 1, "cos(theta)", "sin(theta)",
                                 orientation=-1)
    assert flipped.eta0 == pytest.approx(circle_well.eta0, abs=1e-12)
    assert flipped.minima[0].rho == pytest.approx(circle_well.minima[0].rho,
                                                  abs=1e-9)
    np.testing.assert_allclose(flipped.f_samples, circle_well.f_samples,
                               rtol=1e-9)


def test_curve_not_in_zero_set_rejected():
    with pytest.raises(OrderMismatch):
        build_surface_well("(x^2 + y^2 - 1)^2 + 1", 1,
                           "cos(theta)", "sin(theta)")


# --- predictions --------------------------------------------------------------------


def test_prediction_couplings(circle_well):
    # eta0 = 4, rho = sqrt(2), m = 1:
    #   A(alpha) = (2 alpha rho + rho) / (4^(1/4) sqrt(2)) = (2 alpha + 1)/sqrt(2)
    p0 = predict_surface(circle_well, 1, 0, 1, 0.1)
    p1 = predict_surface(circle_well, 1, 1, 1, 0.1)
    assert p0.validity["coupling"] == pytest.approx(1 / math.sqrt(2), abs=1e-8)
    assert p1.validity["coupling"] == pytest.approx(3 / math.sqrt(2), abs=1e-8)
    h = 0.1
    assert p0.value == pytest.approx(
        h * (2 + math.sqrt(h) / math.sqrt(2)), rel=1e-8)
    assert p1.value == pytest.approx(
        h * (2 + math.sqrt(h) * 3 / math.sqrt(2)), rel=1e-8)
    assert p0.regime == "surface" and p0.k == 0 and p1.k == 1
    assert p0.remainder_scale == pytest.approx(h**2 * p0.validity["mu_j"]**3.5)


def test_prediction_leading_term_identity(circle_well):
    # peeling off the recorded correction must leave exactly the leading term
    h = 1e-6
    p = predict_surface(circle_well, 1, 0, 1, h)
    mu = p.validity["mu_j"]
    lead = p.value / h - math.sqrt(h) * math.sqrt(mu) * p.validity["coupling"]
    assert abs(lead - math.sqrt(circle_well.eta0) * mu) < 1e-12 * (1 + lead)


def test_prediction_gate(circle_well):
    assert surface_gate(1, 3.0, 0.1) > 0.1
    with pytest.raises(OutsideValidity, match="smallness gate"):
        predict_surface(circle_well, 2, 0, 1, 0.1)
    # the same band becomes predictable once h shrinks enough
    p = predict_surface(circle_well, 2, 0, 1, 0.006)
    assert p.validity["gate"] <= 0.1 * (1 + 1e-9)


def test_prediction_input_validation(circle_well):
    with pytest.raises(ValueError):
        predict_surface(circle_well, 0, 0, 1, 0.1)
    with pytest.raises(ValueError):
        predict_surface(circle_well, 1, -1, 1, 0.1)
    with pytest.raises(ValueError):
        predict_surface(circle_well, 1, 0, 2, 0.1)


# --- matching and direct verification ------------------------------------------------


def test_match_injective_clean():
    assert list(_match_injective([1.0, 2.0], [0.98, 2.05, 3.0])) == [0, 1]


def test_match_injective_degenerate_cluster():
    # coincident predictions claim consecutive computed values
    assert list(_match_injective([1.0, 1.0 + 1e-13], [0.99, 1.01, 3.0])) == [0, 1]


def test_match_injective_contention():
    with pytest.raises(MatchAmbiguity, match="contend"):
        _match_injective([1.0, 1.04], [1.02, 5.0, 9.0])


def test_match_injective_tie():
    with pytest.raises(MatchAmbiguity, match="runner-up"):
        _match_injective([2.0], [1.9, 2.11, 9.0])


def test_ambient_grid_overflow(circle_well):
    with pytest.raises(ExtentOverflow):
        ambient_grid(circle_well, 1e6)


def test_verify_surface_smoke(circle_well):
    # coarse spacing keeps this cheap; the predictions still land within the
    # first-order window of the matched eigenvalues
    sweep = verify_surface(circle_well, 1, 1, [0.1], delta=0.06)
    assert len(sweep.rows) == 2
    assert [r.alpha for r in sweep.rows] == [0, 1]
    for row in sweep.rows:
        assert row.computed == pytest.approx(row.predicted, abs=2e-2)
        assert row.budget < 1e-4
        assert row.budget < 0.1 * abs(row.error)
        assert row.j == 1 and row.ell == 1
    ratios = sweep.remainder_ratios(circle_well.m)
    assert np.all(ratios < 2.0)


def test_verify_surface_threaded_matches_sequential(circle_well):
    base = verify_surface(circle_well, 1, 1, [0.1], delta=0.06)
    pair = verify_surface(circle_well, 1, 1, [0.1, 0.09], delta=0.06, jobs=2)
    assert len(pair.rows) == 4
    at_h = [r for r in pair.rows if r.h == 0.1]
    for a, b in zip(base.rows, at_h):
        assert a.computed == b.computed and a.budget == b.budget
