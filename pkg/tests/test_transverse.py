import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bolab.errors import DegenerateLevel, ExtentOverflow, NoConvergence, NonPositive
from bolab.expr import parse_expr
from bolab.transverse import (
    corrector_solve,
    essential_floor,
    fiber_eigenvalue,
    odd_moment,
    transverse_extent,
    transverse_spectrum,
)

HARMONIC = parse_expr("y^2", ["y"])
QUARTIC = parse_expr("y^4", ["y"])
SEXTIC = parse_expr("y^6", ["y"])

# Frozen reference levels from an independent ODE shooting oracle
# (DOP853 at rtol 1e-12, bisection on the endpoint value, stable in the
# integration length to < 1e-12).
QUARTIC_LEVELS = (1.0603620904843414, 3.7996730298014656,
                  7.455697937987672, 11.644745511379455)
SEXTIC_LEVELS = (1.1448024537970989, 4.338598711514187)


def _shoot_ground(power: float, lo: float, hi: float, length: float) -> float:
    """Bisection on the endpoint of the even solution of -u'' + t^p u = lam u."""

    def endpoint(lam):
        sol = solve_ivp(lambda t, s: [s[1], (t**power - lam) * s[0]],
                        (0.0, length), [1.0, 0.0],
                        method="DOP853", rtol=1e-12, atol=1e-14)
        return sol.y[0, -1]

    f_lo = endpoint(lo)
    assert f_lo * endpoint(hi) < 0
    for _ in range(55):
        mid = 0.5 * (lo + hi)
        if f_lo * endpoint(mid) < 0:
            hi = mid
        else:
            lo = mid
            f_lo = endpoint(mid)
    return 0.5 * (lo + hi)


def test_harmonic_levels_are_odd_integers():
    spec = transverse_spectrum(HARMONIC, 2.0, 6)
    np.testing.assert_allclose(spec.mu, [1, 3, 5, 7, 9, 11], atol=1e-9)
    assert np.all(spec.budgets < 1e-6)


def test_quartic_levels_match_frozen_oracle():
    spec = transverse_spectrum(QUARTIC, 4.0, 4)
    np.testing.assert_allclose(spec.mu, QUARTIC_LEVELS, atol=5e-9)


def test_quartic_ground_matches_in_test_shooting():
    spec = transverse_spectrum(QUARTIC, 4.0, 1)
    assert abs(spec.mu[0] - _shoot_ground(4, 0.9, 1.2, 4.5)) < 1e-8


def test_sextic_levels_match_frozen_oracle():
    spec = transverse_spectrum(SEXTIC, 6.0, 2)
    np.testing.assert_allclose(spec.mu, SEXTIC_LEVELS, atol=5e-9)


def test_scaling_covariance_of_levels():
    # multiplying g by c rescales every level by c^(2/(2+a))
    scaled = transverse_spectrum(parse_expr("0.5*y^4", ["y"]), 4.0, 3)
    base = transverse_spectrum(QUARTIC, 4.0, 3)
    np.testing.assert_allclose(scaled.mu, 0.5 ** (1.0 / 3.0) * base.mu, rtol=1e-9)


def test_parities_alternate_for_even_potential():
    spec = transverse_spectrum(QUARTIC, 4.0, 4)
    assert spec.parities == ("even", "odd", "even", "odd")


def test_asymmetric_homogeneous_potential():
    # g(t) = t^2 - t|t|/2 is homogeneous of degree 2 with unequal sides
    asym = parse_expr("y^2 - y*abs(y)/2", ["y"])
    spec = transverse_spectrum(asym, 2.0, 2)
    assert spec.parities == (None, None)
    # ground level sits between the two one-sided harmonic wells
    assert math.sqrt(0.5) < spec.mu[0] < math.sqrt(1.5)


def test_eigenfunctions_l2_normalized_and_decayed():
    spec = transverse_spectrum(QUARTIC, 4.0, 3)
    norms = spec.delta * np.sum(spec.phi**2, axis=0)
    np.testing.assert_allclose(norms, 1.0, atol=1e-10)
    peak = np.max(np.abs(spec.phi), axis=0)
    edge = np.maximum(np.abs(spec.phi[0]), np.abs(spec.phi[-1]))
    assert np.all(edge < 1e-8 * peak)


def test_spectrum_is_memoized():
    one = transverse_spectrum(HARMONIC, 2.0, 3)
    two = transverse_spectrum(HARMONIC, 2.0, 3)
    assert one is two
    assert transverse_spectrum(HARMONIC, 2.0, 4) is not one


def test_extent_rules():
    low = transverse_extent(HARMONIC, 2.0, 1.0)
    high = transverse_extent(HARMONIC, 2.0, 9.0)
    assert 4.0 <= low <= 7.0
    assert high > low
    # a weaker side forces a wider interval
    asym = parse_expr("y^2 - y*abs(y)/2", ["y"])
    assert transverse_extent(asym, 2.0, 9.0) > high
    with pytest.raises(ExtentOverflow):
        transverse_extent(parse_expr("0.000001*y^2", ["y"]), 2.0, 25.0)
    with pytest.raises(NonPositive):
        transverse_extent(parse_expr("y^2 - y*abs(y)", ["y"]), 2.0, 1.0)


def test_fiber_eigenvalue_scaling():
    assert fiber_eigenvalue(3.0, 2.0, 2.0) == pytest.approx(3.0 * math.sqrt(2.0))
    curve = fiber_eigenvalue(1.0, np.array([1.0, 4.0]), 2.0)
    np.testing.assert_allclose(curve, [1.0, 2.0])
    with pytest.raises(NonPositive):
        fiber_eigenvalue(1.0, -1.0, 2.0)


def test_essential_floor():
    assert essential_floor(1.3, math.inf, 2.0) == math.inf
    assert essential_floor(1.0, 4.0, 2.0) == pytest.approx(2.0)
    assert essential_floor(1.0, 8.0, 4.0) == pytest.approx(2.0)


def test_odd_moments_vanish_for_even_potential():
    spec = transverse_spectrum(QUARTIC, 4.0, 4)
    for j in range(1, 5):
        for m in (1, 2):
            assert abs(odd_moment(spec, j, m)) <= 1e-9


def test_virial_identity():
    # for an eigenstate of -(d/dt)^2 + g with g homogeneous of degree a,
    # the potential expectation is 2 mu / (2 + a)
    spec = transverse_spectrum(QUARTIC, 4.0, 3)
    g_vals = np.asarray([float(t) ** 4 for t in spec.grid.axes[0].interior()])
    for j in range(1, 4):
        pot = spec.delta * np.sum(g_vals * spec.phi[:, j - 1] ** 2)
        assert pot == pytest.approx(2.0 * spec.mu[j - 1] / 6.0, rel=1e-7)


def _dense_corrector(spec, j, rhs):
    n = spec.grid.dimension
    unit = spec.phi[:, j - 1] * math.sqrt(spec.delta)
    unit = unit / np.linalg.norm(unit)
    proj = np.eye(n) - np.outer(unit, unit)
    shifted = spec.operator.matrix.toarray() - spec.mu[j - 1] * np.eye(n)
    r_perp = rhs - unit * (unit @ rhs)
    return np.linalg.pinv(proj @ shifted @ proj) @ r_perp


@pytest.mark.parametrize("j", [1, 2])
def test_corrector_matches_dense_pseudoinverse(j):
    spec = transverse_spectrum(QUARTIC, 4.0, 3, n_points=401)
    nodes = spec.grid.axes[0].interior()
    rhs = nodes * spec.phi[:, j - 1]
    sol = corrector_solve(spec, j, rhs, tol=1e-11)
    assert sol.residual <= 1e-8
    assert sol.orthogonality <= 1e-9
    oracle = _dense_corrector(spec, j, rhs)
    assert np.linalg.norm(sol.w - oracle) <= 1e-6 * np.linalg.norm(oracle)


def test_corrector_discards_parallel_component():
    spec = transverse_spectrum(QUARTIC, 4.0, 3, n_points=401)
    sol = corrector_solve(spec, 1, spec.phi[:, 0].copy())
    assert np.linalg.norm(sol.w) == 0.0
    assert sol.discarded == pytest.approx(1.0)


def test_corrector_degenerate_level_rejected():
    spec = transverse_spectrum(QUARTIC, 4.0, 2, n_points=401)
    fake = dataclasses.replace(
        spec,
        mu=np.array([spec.mu[0], spec.mu[0] + 1e-12]),
        phi=spec.phi[:, :2],
        parities=spec.parities[:2],
        budgets=spec.budgets[:2],
    )
    with pytest.raises(DegenerateLevel):
        corrector_solve(fake, 1, spec.phi[:, 1].copy())


def test_corrector_input_validation():
    spec = transverse_spectrum(QUARTIC, 4.0, 2, n_points=401)
    with pytest.raises(ValueError):
        corrector_solve(spec, 5, spec.phi[:, 0])
    with pytest.raises(ValueError):
        corrector_solve(spec, 1, np.ones(7))


def test_corrector_reports_stall():
    spec = transverse_spectrum(QUARTIC, 4.0, 3, n_points=401)
    rhs = spec.grid.axes[0].interior() * spec.phi[:, 1]
    with pytest.raises(NoConvergence) as err:
        corrector_solve(spec, 2, rhs, tol=1e-13, max_iters=1)
    assert err.value.iterations == 1
    assert err.value.worst_residual > 0
