"""Reduced slow-variable operators and first-order eigenvalue predictions.

For a validated fibered model the transverse band j contributes an effective
potential  mu_j * f^(2/(2+a))(x)  for the slow variables.  This module builds
the corresponding reduced operators, evaluates the closed-form harmonic
predictions at the well bottom, and compares both against direct solves of
the full operator:

* low regime — the lowest levels of each band, matched to the full spectrum
  by proximity windows of half the transverse gap;
* middle regime — a single band level deep inside the spectrum, located by a
  shift-invert solve near the prediction and identified by the transverse
  overlap of the eigenvectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretize import (
    Grid,
    assemble_1d,
    assemble_fibered,
    assemble_nd,
    choose_extent,
    make_grid,
)
from .eigensolve import (
    ExtrapolatedValues,
    dense_lowest,
    iterative_nearest,
    richardson_pair,
    solve_lowest,
)
from .errors import ClusterAmbiguity, DegenerateHessian, MatchAmbiguity, OutsideValidity
from .expr import evaluate
from .model import ModelSpec, SemiclassicalParams
from .transverse import transverse_spectrum


@dataclass(frozen=True)
class Prediction:
    """A closed-form eigenvalue prediction with its validity record.

    ``value`` is in the rescaled (dimensionless) energy units of the fibered
    operator.  ``remainder_order`` is the claimed power of hbar in the error;
    ``remainder_scale`` evaluates the claimed bound shape (hbar^order for the
    low regime, mu_j * hbar^2 for the middle one) so sweeps can divide by it.
    """

    regime: str
    j: int
    k: int
    value: float
    remainder_order: float
    remainder_scale: float
    hbar_j: float
    validity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("prediction value must be finite")
        if self.regime not in ("low", "middle", "surface"):
            raise ValueError(f"unknown regime {self.regime!r}")


def harmonic_levels(hess_f0, mu_j: float, a: float, k_max: int) -> np.ndarray:
    """Lowest ``k_max`` levels of the quadratic well approximation.

    Diagonalizing the slow Hessian gives frequencies sqrt(mu_j * q_i / (2+a));
    the levels are all odd-weighted sums over multi-indices, ascending.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    q = np.linalg.eigvalsh(np.asarray(hess_f0, dtype=float))
    if np.any(q <= 0):
        raise DegenerateHessian(f"slow Hessian eigenvalues must be positive, got {q}")
    rates = np.sqrt(mu_j * q / (2.0 + a))
    ladders = [(2 * np.arange(k_max) + 1) * rate for rate in rates]
    levels = ladders[0]
    for ladder in ladders[1:]:
        levels = np.add.outer(levels, ladder).ravel()
    return np.sort(levels)[:k_max]


def ground_coefficient(hess_f0, a: float) -> float:
    """Trace form of the first harmonic level:  tr(hess^(1/2)) / sqrt(2+a)."""
    q = np.linalg.eigvalsh(np.asarray(hess_f0, dtype=float))
    if np.any(q <= 0):
        raise DegenerateHessian(f"slow Hessian eigenvalues must be positive, got {q}")
    return float(np.sum(np.sqrt(q)) / math.sqrt(2.0 + a))


def _transverse_mu(model: ModelSpec, j_needed: int, mu) -> np.ndarray:
    if mu is not None:
        mu = np.asarray(mu, dtype=float)
        if mu.size < j_needed:
            raise ValueError(f"need {j_needed} transverse levels, got {mu.size}")
        return mu
    return transverse_spectrum(model.g_expr, model.a, j_needed).mu


def predict_low(model: ModelSpec, params: SemiclassicalParams, j: int, k: int, *,
                mu=None) -> Prediction:
    """First-order level prediction  mu_j + hbar * e_k(mu_j)  for band j.

    Valid only while the band bottom sits below the essential-spectrum floor.
    The remainder is O(hbar^2) for the ground level, O(hbar^(3/2)) otherwise.
    """
    mu = _transverse_mu(model, j, mu)
    mu_j = float(mu[j - 1])
    floor = math.inf if math.isinf(model.f_infinity) else (
        float(mu[0]) * model.f_infinity ** (2.0 / (2.0 + model.a)))
    if not mu_j < floor:
        raise OutsideValidity(
            f"band bottom mu_{j} = {mu_j:.6g} is not below the essential floor {floor:.6g}")
    level = float(harmonic_levels(model.hess_f0, mu_j, model.a, k)[k - 1])
    order = 2.0 if k == 1 else 1.5
    return Prediction(
        regime="low",
        j=j,
        k=k,
        value=mu_j + params.hbar * level,
        remainder_order=order,
        remainder_scale=params.hbar ** order,
        hbar_j=params.hbar / math.sqrt(mu_j),
        validity={"mu_j": mu_j, "essential_floor": floor,
                  "below_essential_floor": True},
    )


def predict_middle(model: ModelSpec, params: SemiclassicalParams, j: int, *,
                   mu=None) -> Prediction:
    """Band-bottom prediction deep in the spectrum, remainder C * mu_j * hbar^2.

    Gates: homogeneity degree a >= 2, f unbounded at infinity, and
    mu_j <= hbar^(-2).  Violations raise OutsideValidity naming the gate.
    """
    if model.a < 2.0:
        raise OutsideValidity(f"middle-regime bound needs a >= 2, model has a = {model.a}")
    if not math.isinf(model.f_infinity):
        raise OutsideValidity(
            f"middle-regime bound needs f unbounded at infinity, got {model.f_infinity}")
    mu = _transverse_mu(model, j, mu)
    mu_j = float(mu[j - 1])
    ceiling = params.hbar ** (-2.0)
    if mu_j > ceiling:
        raise OutsideValidity(
            f"mu_{j} = {mu_j:.6g} exceeds the validity ceiling hbar^-2 = {ceiling:.6g}")
    level = float(harmonic_levels(model.hess_f0, mu_j, model.a, 1)[0])
    return Prediction(
        regime="middle",
        j=j,
        k=1,
        value=mu_j + params.hbar * level,
        remainder_order=2.0,
        remainder_scale=mu_j * params.hbar ** 2,
        hbar_j=params.hbar / math.sqrt(mu_j),
        validity={"mu_j": mu_j, "mu_ceiling": ceiling, "a": model.a,
                  "f_unbounded": True},
    )


def reduced_operator(model: ModelSpec, params: SemiclassicalParams, mu_j: float,
                     grid: Grid, order: int = 4):
    """Assemble  hbar^2 D_x^2 + mu_j f^(2/(2+a))(x)  on the slow grid."""
    if grid.ndim != model.n:
        raise ValueError(f"reduced grid must have {model.n} axes, got {grid.ndim}")
    exponent = 2.0 / (2.0 + model.a)

    def potential(*meshes):
        fvals = evaluate(model.f_expr, tuple(meshes) if model.n > 1 else meshes[0])
        return mu_j * np.asarray(fvals, dtype=float) ** exponent

    weights = (params.hbar ** 2,) * model.n
    return assemble_nd(potential, grid, weights, order,
                       meta={"kind": "reduced", "mu_j": mu_j, "hbar": params.hbar})


def _odd_points(extent: float, delta: float) -> int:
    points = int(math.ceil(2.0 * extent / delta)) + 1
    if points % 2 == 0:
        points += 1
    return max(points, 17)


def reduced_lowest(model: ModelSpec, params: SemiclassicalParams, mu_j: float,
                   k: int, *, extents=None, delta: float = 0.02, order: int = 4,
                   decay: float = 1e-12, seed: int = 0,
                   tol: float = 1e-9) -> ExtrapolatedValues:
    """Richardson-extrapolated lowest k levels of the reduced operator."""
    if extents is None:
        extents = choose_extent(model, params, 1, k, np.array([mu_j]), decay=decay)[:-1]
    grid = make_grid(extents, [_odd_points(e, delta) for e in extents])
    build = lambda grd: reduced_operator(model, params, mu_j, grd, order)
    solver = lambda op, kk: solve_lowest(op, kk, tol=tol, seed=seed)
    return richardson_pair(build, grid, k, order=order, solver=solver)


def _axis_deltas(deltas, n_slow: int) -> list:
    """Expand a (slow, transverse) delta pair to one delta per grid axis."""
    if len(deltas) == n_slow + 1:
        return list(deltas)
    if len(deltas) == 2:
        return [deltas[0]] * n_slow + [deltas[1]]
    raise ValueError(f"need 2 or {n_slow + 1} grid spacings, got {len(deltas)}")


def full_lowest(model: ModelSpec, params: SemiclassicalParams, k: int, *,
                j_max: int = 1, k_margin: int = 2, extents=None,
                deltas=(0.06, 0.10), order: int = 4, mu=None,
                decay: float = 1e-12, seed: int = 0,
                tol: float = 1e-9) -> ExtrapolatedValues:
    """Richardson-extrapolated lowest k levels of the full fibered operator."""
    mu_arr = _transverse_mu(model, j_max, mu)
    if extents is None:
        extents = choose_extent(model, params, j_max, k + k_margin, mu_arr, decay=decay)
    points = [_odd_points(e, d) for e, d in zip(extents, _axis_deltas(deltas, model.n))]
    grid = make_grid(extents, points)
    build = lambda grd: assemble_fibered(model, params, grd, order)
    solver = lambda op, kk: solve_lowest(op, kk, tol=tol, seed=seed)
    return richardson_pair(build, grid, k, order=order, solver=solver)


@dataclass(frozen=True)
class BandLevels:
    """Band-j levels of the full operator next to their reduced counterparts."""

    j: int
    full: np.ndarray
    full_budgets: np.ndarray
    reduced: np.ndarray
    reduced_budgets: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        """Signed full-minus-reduced differences."""
        return self.full - self.reduced


def _band_window(mu: np.ndarray, j: int) -> tuple[float, float]:
    mu_j = float(mu[j - 1])
    upper = mu_j + 0.5 * (float(mu[j]) - mu_j)
    lower = -math.inf if j == 1 else mu_j - 0.5 * (mu_j - float(mu[j - 2]))
    return lower, upper


def low_band_levels(model: ModelSpec, params: SemiclassicalParams, j: int,
                    k_max: int, *, deltas=(0.06, 0.10),
                    reduced_delta: float = 0.02, order: int = 4,
                    decay: float = 1e-12, seed: int = 0,
                    tol: float = 1e-9) -> BandLevels:
    """Lowest ``k_max`` levels of band j from the full operator and the
    reduced one, ready for error comparison.

    Full-operator eigenvalues are assigned to the band by proximity: they
    must land within half the transverse gap of mu_j.  If the window cannot
    supply ``k_max`` levels the assignment is refused (ClusterAmbiguity)
    rather than guessed.
    """
    spec = transverse_spectrum(model.g_expr, model.a, j + 1)
    mu_arr = spec.mu
    lower, upper = _band_window(mu_arr, j)
    extents = choose_extent(model, params, j, k_max + 2, mu_arr, decay=decay)

    count = k_max + 2
    chosen = None
    for _ in range(3):
        pair = full_lowest(model, params, count, j_max=j, extents=extents,
                           deltas=deltas, order=order, mu=mu_arr, seed=seed, tol=tol)
        inside = [i for i, v in enumerate(pair.values) if lower < v < upper]
        if len(inside) >= k_max:
            chosen = inside[:k_max]
            break
        if pair.values[-1] > upper:
            raise ClusterAmbiguity(
                f"band {j} holds only {len(inside)} levels inside its proximity "
                f"window ({lower:.6g}, {upper:.6g}); {k_max} requested")
        count *= 2
    if chosen is None:
        raise ClusterAmbiguity(
            f"could not isolate {k_max} levels of band {j} within its proximity window")

    reduced = reduced_lowest(model, params, float(mu_arr[j - 1]), k_max,
                             extents=extents[:-1], delta=reduced_delta,
                             order=order, decay=decay, seed=seed, tol=tol)
    return BandLevels(
        j=j,
        full=pair.values[chosen],
        full_budgets=pair.budgets[chosen],
        reduced=reduced.values,
        reduced_budgets=reduced.budgets,
    )


@dataclass(frozen=True)
class BandComparison:
    """Scalar full-vs-reduced comparison for one (j, k)."""

    j: int
    k: int
    full_value: float
    reduced_value: float
    error: float
    full_budget: float
    reduced_budget: float


def reduced_vs_full_error(model: ModelSpec, params: SemiclassicalParams,
                          j: int, k: int, **kwargs) -> BandComparison:
    """Signed error between level k of band j and the reduced operator's level k."""
    levels = low_band_levels(model, params, j, k, **kwargs)
    return BandComparison(
        j=j,
        k=k,
        full_value=float(levels.full[k - 1]),
        reduced_value=float(levels.reduced[k - 1]),
        error=float(levels.errors[k - 1]),
        full_budget=float(levels.full_budgets[k - 1]),
        reduced_budget=float(levels.reduced_budgets[k - 1]),
    )


def band_weight(vector: np.ndarray, grid: Grid, phi_hat: np.ndarray) -> float:
    """Fraction of a unit 2D eigenvector carried by one transverse mode.

    The vector is reshaped to the (slow, transverse) lattice and contracted
    with the unit transverse eigenvector on the same y-axis; the squared
    coefficients sum to a weight in (0, 1].
    """
    shape = tuple(axis.interior_count for axis in grid.axes)
    coeffs = vector.reshape(shape) @ phi_hat
    return float(np.sum(coeffs**2))


@dataclass(frozen=True)
class MiddleLevel:
    """A band level located deep in the spectrum, with its match diagnostics."""

    value: float
    budget: float
    weight: float
    prediction: Prediction


def middle_band_level(model: ModelSpec, params: SemiclassicalParams, j: int, *,
                      deltas=(0.05, 0.05), k_window: int = 24, order: int = 4,
                      decay: float = 1e-12, seed: int = 0,
                      tol: float = 1e-8) -> MiddleLevel:
    """Locate the first level of band j near its middle-regime prediction.

    A shift-invert solve collects the ``k_window`` eigenvalues nearest the
    prediction; each eigenvector's transverse overlap with mode j decides the
    band.  The candidate carrying a majority weight and lying nearest the
    prediction wins; ties or an empty candidate set raise MatchAmbiguity.
    The matched value is Richardson-extrapolated over the usual grid pair.
    """
    if model.n != 1:
        raise ValueError("middle-band location is implemented for one slow variable")
    spec = transverse_spectrum(model.g_expr, model.a, j)
    pred = predict_middle(model, params, j, mu=spec.mu)
    extents = choose_extent(model, params, j, 3, spec.mu, decay=decay)
    grid = make_grid(extents, [_odd_points(e, d) for e, d in zip(extents, deltas)])

    def matched(grd: Grid) -> tuple[float, float]:
        op = assemble_fibered(model, params, grd, order)
        k_eff = min(k_window, op.dimension - 1)
        result = iterative_nearest(op, k_eff, sigma=pred.value, tol=tol, seed=seed)
        y_grid = Grid((grd.axes[-1],))
        transverse = dense_lowest(assemble_1d(model.g_expr, y_grid, order=order), j)
        phi_hat = transverse.vectors[:, j - 1]
        weights = np.array([band_weight(result.vectors[:, i], grd, phi_hat)
                            for i in range(k_eff)])
        candidates = np.flatnonzero(weights >= 0.5)
        if candidates.size == 0:
            raise MatchAmbiguity(
                f"no eigenvalue near {pred.value:.6g} carries majority weight on band {j}")
        dist = np.abs(result.eigenvalues[candidates] - pred.value)
        ranked = candidates[np.argsort(dist)]
        if ranked.size > 1:
            d0, d1 = sorted(dist)[:2]
            if d1 < 1.2 * d0:
                raise MatchAmbiguity(
                    f"two band-{j} candidates sit {d0:.3g} and {d1:.3g} from the "
                    f"prediction; match is ambiguous")
        best = int(ranked[0])
        return float(result.eigenvalues[best]), float(weights[best])

    coarse_value, coarse_weight = matched(grid)
    fine_value, fine_weight = matched(grid.refined())
    factor = 2.0**order - 1.0
    return MiddleLevel(
        value=fine_value + (fine_value - coarse_value) / factor,
        budget=abs(fine_value - coarse_value) / factor,
        weight=min(coarse_weight, fine_weight),
        prediction=pred,
    )
