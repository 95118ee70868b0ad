"""One-dimensional transverse models and their derived quantities.

For frozen slow variables the fibered operators reduce to the model problem
``-(d/dt)^2 + g(t)`` on the line, with ``g`` positive away from the origin
and positively homogeneous of degree ``a``.  Everything downstream consumes
its eigenpairs: eigenvalue curves over the slow variables, the bottom of the
essential spectrum, parity moments, and corrector equations posed on the
orthogonal complement of a level.

The line is truncated to a symmetric interval sized from the decay of the
eigenfunctions (:func:`transverse_extent`), discretized with the order-4
stencil, and the eigenvalues on a nested grid pair are Richardson
extrapolated.  Spectra are memoized per process because the same model is
requested by many experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.sparse import identity
from scipy.sparse.linalg import LinearOperator, minres

from .discretize import DiscreteOperator, Grid, assemble_1d, grid1d
from .eigensolve import dense_lowest, richardson_pair
from .errors import (
    DegenerateLevel,
    ExtentOverflow,
    NoConvergence,
    NonPositive,
)
from .expr import PotentialExpr, evaluate

_MEMO: dict = {}

#: relative gap under which a level is treated as degenerate for correctors
_DEGENERACY_GAP = 1e-8


@dataclass(frozen=True, eq=False)
class TransverseSpectrum:
    """Eigenpairs of ``-(d/dt)^2 + g`` on a truncated symmetric interval.

    ``mu`` holds the extrapolated eigenvalues; ``phi`` the fine-grid
    eigenfunctions, columnwise, normalized so that ``sum(phi**2) * delta = 1``
    (unit L2 norm under the trapezoid weight, the walls contributing zero).
    ``parities`` marks each level "even"/"odd" when g itself is even, else
    ``None``.  ``operator`` is the fine-grid matrix the eigenfunctions belong
    to, kept for corrector solves.
    """

    mu: np.ndarray
    phi: np.ndarray
    parities: tuple
    budgets: np.ndarray
    grid: Grid
    operator: DiscreteOperator
    a: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.mu) < 0):
            raise ValueError("transverse eigenvalues must be ascending")
        if self.phi.shape[1] != self.mu.size:
            raise ValueError("one eigenfunction column per eigenvalue required")

    @property
    def delta(self) -> float:
        return self.grid.axes[0].delta


@dataclass(frozen=True)
class CorrectorSolution:
    """Solution of a corrector equation on the complement of a level."""

    w: np.ndarray
    residual: float        # ||(T - mu) w - r_perp|| / ||r_perp||
    orthogonality: float   # |<phi_j, w>| / ||w||, both in the L2 sense
    discarded: float       # norm fraction of the rhs that lay along the level
    iterations: int


def transverse_extent(g: PotentialExpr, a: float, mu_top: float, *,
                      decay: float = 1e-12, min_extent: float = 4.0,
                      cap: float = 80.0, granularity: float = 0.25) -> float:
    """Half-width of a symmetric interval resolving levels up to ``mu_top``.

    Two rules per side, the larger wins: the classically forbidden region must
    start well below the wall (``g(L) >= 4 * mu_top``), and the decay action
    ``int sqrt(g - mu_top)`` from the turning point to the wall must reach
    ``log(1/decay) / 2`` so the truncation error is below the decay target.
    """
    if mu_top <= 0:
        raise ValueError("mu_top must be positive")
    need = 0.5 * math.log(1.0 / decay)
    best = min_extent
    for sign in (1.0, -1.0):
        g_side = float(evaluate(g, sign))
        if g_side <= 0:
            raise NonPositive(f"g({sign:+.0f}) = {g_side} is not positive")
        closed = (4.0 * mu_top / g_side) ** (1.0 / a)
        turning = (mu_top / g_side) ** (1.0 / a)
        hi = max(2.0 * closed, turning + 1.0, min_extent)
        action_ext = None
        for _ in range(40):
            ts = np.linspace(turning, hi, 8001)
            vals = np.asarray(evaluate(g, sign * ts), dtype=float)
            action = cumulative_trapezoid(np.sqrt(np.maximum(vals - mu_top, 0.0)),
                                          ts, initial=0.0)
            if action[-1] >= need:
                action_ext = float(ts[int(np.searchsorted(action, need))])
                break
            hi *= 1.6
            if hi > 4.0 * cap:
                break
        if action_ext is None:
            raise ExtentOverflow(
                f"decay action {need:.1f} not reachable below extent {4.0 * cap:g}")
        best = max(best, closed, action_ext)
    if best > cap:
        raise ExtentOverflow(f"required transverse extent {best:.2f} exceeds cap {cap:g}")
    return math.ceil(best / granularity) * granularity


def _is_even(g: PotentialExpr) -> bool:
    probes = np.array([0.31, 0.77, 1.35, 2.6])
    left = np.asarray(evaluate(g, -probes), dtype=float)
    right = np.asarray(evaluate(g, probes), dtype=float)
    return bool(np.all(np.abs(left - right) <= 1e-11 * (1.0 + np.abs(right))))


def _parity_tags(vectors: np.ndarray, even_potential: bool) -> tuple:
    if not even_potential:
        return tuple(None for _ in range(vectors.shape[1]))
    tags = []
    for col in vectors.T:
        flipped = col[::-1]
        if np.linalg.norm(col - flipped) <= 1e-7:
            tags.append("even")
        elif np.linalg.norm(col + flipped) <= 1e-7:
            tags.append("odd")
        else:
            tags.append(None)
    return tuple(tags)


def transverse_spectrum(g: PotentialExpr, a: float, j_max: int, *,
                        n_points: int = 1601, order: int = 4,
                        decay: float = 1e-12,
                        extent: float | None = None) -> TransverseSpectrum:
    """Lowest ``j_max`` eigenpairs of ``-(d/dt)^2 + g(t)``.

    The interval half-width is bootstrapped: a cheap low-order solve estimates
    the top requested level, :func:`transverse_extent` turns that into a
    sufficient extent, and the loop repeats until the extent stops growing.
    The final pair of nested grids (``n_points`` and its refinement) is
    Richardson extrapolated at the stencil order.
    """
    if j_max < 1:
        raise ValueError("j_max must be at least 1")
    key = (str(g), float(a), int(j_max), int(n_points), int(order),
           float(decay), None if extent is None else float(extent))
    cached = _MEMO.get(key)
    if cached is not None:
        return cached

    if extent is None:
        mu_top = 2.0 * j_max + 1.0  # exact for g = t^2, a usable seed otherwise
        half_width = None
        for _ in range(6):
            required = transverse_extent(g, a, mu_top, decay=decay)
            if half_width is not None and required <= half_width:
                break
            half_width = required
            probe = dense_lowest(assemble_1d(g, grid1d(half_width, 401), order=2), j_max)
            mu_top = 1.02 * float(probe.eigenvalues[-1])
    else:
        half_width = float(extent)

    coarse_grid = grid1d(half_width, n_points)
    build = lambda grd: assemble_1d(g, grd, order=order)
    pair = richardson_pair(build, coarse_grid, j_max, order=order)

    fine_grid = coarse_grid.refined()
    fine_op = build(fine_grid)
    delta = fine_grid.axes[0].delta
    phi = pair.fine.vectors / math.sqrt(delta)
    parities = _parity_tags(pair.fine.vectors, _is_even(g))

    spectrum = TransverseSpectrum(
        mu=pair.values,
        phi=phi,
        parities=parities,
        budgets=pair.budgets,
        grid=fine_grid,
        operator=fine_op,
        a=float(a),
        meta={
            "g": str(g),
            "extent": half_width,
            "order": order,
            "coarse_points": n_points,
            "fine_points": 2 * n_points - 1,
            "decay": decay,
        },
    )
    _MEMO[key] = spectrum
    return spectrum


def fiber_eigenvalue(mu, f_value, a: float):
    """Eigenvalue curve of the fiber model  -(d/dt)^2 + f * g(t).

    Scaling t by f**(1/(2+a)) maps the fiber model back to the reference one,
    so each level is the reference level times f**(2/(2+a)).
    """
    f_arr = np.asarray(f_value, dtype=float)
    if np.any(f_arr <= 0):
        raise NonPositive("fiber eigenvalues need a positive slow factor")
    out = np.asarray(mu, dtype=float) * f_arr ** (2.0 / (2.0 + a))
    if np.isscalar(mu) and f_arr.ndim == 0:
        return float(out)
    return out


def essential_floor(mu_1: float, f_infinity: float, a: float) -> float:
    """Bottom of the essential spectrum: the first level at the slow tail."""
    if math.isinf(f_infinity):
        return math.inf
    return float(fiber_eigenvalue(mu_1, f_infinity, a))


def odd_moment(spectrum: TransverseSpectrum, j: int, m: int) -> float:
    """Trapezoid value of  int t^(2m-1) phi_j(t)^2 dt  (zero for even g)."""
    if not 1 <= j <= spectrum.mu.size:
        raise ValueError(f"level {j} not computed (have {spectrum.mu.size})")
    if m < 1:
        raise ValueError("m must be a positive integer")
    nodes = spectrum.grid.axes[0].interior()
    density = spectrum.phi[:, j - 1] ** 2
    return float(spectrum.delta * np.sum(nodes ** (2 * m - 1) * density))


def corrector_solve(spectrum: TransverseSpectrum, j: int, rhs, *,
                    tol: float = 1e-10, max_iters: int | None = None) -> CorrectorSolution:
    """Solve ``(T - mu_j) w = r`` on the orthogonal complement of level j.

    The right-hand side is projected off ``phi_j`` first (the discarded
    fraction is reported), and the shifted operator is applied through the
    same projector on both sides; the reported residual is that of the
    projected system, relative to its right-hand side.  MINRES is used rather
    than CG: on the complement the shift makes the operator indefinite as
    soon as j > 1.  Its backward-error stopping test leaves a residual far
    above ``tol`` for stiff grids, so the solve is wrapped in iterative
    refinement until the residual target is met.
    """
    if not 1 <= j <= spectrum.mu.size:
        raise ValueError(f"level {j} not computed (have {spectrum.mu.size})")
    mu_j = float(spectrum.mu[j - 1])
    others = np.delete(spectrum.mu, j - 1)
    if others.size:
        gap = float(np.min(np.abs(others - mu_j)))
        if gap < _DEGENERACY_GAP * (1.0 + abs(mu_j)):
            raise DegenerateLevel(
                f"level {j} sits {gap:.3e} from a neighbor; corrector is ill-posed")

    n = spectrum.grid.dimension
    r = np.asarray(rhs, dtype=float)
    if r.shape != (n,):
        raise ValueError(f"rhs must have shape ({n},), got {r.shape}")

    unit = spectrum.phi[:, j - 1] * math.sqrt(spectrum.delta)
    unit = unit / np.linalg.norm(unit)
    along = float(unit @ r)
    r_perp = r - unit * along
    rhs_norm = float(np.linalg.norm(r))
    perp_norm = float(np.linalg.norm(r_perp))
    if perp_norm <= 1e-14 * rhs_norm or perp_norm == 0.0:
        return CorrectorSolution(np.zeros(n), 0.0, 0.0,
                                 discarded=0.0 if rhs_norm == 0.0 else 1.0,
                                 iterations=0)

    shifted = (spectrum.operator.matrix - mu_j * identity(n, format="csr")).tocsr()

    def projected(vec):
        inner = vec - unit * (unit @ vec)
        out = shifted @ inner
        return out - unit * (unit @ out)

    count = [0]

    def tick(_xk):
        count[0] += 1

    action = LinearOperator((n, n), matvec=projected, dtype=float)
    budget = max_iters if max_iters is not None else 40 * n
    w = np.zeros(n)
    residual = 1.0
    for _ in range(8):
        remaining = budget - count[0]
        if remaining <= 0:
            break
        step, _info = minres(action, r_perp - projected(w), rtol=min(tol, 1e-10),
                             maxiter=remaining, callback=tick)
        w = w + step
        w = w - unit * (unit @ w)
        previous = residual
        residual = float(np.linalg.norm(projected(w) - r_perp)) / perp_norm
        if residual <= tol or residual > 0.5 * previous:
            break
    if residual > tol:
        raise NoConvergence(f"corrector for level {j} stalled at residual {residual:.3e}",
                            iterations=count[0], worst_residual=residual)
    w_norm = float(np.linalg.norm(w))
    orthogonality = abs(float(unit @ w)) / w_norm if w_norm > 0 else 0.0
    return CorrectorSolution(
        w=w,
        residual=residual,
        orthogonality=orthogonality,
        discarded=abs(along) / rhs_norm if rhs_norm > 0 else 0.0,
        iterations=count[0],
    )
