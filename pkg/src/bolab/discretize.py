"""Finite-difference discretization on symmetric tensor grids.

Conventions
-----------
Each axis carries ``N`` equispaced points on ``[-L, L]`` including both
endpoints, ``Delta = 2L/(N-1)``, with ``N`` odd so that 0 is always a grid
point.  Homogeneous Dirichlet walls sit exactly at ``+-L``: the assembled
operators act on the ``N - 2`` interior points per axis, so refining
``N -> 2N - 1`` halves ``Delta`` while keeping the domain fixed (this is what
makes two-grid Richardson extrapolation legitimate).

Second-derivative stencils (for ``-d^2/dt^2``, symmetric by construction):

* order 2:  ``[-1, 2, -1] / Delta^2``
* order 4:  ``[1, -16, 30, -16, 1] / (12 Delta^2)``

Near the walls the stencil is truncated (ghost values taken as zero), which
keeps the matrix exactly symmetric; for the confining potentials used here
eigenfunctions are exponentially small at the walls, so the truncation error
is far below the stencil error.

Multi-axis operators are Kronecker sums assembled in C order: the flattened
index of the point ``(i_0, i_1, ..)`` is ``i_0 * n_1 * n_2 .. + i_1 * ..``,
matching ``numpy.meshgrid(indexing='ij')`` followed by ``ravel()``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np
from scipy import sparse

from .errors import ExtentOverflow, SizeError
from .expr import PotentialExpr, evaluate

MAX_ROWS_DEFAULT = 4_000_000

_STENCILS = {
    2: np.array([2.0, -1.0]),
    4: np.array([30.0, -16.0, 1.0]) / 12.0,
}


@dataclass(frozen=True)
class Axis:
    """One grid axis: half-extent L and total point count N (odd, >= 16)."""

    extent: float
    points: int

    def __post_init__(self):
        if self.extent <= 0:
            raise ValueError(f"axis extent must be positive, got {self.extent}")
        if self.points < 16 or self.points % 2 == 0:
            raise ValueError(f"axis needs an odd point count >= 16, got {self.points}")

    @property
    def delta(self) -> float:
        return 2.0 * self.extent / (self.points - 1)

    @property
    def interior_count(self) -> int:
        return self.points - 2

    def nodes(self) -> np.ndarray:
        return np.linspace(-self.extent, self.extent, self.points)

    def interior(self) -> np.ndarray:
        return self.nodes()[1:-1]

    def refined(self) -> "Axis":
        return Axis(self.extent, 2 * self.points - 1)


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid; by convention the transverse axis comes last."""

    axes: tuple[Axis, ...]

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def dimension(self) -> int:
        return prod(axis.interior_count for axis in self.axes)

    def refined(self) -> "Grid":
        return Grid(tuple(axis.refined() for axis in self.axes))

    def key_payload(self) -> list:
        return [[axis.extent, axis.points] for axis in self.axes]


def grid1d(extent: float, points: int) -> Grid:
    return Grid((Axis(extent, points),))


def make_grid(extents, points) -> Grid:
    return Grid(tuple(Axis(float(e), int(p)) for e, p in zip(extents, points)))


@dataclass(frozen=True)
class DiscreteOperator:
    """Sparse symmetric operator on the interior points of a grid."""

    matrix: sparse.csr_matrix
    grid: Grid
    order: int
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def is_exactly_symmetric(self) -> bool:
        return (self.matrix != self.matrix.T).nnz == 0

    def key_payload(self) -> dict:
        return {
            "meta": self.meta,
            "grid": self.grid.key_payload(),
            "order": self.order,
        }

    def to_triplet_text(self) -> str:
        """Export as text: a '# rows cols nnz' header then 'i j value' lines.

        Indices are 0-based over the flattened interior lattice; every stored
        entry appears (the matrix is symmetric, both triangles are present).
        """
        coo = self.matrix.tocoo()
        lines = [f"# symmetric sparse operator, order={self.order}"]
        lines.append(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            lines.append(f"{i} {j} {float(v)!r}")
        return "\n".join(lines) + "\n"


def _second_derivative_1d(axis: Axis, order: int) -> sparse.csr_matrix:
    """Matrix of -d^2/dt^2 on the axis interior (truncated Toeplitz band)."""
    if order not in _STENCILS:
        raise ValueError(f"stencil order must be one of {sorted(_STENCILS)}, got {order}")
    coeffs = _STENCILS[order] / axis.delta**2
    n = axis.interior_count
    offsets = range(-(len(coeffs) - 1), len(coeffs))
    diags = [np.full(n - abs(k), coeffs[abs(k)]) for k in offsets]
    return sparse.diags_array(diags, offsets=list(offsets), format="csr")


def _potential_values(v, grid: Grid) -> np.ndarray:
    """Evaluate a potential on the interior lattice, flattened in C order."""
    meshes = np.meshgrid(*(axis.interior() for axis in grid.axes), indexing="ij")
    if isinstance(v, PotentialExpr):
        values = evaluate(v, tuple(meshes) if len(meshes) > 1 else meshes[0])
    elif callable(v):
        values = v(*meshes)
    else:
        values = np.asarray(v, dtype=float)
        expected = tuple(axis.interior_count for axis in grid.axes)
        if values.shape != expected and values.shape != (prod(expected),):
            raise ValueError(f"potential array has shape {values.shape}, expected {expected}")
    values = np.broadcast_to(np.asarray(values, dtype=float), meshes[0].shape)
    if not np.all(np.isfinite(values)):
        raise ValueError("potential evaluated to a non-finite value on the grid")
    return values.ravel()


def _check_size(grid: Grid, max_rows: int) -> None:
    if grid.dimension > max_rows:
        raise SizeError(
            f"operator would have {grid.dimension} rows, exceeding the cap {max_rows}"
        )


def assemble_nd(v, grid: Grid, weights, order: int = 4,
                max_rows: int = MAX_ROWS_DEFAULT, meta: dict | None = None) -> DiscreteOperator:
    """Kronecker-sum Laplacian with per-axis kinetic weights plus a potential."""
    weights = tuple(float(w) for w in weights)
    if len(weights) != grid.ndim:
        raise ValueError("one kinetic weight per axis is required")
    _check_size(grid, max_rows)
    sizes = [axis.interior_count for axis in grid.axes]
    total = prod(sizes)
    matrix = sparse.csr_matrix((total, total))
    for k, (axis, weight) in enumerate(zip(grid.axes, weights)):
        kinetic = _second_derivative_1d(axis, order) * weight
        left = prod(sizes[:k])
        right = prod(sizes[k + 1:])
        term = kinetic
        if left > 1:
            term = sparse.kron(sparse.identity(left, format="csr"), term, format="csr")
        if right > 1:
            term = sparse.kron(term, sparse.identity(right, format="csr"), format="csr")
        matrix = matrix + term
    matrix = matrix + sparse.diags_array(_potential_values(v, grid), format="csr")
    op = DiscreteOperator(matrix.tocsr(), grid, order, meta or {})
    assert op.is_exactly_symmetric()
    return op


def assemble_1d(v, grid: Grid, c: float = 1.0, order: int = 4,
                max_rows: int = MAX_ROWS_DEFAULT, meta: dict | None = None) -> DiscreteOperator:
    """One-dimensional operator  c * D^2 + V(t)  with Dirichlet walls."""
    if grid.ndim != 1:
        raise ValueError("assemble_1d needs a one-axis grid")
    base = meta or {}
    base = {"kind": "1d", "c": c, **base}
    return assemble_nd(v, grid, (c,), order, max_rows, base)


def assemble_fibered(model, params, grid: Grid, order: int = 4,
                     max_rows: int = MAX_ROWS_DEFAULT) -> DiscreteOperator:
    """Rescaled fibered operator  hbar^2 D_x^2 + D_y^2 + f(x) g(y).

    The grid carries the n longitudinal axes first, the transverse axis last.
    """
    if grid.ndim != model.n + 1:
        raise ValueError(f"grid must have {model.n + 1} axes for n = {model.n}")
    x_axes = grid.axes[:-1]
    y_axis = grid.axes[-1]
    fx = _potential_values(model.f_expr, Grid(x_axes)).reshape(
        [axis.interior_count for axis in x_axes]
    )
    gy = _potential_values(model.g_expr, Grid((y_axis,)))

    def product_potential(*meshes):
        return (fx[..., None] * gy).reshape(meshes[0].shape)

    weights = (params.hbar**2,) * model.n + (1.0,)
    meta = {
        "kind": "fibered",
        "model": model.key_payload(),
        "hbar": params.hbar,
    }
    return assemble_nd(product_potential, grid, weights, order, max_rows, meta)


def assemble_ambient(v: PotentialExpr, h: float, grid: Grid, order: int = 4,
                     max_rows: int = MAX_ROWS_DEFAULT) -> DiscreteOperator:
    """Planar operator  -h^2 Laplacian + V(z)  on a two-axis grid."""
    if grid.ndim != 2:
        raise ValueError("assemble_ambient expects a two-axis grid")
    meta = {"kind": "ambient", "V": str(v), "h": h}
    return assemble_nd(v, grid, (h**2, h**2), order, max_rows, meta)


# --- truncation extents -----------------------------------------------------------

_LOG_DECAY = None  # computed from the decay target below


def _directional_agmon_extent(profile, threshold: float, target: float,
                              cap: float, samples_per_unit: int = 200) -> float:
    """Smallest L with  integral_0^L sqrt(max(profile(t) - threshold, 0)) dt >= target."""
    t = np.linspace(0.0, cap, int(cap * samples_per_unit) + 1)
    integrand = np.sqrt(np.maximum(np.asarray(profile(t), dtype=float) - threshold, 0.0))
    cumulative = np.concatenate(
        [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))]
    )
    hits = np.nonzero(cumulative >= target)[0]
    if hits.size == 0:
        raise ExtentOverflow(
            f"decay target {target:.3g} not reachable below extent cap {cap}"
        )
    return float(t[hits[0]])


def choose_extent(model, params, j_max: int, k_max: int, mu, *,
                  decay: float = 1e-12, min_extent: float = 4.0,
                  x_cap: float = 40.0, y_cap: float = 60.0,
                  granularity: float = 0.25) -> tuple[float, ...]:
    """Per-axis truncation half-widths for the fibered operator.

    Longitudinal axes: the turning-point action  integral of
    sqrt([f^(2/(2+a)) - nu/mu_j]_+)  must reach  hbar_j * log(1/decay)  so
    the eigenfunction mass at the wall is below ``decay``.  Transverse axis:
    g at the wall must exceed 4 * mu_{j_max} and the transverse action must
    reach  log(1/decay) / 2.  Results are rounded up to ``granularity`` and
    clamped below by ``min_extent`` (extents are monotone: they only shrink
    as hbar decreases).
    """
    mu = np.asarray(mu, dtype=float)
    if mu.size < j_max:
        raise ValueError(f"need at least {j_max} transverse eigenvalues, got {mu.size}")
    exponent = 2.0 / (2.0 + model.a)
    log_decay = float(np.log(1.0 / decay))
    # harmonic bound for the highest longitudinal level of interest (mu-free)
    q = np.linalg.eigvalsh(model.hess_f0)
    level_bound = (2 * k_max - 1) * float(np.sum(np.sqrt(q / (2.0 + model.a))))

    extents = []
    for i in range(model.n):
        needed = min_extent
        for j in range(1, j_max + 1):
            hbar_j = params.hbar / np.sqrt(mu[j - 1])
            threshold = 1.0 + hbar_j * level_bound

            def profile(t, _i=i):
                point = tuple(t if k == _i else np.zeros_like(t) for k in range(model.n))
                fvals = evaluate(model.f_expr, point if model.n > 1 else point[0])
                return np.asarray(fvals, dtype=float) ** exponent

            for sign in (1.0, -1.0):
                length = _directional_agmon_extent(
                    lambda t, s=sign, p=profile: p(s * t),
                    threshold, hbar_j * log_decay, x_cap,
                )
                needed = max(needed, length)
        extents.append(needed)

    mu_top = float(mu[j_max - 1])
    y_needed = min_extent
    for sign in (1.0, -1.0):
        g_at_one = evaluate(model.g_expr, sign * 1.0)
        if g_at_one <= 0:
            raise ValueError("g must be positive away from the origin")
        # homogeneity gives the 4*mu wall rule in closed form
        y_needed = max(y_needed, (4.0 * mu_top / g_at_one) ** (1.0 / model.a))
        length = _directional_agmon_extent(
            lambda t, s=sign: np.asarray(evaluate(model.g_expr, s * t), dtype=float),
            mu_top, 0.5 * log_decay, y_cap,
        )
        y_needed = max(y_needed, length)

    extents.append(y_needed)
    return tuple(
        float(np.ceil(e / granularity) * granularity) for e in extents
    )
