"""Wells concentrated on a closed planar curve.

A nonnegative potential that vanishes to even order 2m exactly on a closed
curve confines low-lying states to a thin tube around that curve.  This
module extracts the transverse profile f(theta) -- the coefficient of
t^(2m) in V along the unit normal -- locates the minima of f, forms the
two-term eigenvalue predictions attached to each minimum, and verifies
those predictions against direct planar eigensolves.

Everything is two-dimensional: the well set is a curve, the arc-length
Hessian of f at a minimum is a scalar rho^2, and the positive trace that
enters the predictions degenerates to the single value rho.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import cumulative_trapezoid

from .discretize import Grid, assemble_ambient, make_grid
from .effective import Prediction
from .eigensolve import cluster_eigenvalues, richardson_pair, solve_lowest
from .errors import (
    ContinuumOfMinima,
    DegenerateMinimum,
    DegenerateParametrization,
    ExtentOverflow,
    MatchAmbiguity,
    OrderMismatch,
    OutsideValidity,
)
from .expr import PotentialExpr, derive, parse_expr
from .transverse import transverse_spectrum

TWO_PI = 2.0 * math.pi


# --- curve sampling ---------------------------------------------------------------


@dataclass(frozen=True)
class GammaCurve:
    """A closed immersed curve sampled on a uniform parameter grid.

    ``normal`` is the unit tangent rotated a quarter turn to the right,
    times ``orientation``; for a counterclockwise convex loop and
    orientation +1 it points outward.
    """

    theta: np.ndarray        # (n,), uniform on [0, 2*pi)
    points: np.ndarray       # (n, 2)
    tangent: np.ndarray      # (n, 2), unit
    normal: np.ndarray       # (n, 2), unit
    speed: np.ndarray        # (n,), |d(gamma)/d(theta)|, strictly positive
    curvature: np.ndarray    # (n,), unsigned
    orientation: int
    x_text: str
    y_text: str

    @property
    def n_samples(self) -> int:
        return self.theta.size

    @property
    def total_length(self) -> float:
        # periodic trapezoid rule collapses to the mean
        return float(np.mean(self.speed) * TWO_PI)

    def arclength(self) -> np.ndarray:
        """Cumulative arc length from theta = 0 to each sample."""
        return cumulative_trapezoid(self.speed, self.theta, initial=0.0)


def _as_curve_expr(obj) -> PotentialExpr:
    if isinstance(obj, PotentialExpr):
        if len(obj.variables) != 1:
            raise ValueError(
                f"curve coordinate must depend on one parameter, got {obj.variables}")
        return obj
    return parse_expr(str(obj), ("theta",))


def build_gamma(x_expr, y_expr, *, orientation: int = 1,
                n_samples: int = 1024) -> GammaCurve:
    """Sample a closed curve (x(theta), y(theta)) with its moving frame.

    The parameter runs over [0, 2*pi).  Tangent and curvature come from the
    symbolic derivatives of the coordinate expressions.  Rejected inputs:
    curves that fail to close, lose immersion (vanishing tangent), or pass
    through the same point twice (checked by comparing chord distances
    against arc separation on the sample set).
    """
    if orientation not in (-1, 1):
        raise ValueError(f"orientation must be +1 or -1, got {orientation}")
    if n_samples < 64:
        raise ValueError(f"need at least 64 curve samples, got {n_samples}")
    x = _as_curve_expr(x_expr)
    y = _as_curve_expr(y_expr)
    var = x.variables[0]
    if y.variables != x.variables:
        y = PotentialExpr(y.root, x.variables) if y.variables == (var,) else y
    dx, dy = derive(x, var), derive(y, var)
    ddx, ddy = derive(dx, var), derive(dy, var)

    theta = np.linspace(0.0, TWO_PI, n_samples, endpoint=False)
    px, py = np.asarray(x(theta), float), np.asarray(y(theta), float)
    points = np.column_stack([px, py])

    scale = 1.0 + float(np.max(np.abs(points)))
    end_gap = math.hypot(float(x(TWO_PI)) - float(x(0.0)),
                         float(y(TWO_PI)) - float(y(0.0)))
    if end_gap > 1e-10 * scale:
        raise DegenerateParametrization(
            f"curve does not close: endpoint gap {end_gap:.3e}")

    vx, vy = np.asarray(dx(theta), float), np.asarray(dy(theta), float)
    speed = np.hypot(vx, vy)
    if speed.min() <= 1e-8 * speed.max():
        worst = theta[int(np.argmin(speed))]
        raise DegenerateParametrization(
            f"tangent vanishes near theta = {worst:.6f}")
    tangent = np.column_stack([vx, vy]) / speed[:, None]
    normal = orientation * np.column_stack([tangent[:, 1], -tangent[:, 0]])
    ax, ay = np.asarray(ddx(theta), float), np.asarray(ddy(theta), float)
    curvature = np.abs(vx * ay - vy * ax) / speed**3

    # self-intersection scan: points far apart along the curve must also be
    # far apart in the plane
    arc = cumulative_trapezoid(speed, theta, initial=0.0)
    total = float(arc[-1] + 0.5 * (speed[-1] + speed[0]) * (TWO_PI / n_samples))
    d_arc = np.abs(arc[:, None] - arc[None, :])
    d_circ = np.minimum(d_arc, total - d_arc)
    chord2 = ((px[:, None] - px[None, :])**2 + (py[:, None] - py[None, :])**2)
    far = d_circ >= total / 16.0
    close = chord2 < (0.1 * d_circ)**2
    if np.any(far & close):
        i, j = np.unravel_index(int(np.argmax(far & close)), chord2.shape)
        raise DegenerateParametrization(
            f"curve nearly passes through itself: theta = {theta[i]:.4f} and "
            f"{theta[j]:.4f} are {math.sqrt(chord2[i, j]):.3e} apart in the "
            f"plane but {d_circ[i, j]:.3f} apart along the curve")

    return GammaCurve(theta=theta, points=points, tangent=tangent,
                      normal=normal, speed=speed, curvature=curvature,
                      orientation=orientation, x_text=str(x), y_text=str(y))


# --- transverse profile extraction -------------------------------------------------


def _potential_callable(v):
    if isinstance(v, PotentialExpr):
        if len(v.variables) != 2:
            raise ValueError(
                f"planar potential must have two variables, got {v.variables}")
        return v
    if callable(v):
        return v
    return parse_expr(str(v), ("x", "y"))


def _normal_taylor(v, points, normals, eps, nodes):
    """Interpolating coefficients of t -> V(p + t*n) sampled at eps*nodes.

    Returns (phi, d) where d[:, r] estimates (Taylor coefficient r) * eps^r.
    """
    t = eps[:, None] * nodes[None, :]
    qx = points[:, 0, None] + t * normals[:, 0, None]
    qy = points[:, 1, None] + t * normals[:, 1, None]
    phi = np.asarray(v(qx, qy), dtype=float)
    vander = np.vander(nodes, increasing=True)
    d = np.linalg.solve(vander, phi.T).T
    return phi, d


def _profile_coefficients(v, m, points, normals, steps, theta=None):
    """Order-2m normal Taylor coefficient of ``v`` at each point.

    Central stencils on nodes step*{-(m+1), ..., m+1} at two step scales,
    Richardson-extrapolated at fourth order.  Raises OrderMismatch when the
    potential carries lower-order content along the normal, when the
    extracted coefficient fails to be positive, or when halving the step
    moves the answer by more than a 5% consistency margin.
    """
    nodes = np.arange(-(m + 1), m + 2, dtype=float)
    nn = nodes.size                       # 2m + 3
    steps = np.asarray(steps, dtype=float)
    phi1, d1 = _normal_taylor(v, points, normals, steps, nodes)
    phi2, d2 = _normal_taylor(v, points, normals, 0.5 * steps, nodes)
    phimax = np.maximum(np.abs(phi1).max(axis=1), np.abs(phi2).max(axis=1))

    def _where(i):
        if theta is None:
            return f"sample {i}"
        return f"theta = {float(np.asarray(theta).ravel()[i]):.6f}"

    # Sub-order coefficients must vanish.  The raw estimates contain
    # interpolation leakage from the first neglected degree of the same
    # parity, which shrinks by 2^(K-r) under step halving, so a two-scale
    # extrapolation isolates the genuine content.
    r = np.arange(2 * m)
    leak = np.where(r % 2 == 1, nn, nn + 1)
    shrink = 2.0 ** (leak - r)
    u1 = d1[:, : 2 * m] / steps[:, None] ** r
    u2 = d2[:, : 2 * m] / (0.5 * steps[:, None]) ** r
    c_low = (shrink * u2 - u1) / (shrink - 1.0)
    low = np.abs(c_low) * steps[:, None] ** r
    worst = low.max(axis=1)
    bad = worst > 1e-6 * (phimax + 1e-300)
    if np.any(bad):
        i = int(np.argmax(np.where(bad, worst / (phimax + 1e-300), 0.0)))
        order = int(np.argmax(low[i]))
        raise OrderMismatch(
            f"potential does not vanish to order {2 * m} along the normal at "
            f"{_where(i)}: order-{order} content {low[i, order]:.3e} vs "
            f"profile scale {phimax[i]:.3e}")

    f_coarse = d1[:, 2 * m] / steps ** (2 * m)
    f_fine = d2[:, 2 * m] / (0.5 * steps) ** (2 * m)
    f = (16.0 * f_fine - f_coarse) / 15.0
    budget = np.abs(f_fine - f_coarse) / 15.0
    floor = 1e-8 * (phimax / steps ** (2 * m) + 1e-300)
    flat = f <= floor
    if np.any(flat):
        i = int(np.argmin(f - floor))
        raise OrderMismatch(
            f"transverse profile is not positive at {_where(i)} "
            f"(got {f[i]:.3e}): the potential vanishes to higher order or "
            f"changes sign across the curve")
    rough = budget > 0.05 * np.abs(f) + floor
    if np.any(rough):
        i = int(np.argmax(budget / (np.abs(f) + floor)))
        raise OrderMismatch(
            f"step-halving moved the profile at {_where(i)} by "
            f"{budget[i]:.3e} against value {f[i]:.3e}; the normal "
            f"restriction is not smooth enough for order-{2 * m} extraction")
    return f, budget


def extract_f(v, m: int, point, normal, *, step: float = 0.02) -> float:
    """Coefficient of t^(2m) in V(point + t*normal) at t = 0.

    Equals the 2m-th directional derivative divided by (2m)!.  See
    :func:`_profile_coefficients` for the stencil and the rejection rules.
    """
    if m < 1 or m != int(m):
        raise ValueError(f"degeneracy order m must be a positive integer, got {m}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    vv = _potential_callable(v)
    point = np.asarray(point, dtype=float).reshape(1, 2)
    normal = np.asarray(normal, dtype=float).reshape(1, 2)
    length = float(np.hypot(normal[0, 0], normal[0, 1]))
    if not length > 0:
        raise ValueError("normal direction must be nonzero")
    normal = normal / length
    f, _ = _profile_coefficients(vv, int(m), point, normal,
                                 np.array([float(step)]))
    return float(f[0])


# --- profile minima ----------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceMinimum:
    """One nondegenerate minimum of the transverse profile."""

    theta: float
    value: float
    rho: float          # arc-length curvature scale, rho^2 = f''(sigma)/2
    trplus: float       # positive Hessian trace; equals rho on a curve
    speed: float        # parametrization speed at the minimum


def find_minima(f_samples, speed, *, theta=None):
    """Locate the minima of a periodic profile and their curvatures.

    Grid minima are refined through a local quartic fit (Newton on the fit
    derivative); rho solves rho^2 = f''(sigma)/2 with sigma the arc length,
    using f''(sigma) = f''(theta)/speed^2 at a stationary point.  Returns
    (eta0, minima) with eta0 the smallest refined value.  A constant or
    plateaued profile raises ContinuumOfMinima; a minimum whose curvature
    falls below the 1e-6 * span tolerance raises DegenerateMinimum.
    """
    f = np.asarray(f_samples, dtype=float)
    spd = np.asarray(speed, dtype=float)
    n = f.size
    if n < 16 or spd.size != n:
        raise ValueError("need matching profile and speed arrays, 16+ samples")
    if theta is None:
        theta = np.linspace(0.0, TWO_PI, n, endpoint=False)
    else:
        theta = np.asarray(theta, dtype=float)
    dtheta = theta[1] - theta[0]

    span = float(f.max() - f.min())
    if span <= 1e-10 * (1.0 + abs(float(f.max()))):
        raise ContinuumOfMinima(
            f"profile is constant within tolerance (span {span:.3e})")
    near_min = f <= f.min() + 1e-12 * (1.0 + span)
    if np.any(near_min & np.roll(near_min, 1)):
        raise ContinuumOfMinima("profile attains its minimum on a plateau")

    f_prev, f_next = np.roll(f, 1), np.roll(f, -1)
    candidates = np.flatnonzero((f < f_prev) & (f <= f_next))
    if candidates.size == 0:
        raise ContinuumOfMinima("no interior minimum found")

    offsets = np.arange(-2.0, 3.0)
    vander = np.vander(offsets, increasing=True)
    minima = []
    for i in candidates:
        window = (np.arange(i - 2, i + 3)) % n
        cf = np.linalg.solve(vander, f[window])
        cs = np.linalg.solve(vander, spd[window])
        u = 0.0
        curv = 2.0 * cf[2]
        for _ in range(25):
            slope = cf[1] + u * (2 * cf[2] + u * (3 * cf[3] + u * 4 * cf[4]))
            curv = 2 * cf[2] + u * (6 * cf[3] + u * 12 * cf[4])
            if curv <= 0:
                break
            step = slope / curv
            u = float(np.clip(u - step, -1.5, 1.5))
            if abs(step) < 1e-15:
                break
        value = float(npoly.polyval(u, cf))
        speed_star = float(npoly.polyval(u, cs))
        fpp_theta = curv / dtheta**2
        rho2 = 0.5 * fpp_theta / speed_star**2
        rho2_tol = 0.5e-6 * span / speed_star**2
        if curv <= 0 or rho2 <= rho2_tol:
            raise DegenerateMinimum(
                f"profile curvature at theta = {theta[i] + u * dtheta:.6f} is "
                f"{rho2:.3e}, below the degeneracy tolerance {rho2_tol:.3e}")
        theta_star = float(np.mod(theta[i] + u * dtheta, TWO_PI))
        rho = math.sqrt(rho2)
        minima.append(SurfaceMinimum(theta=theta_star, value=value, rho=rho,
                                     trplus=rho, speed=speed_star))
    minima.sort(key=lambda s: s.theta)
    eta0 = min(s.value for s in minima)
    return eta0, tuple(minima)


# --- the assembled well -------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceWell:
    """A planar potential vanishing to order 2m on a closed curve.

    Carries the sampled curve, the extracted transverse profile with its
    extraction budgets, and the refined minima that feed the predictions.
    """

    v: object
    m: int
    gamma: GammaCurve
    f_samples: np.ndarray
    f_budgets: np.ndarray
    eta0: float
    minima: tuple[SurfaceMinimum, ...]
    meta: dict = field(default_factory=dict)

    @property
    def a(self) -> float:
        """Homogeneity degree of the transverse model well t^(2m)."""
        return 2.0 * self.m


def build_surface_well(v, m: int, x_expr, y_expr, *, orientation: int = 1,
                       n_theta: int = 1024, step_scale: float = 0.02) -> SurfaceWell:
    """Sample the curve, extract the profile, and locate its minima.

    Extraction steps scale with the local curvature radius (capped at a
    quarter of the curve length) times ``step_scale``.
    """
    if m < 1 or m != int(m):
        raise ValueError(f"degeneracy order m must be a positive integer, got {m}")
    vv = _potential_callable(v)
    gamma = build_gamma(x_expr, y_expr, orientation=orientation,
                        n_samples=n_theta)
    radius = 1.0 / np.maximum(gamma.curvature, 1e-300)
    steps = step_scale * np.minimum(radius, gamma.total_length / 4.0)
    f, budgets = _profile_coefficients(vv, int(m), gamma.points, gamma.normal,
                                       steps, theta=gamma.theta)

    on_curve = np.abs(np.asarray(vv(gamma.points[:, 0], gamma.points[:, 1]),
                                 dtype=float))
    allowed = 1e-10 * (1.0 + float(np.max(f)) * float(np.max(steps))**(2 * m))
    if float(on_curve.max()) > allowed:
        i = int(np.argmax(on_curve))
        raise OrderMismatch(
            f"curve does not lie in the zero set: |V| = {on_curve[i]:.3e} at "
            f"theta = {gamma.theta[i]:.6f}")

    eta0, minima = find_minima(f, gamma.speed, theta=gamma.theta)
    meta = {"n_theta": int(n_theta), "step_scale": float(step_scale),
            "orientation": int(orientation),
            "max_budget": float(np.max(budgets))}
    return SurfaceWell(v=vv, m=int(m), gamma=gamma, f_samples=f,
                       f_budgets=budgets, eta0=float(eta0), minima=minima,
                       meta=meta)


# --- predictions --------------------------------------------------------------------


def _transverse_mu_for(m: int, j: int) -> float:
    spectrum = transverse_spectrum(parse_expr(f"t^{2 * m}", ("t",)), 2.0 * m, j)
    return float(spectrum.mu[j - 1])


def surface_gate(m: int, mu_j: float, h: float) -> float:
    """Smallness measure h * mu_j^((m+1)(2m+3)/(4m)); predictions need <= 0.1."""
    return h * mu_j ** ((m + 1) * (2 * m + 3) / (4.0 * m))


def predict_surface(well: SurfaceWell, j: int, alpha: int, ell: int, h: float,
                    *, mu: float | None = None) -> Prediction:
    """Two-term eigenvalue prediction for level (j, alpha) at the ell-th minimum.

    value = h^(2m/(m+1)) * [eta0^(1/(m+1)) mu_j
                            + h^(1/(m+1)) sqrt(mu_j) A_ell(alpha)]
    with A_ell(alpha) = (2 alpha rho_ell + trplus_ell)
                        / (eta0^(m/(2m+2)) sqrt(m+1)).

    mu_j is the j-th level of the model well D^2 + t^(2m) (computed, not
    assumed).  The remainder is recorded with bound shape h^2 mu_j^(2+3/(2m)).
    Bands too deep for the asymptotics at this h raise OutsideValidity.
    """
    if j < 1 or alpha < 0:
        raise ValueError(f"need j >= 1 and alpha >= 0, got j={j}, alpha={alpha}")
    if not 1 <= ell <= len(well.minima):
        raise ValueError(f"minimum index ell={ell} out of range "
                         f"1..{len(well.minima)}")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    m = well.m
    mu_j = float(mu) if mu is not None else _transverse_mu_for(m, j)
    gate = surface_gate(m, mu_j, h)
    if gate > 0.1 * (1.0 + 1e-9):
        raise OutsideValidity(
            f"band j={j} (mu = {mu_j:.6g}) fails the smallness gate at "
            f"h = {h}: h * mu^((m+1)(2m+3)/(4m)) = {gate:.4g} > 0.1")

    spot = well.minima[ell - 1]
    eta0 = well.eta0
    coupling = ((2.0 * alpha * spot.rho + spot.trplus)
                / (eta0 ** (m / (2.0 * m + 2.0)) * math.sqrt(m + 1.0)))
    value = h ** (2.0 * m / (m + 1.0)) * (
        eta0 ** (1.0 / (m + 1.0)) * mu_j
        + h ** (1.0 / (m + 1.0)) * math.sqrt(mu_j) * coupling)
    return Prediction(
        regime="surface",
        j=j,
        k=alpha,
        value=float(value),
        remainder_order=2.0,
        remainder_scale=float(h**2 * mu_j ** (2.0 + 1.5 / m)),
        hbar_j=float(h ** (1.0 / (m + 1.0)) / math.sqrt(mu_j)),
        validity={"h": float(h), "mu_j": mu_j, "gate": float(gate),
                  "gate_cap": 0.1, "ell": int(ell), "theta": spot.theta,
                  "coupling": float(coupling)},
    )


# --- direct verification -------------------------------------------------------------


def ambient_grid(well: SurfaceWell, h: float, *, delta: float | None = None,
                 decay: float = 1e-12, margin: float = 0.15,
                 reach_cap: float = 8.0) -> Grid:
    """Square grid sized so wall truncation sits below the solve budgets.

    The half-extent adds to the curve's bounding box the outward distance at
    which the tunneling action along sampled normals reaches ln(1/decay)/2.
    The default spacing resolves the transverse width (h^2/eta0)^(1/(2m+2))
    with enough points for fourth-order extrapolation.
    """
    target = 0.5 * math.log(1.0 / decay)
    stride = max(1, well.gamma.n_samples // 128)
    pts = well.gamma.points[::stride]
    nrm = well.gamma.normal[::stride]
    t = np.linspace(0.0, reach_cap, 1025)
    qx = pts[:, 0, None] + t[None, :] * nrm[:, 0, None]
    qy = pts[:, 1, None] + t[None, :] * nrm[:, 1, None]
    vals = np.sqrt(np.clip(np.asarray(well.v(qx, qy), dtype=float), 0.0, None))
    action = cumulative_trapezoid(vals, t, axis=1, initial=0.0) / h
    reached = action >= target
    if not np.all(np.any(reached, axis=1)):
        raise ExtentOverflow(
            f"tunneling action did not reach {target:.1f} within distance "
            f"{reach_cap} of the curve; enlarge reach_cap or check growth")
    first = np.argmax(reached, axis=1)
    rows = np.arange(pts.shape[0])
    reach_x = np.abs(qx[rows, first])
    reach_y = np.abs(qy[rows, first])
    extent = max(float(np.max(np.abs(well.gamma.points))),
                 float(np.max(reach_x)), float(np.max(reach_y))) + margin

    if delta is None:
        width = (h * h / well.eta0) ** (1.0 / (2.0 * well.m + 2.0))
        delta = width / 8.0
    n = int(math.ceil(2.0 * extent / delta))
    n += 1 - n % 2
    n = max(n, 33)
    return make_grid((extent, extent), (n, n))


@dataclass(frozen=True)
class SurfaceRow:
    """One verified level: prediction next to its matched computed value."""

    h: float
    j: int
    alpha: int
    ell: int
    theta: float
    mu: float
    predicted: float
    computed: float
    error: float
    budget: float


@dataclass(frozen=True)
class SurfaceSweep:
    """All verified levels of a surface well over a list of h values."""

    rows: tuple[SurfaceRow, ...]
    meta: dict = field(default_factory=dict)

    def remainder_ratios(self, m: int) -> np.ndarray:
        """|error| over the remainder shape h^2 mu^(2+3/(2m)), per row."""
        return np.array([abs(r.error) / (r.h**2 * r.mu ** (2.0 + 1.5 / m))
                         for r in self.rows])


def _match_injective(pred_values, computed, *, tie_ratio: float = 1.2):
    """Assign each prediction the nearest computed value, injectively.

    Predictions that coincide within 1e-9 relative are treated as one
    cluster claiming consecutive computed values.  Raises MatchAmbiguity
    when clusters contend for the same computed value or when the runner-up
    candidate sits within ``tie_ratio`` of the best distance.
    """
    pred_values = np.asarray(pred_values, dtype=float)
    computed = np.asarray(computed, dtype=float)
    scale = 1.0 + float(np.max(np.abs(pred_values)))
    clusters = cluster_eigenvalues(pred_values, gap_tol=1e-9 * scale)
    taken: set[int] = set()
    matched = np.empty(pred_values.size, dtype=int)
    for members in clusters:
        center = float(np.mean(pred_values[members]))
        dist = np.abs(computed - center)
        order = np.argsort(dist)
        want = len(members)
        chosen = sorted(int(i) for i in order[:want])
        if chosen != list(range(chosen[0], chosen[0] + want)):
            raise MatchAmbiguity(
                f"the {want} computed values nearest {center:.8g} are not "
                f"consecutive; spectrum too coarse to separate the cluster")
        if any(i in taken for i in chosen):
            raise MatchAmbiguity(
                f"predictions contend for the same computed value near "
                f"{center:.8g}")
        worst = float(dist[chosen[-1]])
        if want < computed.size:
            runner = float(dist[order[want]])
            if runner < tie_ratio * max(worst, 1e-300):
                raise MatchAmbiguity(
                    f"prediction {center:.8g} matches {computed[chosen[-1]]:.8g} "
                    f"but the runner-up {computed[int(order[want])]:.8g} is "
                    f"within {tie_ratio}x of the match distance")
        for rank, i in zip(members, chosen):
            matched[rank] = i
        taken.update(chosen)
    return matched


def verify_surface(well: SurfaceWell, j_max: int, alpha_max: int, h_list, *,
                   grids=None, delta: float | None = None, k_margin: int = 4,
                   order: int = 4, seed: int = 0, tol: float = 1e-8,
                   decay: float = 1e-12, jobs: int = 1) -> SurfaceSweep:
    """Predict every in-gate level and match it against direct planar solves.

    Per h: assemble -h^2*Laplacian + V on a nested grid pair, take the
    lowest Richardson-extrapolated eigenvalues, and match predictions to
    computed values injectively (see :func:`_match_injective`).  ``grids``
    may be a mapping or callable h -> Grid; by default :func:`ambient_grid`
    sizes the box from the tunneling action.  Bands that fail the validity
    gate at a given h are skipped and recorded in ``meta["skipped"]``.
    """
    h_list = [float(h) for h in h_list]
    if not h_list:
        raise ValueError("h_list must not be empty")
    mu_values = {j: _transverse_mu_for(well.m, j) for j in range(1, j_max + 1)}

    def grid_for(h: float) -> Grid:
        if grids is None:
            return ambient_grid(well, h, delta=delta, decay=decay)
        if callable(grids):
            return grids(h)
        return grids[h]

    def solve_one(h: float):
        preds = []
        skipped = []
        for ell in range(1, len(well.minima) + 1):
            for j in range(1, j_max + 1):
                for alpha in range(alpha_max + 1):
                    try:
                        pred = predict_surface(well, j, alpha, ell, h,
                                               mu=mu_values[j])
                    except OutsideValidity:
                        skipped.append((h, j, alpha, ell))
                        continue
                    preds.append(pred)
        if not preds:
            raise OutsideValidity(
                f"no band passes the validity gate at h = {h}")
        preds.sort(key=lambda p: p.value)
        grid = grid_for(h)
        extrap = richardson_pair(
            lambda g: assemble_ambient(well.v, h, g, order=order),
            grid, len(preds) + k_margin, order=order,
            solver=lambda op, k: solve_lowest(op, k, tol=tol, seed=seed))
        matched = _match_injective([p.value for p in preds], extrap.values)
        rows = []
        for pred, idx in zip(preds, matched):
            computed = float(extrap.values[idx])
            rows.append(SurfaceRow(
                h=h, j=pred.j, alpha=pred.k, ell=pred.validity["ell"],
                theta=pred.validity["theta"], mu=pred.validity["mu_j"],
                predicted=pred.value, computed=computed,
                error=computed - pred.value,
                budget=float(extrap.budgets[idx])))
        shape = tuple(axis.points for axis in grid.axes)
        return rows, skipped, shape

    results = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {h: pool.submit(solve_one, h) for h in h_list}
            for h in h_list:
                results[h] = futures[h].result()
    else:
        for h in h_list:
            results[h] = solve_one(h)

    rows, skipped, shapes = [], [], {}
    for h in h_list:
        r, s, shape = results[h]
        rows.extend(r)
        skipped.extend(s)
        shapes[h] = shape
    meta = {"eta0": well.eta0, "m": well.m, "skipped": tuple(skipped),
            "grid_shapes": shapes, "seed": int(seed), "delta": delta}
    return SurfaceSweep(rows=tuple(rows), meta=meta)
