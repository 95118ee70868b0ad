"""Model descriptions for fibered potentials f(x)g(y) and their validation.

A model couples a confining longitudinal factor f (smooth, minimum 1 at the
origin, positive-definite Hessian) with a transverse factor g that is
positively homogeneous of degree ``a > 0``.  Validation normalizes f so that
f(0) = 1; the normalization is equivalent to rescaling the semiclassical
parameter, see :meth:`ModelSpec.h_equivalent`.

The dimensionless reparameterization used throughout the package::

    hbar = h^(2/(2+a))

and eigenvalues of the physical operator h^2 D_x^2 + h^2 D_y^2 + f(x) g(y)
are hbar^a times the eigenvalues of the rescaled operator
hbar^2 D_x^2 + D_y^2 + f(x) g(y), cf. :func:`spectral_scaling`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    DegenerateHessian,
    MinimumNotAtOrigin,
    ModelError,
    NonHomogeneous,
    NonPositive,
)
from .expr import Bin, Num, PotentialExpr, derive, evaluate, parse_expr, to_text

# scales used for the sampled homogeneity identity g(c y) = c^a g(y)
HOMOGENEITY_SCALES = (0.5, 2.0, 3.7)
# deterministic sample abscissas (origin excluded)
_HOMOGENEITY_POINTS = (-2.6, -1.29, -0.83, -0.37, 0.37, 0.83, 1.29, 2.6)


def _x_variables(n: int) -> tuple[str, ...]:
    return ("x",) if n == 1 else tuple(f"x{i}" for i in range(1, n + 1))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Validated, normalized model.  Treat instances as immutable."""

    n: int
    m: int
    a: float
    f_expr: PotentialExpr
    g_expr: PotentialExpr
    f_infinity: float
    hess_f0: np.ndarray
    f_text: str
    g_text: str
    f0_raw: float = 1.0
    validation_box: float = 3.0
    validation_samples: int = 7

    def h_equivalent(self, h_raw: float) -> float:
        """Map an h for the *raw* (unnormalized) f to the normalized model.

        Dividing the operator by f(0) shows spectra obey
        sp(H_raw, h) = f(0) * sp(H_normalized, h / sqrt(f(0))).
        """
        return h_raw / np.sqrt(self.f0_raw)

    def key_payload(self) -> dict:
        """Canonical content for cache keys and reports."""
        return {
            "n": self.n,
            "m": self.m,
            "a": self.a,
            "f": self.f_text,
            "g": self.g_text,
            "f_infinity": repr(self.f_infinity),
        }


@dataclass(frozen=True)
class SemiclassicalParams:
    """The pair (h, hbar) with hbar = h^(2/(2+a)); both in (0, 1]."""

    h: float
    hbar: float
    a: float = field(default=2.0)


def hbar_of_h(h: float, a: float) -> SemiclassicalParams:
    if not 0.0 < h <= 1.0:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    if a <= 0:
        raise ValueError(f"degree a must be positive, got {a}")
    return SemiclassicalParams(h=float(h), hbar=float(h) ** (2.0 / (2.0 + a)), a=float(a))


def h_of_hbar(hbar: float, a: float) -> SemiclassicalParams:
    """Inverse map: sweeps are often specified directly in hbar."""
    if not 0.0 < hbar <= 1.0:
        raise ValueError(f"hbar must lie in (0, 1], got {hbar}")
    if a <= 0:
        raise ValueError(f"degree a must be positive, got {a}")
    return SemiclassicalParams(h=float(hbar) ** ((2.0 + a) / 2.0), hbar=float(hbar), a=float(a))


def spectral_scaling(eigenvalues, params: SemiclassicalParams) -> np.ndarray:
    """Physical-operator eigenvalues hbar^a * (rescaled-operator eigenvalues).

    Input must be ascending; the scaling preserves order and multiplicity.
    """
    eigs = np.asarray(eigenvalues, dtype=float)
    if eigs.size > 1 and np.any(np.diff(eigs) < -1e-12 * np.maximum(1.0, np.abs(eigs[:-1]))):
        raise ValueError("eigenvalues must be ascending")
    return params.hbar**params.a * eigs


def hessian_fd(f_expr: PotentialExpr, n: int, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian of f at the origin (test oracle)."""
    hess = np.empty((n, n))
    def fval(vec):
        return evaluate(f_expr, tuple(vec) if n > 1 else vec[0])
    for i in range(n):
        for j in range(n):
            if i == j:
                e = np.zeros(n)
                e[i] = step
                hess[i, i] = (fval(e) - 2.0 * fval(0 * e) + fval(-e)) / step**2
            else:
                ei, ej = np.zeros(n), np.zeros(n)
                ei[i] = step
                ej[j] = step
                hess[i, j] = (
                    fval(ei + ej) - fval(ei - ej) - fval(-ei + ej) + fval(-ei - ej)
                ) / (4.0 * step**2)
    return hess


def _check_homogeneity(g_expr: PotentialExpr, a: float) -> None:
    y = np.array(_HOMOGENEITY_POINTS)
    g0 = evaluate(g_expr, 0.0)
    if abs(g0) > 1e-12:
        raise NonHomogeneous(f"g(0) = {g0!r}, but a degree-{a} homogeneous g must vanish at 0")
    gy = np.asarray(evaluate(g_expr, y))
    for c in HOMOGENEITY_SCALES:
        gcy = np.asarray(evaluate(g_expr, c * y))
        gap = np.abs(gcy - c**a * gy)
        tol = 1e-10 * (1.0 + np.abs(gcy))
        if np.any(gap > tol):
            worst = int(np.argmax(gap - tol))
            raise NonHomogeneous(
                f"g(c*y) != c^a g(y) at c={c}, y={y[worst]}: "
                f"{gcy[worst]!r} vs {c**a * gy[worst]!r}"
            )
    if np.any(gy <= 0):
        raise NonPositive("g must be positive away from 0")


def _lattice(box: float, samples: int, n: int) -> np.ndarray:
    axes = [np.linspace(-box, box, samples)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def validate_model(raw) -> ModelSpec:
    """Validate a raw model description (mapping) or re-validate a ModelSpec.

    Checks, in order: parsability, a > 0, sampled homogeneity and positivity
    of g, positivity of f(0) followed by normalization to f(0) = 1, vanishing
    gradient and sampled strict minimum of f at the origin, positive-definite
    Hessian, and f_infinity > 1.  Idempotent on already-validated input.
    """
    if isinstance(raw, ModelSpec):
        raw = {
            "n": raw.n,
            "a": raw.a,
            "f": raw.f_text,
            "g": raw.g_text,
            "f_infinity": raw.f_infinity,
            "validation_box": raw.validation_box,
            "validation_samples": raw.validation_samples,
        }
    if not isinstance(raw, Mapping):
        raise ModelError(f"expected a mapping or ModelSpec, got {type(raw).__name__}")

    known = {"n", "m", "a", "f", "g", "f_infinity", "validation_box", "validation_samples"}
    unknown = set(raw) - known
    if unknown:
        raise ModelError(f"unknown model fields: {sorted(unknown)}")

    n = int(raw.get("n", 1))
    if n not in (1, 2):
        raise ModelError(f"n must be 1 or 2, got {n}")
    m = int(raw.get("m", 1))
    if m != 1:
        raise ModelError("only one transverse dimension is supported (m = 1)")
    a = float(raw["a"])
    if a <= 0:
        raise ModelError(f"degree a must be positive, got {a}")

    box = float(raw.get("validation_box", 3.0))
    samples = int(raw.get("validation_samples", 7))
    if box <= 0 or samples < 3:
        raise ModelError("validation box must be positive and samples >= 3")

    xvars = _x_variables(n)
    f_expr = parse_expr(str(raw["f"]), xvars)
    g_expr = parse_expr(str(raw["g"]), ("y",))

    _check_homogeneity(g_expr, a)

    origin = (0.0,) * n if n > 1 else 0.0
    f0 = evaluate(f_expr, origin)
    if f0 <= 0:
        raise NonPositive(f"f(0) = {f0} must be positive")
    if abs(f0 - 1.0) > 1e-14:
        f_expr = PotentialExpr(Bin("/", f_expr.root, Num(f0)), f_expr.variables)

    f_infinity = raw.get("f_infinity", np.inf)
    if isinstance(f_infinity, str):
        text = f_infinity.strip().lstrip("+")
        f_infinity = np.inf if text.lower() in ("inf", "infinity") else float(text)
    f_infinity = float(f_infinity) / (f0 if abs(f0 - 1.0) > 1e-14 else 1.0)
    if not f_infinity > 1.0:
        raise MinimumNotAtOrigin(
            f"f at infinity ({f_infinity}) must exceed the normalized minimum f(0) = 1"
        )

    # gradient at the origin
    grads = [derive(f_expr, v) for v in xvars]
    grad0 = np.array([evaluate(d, origin) for d in grads])
    if np.any(np.abs(grad0) > 1e-9):
        raise MinimumNotAtOrigin(f"grad f(0) = {grad0.tolist()} is not zero")

    # sampled strict minimum on the validation lattice
    lattice = _lattice(box, samples, n)
    interior = lattice[np.any(lattice != 0.0, axis=1)]
    fvals = np.array(
        [evaluate(f_expr, tuple(p) if n > 1 else p[0]) for p in interior]
    )
    if np.any(fvals <= 0):
        raise NonPositive("f takes a non-positive sampled value")
    if np.any(fvals < 1.0 - 1e-12):
        worst = interior[int(np.argmin(fvals))]
        raise MinimumNotAtOrigin(
            f"f({worst.tolist()}) = {fvals.min():.6g} lies below f(0) = 1"
        )

    # Hessian at the origin from second symbolic derivatives
    hess = np.empty((n, n))
    for i, vi in enumerate(xvars):
        for j, vj in enumerate(xvars):
            hess[i, j] = evaluate(derive(grads[i], vj), origin)
    if np.max(np.abs(hess - hess.T)) > 1e-8 * max(1.0, np.max(np.abs(hess))):
        raise DegenerateHessian("mixed partials disagree; Hessian not symmetric")
    hess = 0.5 * (hess + hess.T)
    eigs = np.linalg.eigvalsh(hess)
    if np.min(eigs) <= 1e-12 * max(1.0, float(np.max(np.abs(eigs)))):
        raise DegenerateHessian(f"Hessian eigenvalues {eigs.tolist()} are not all positive")

    # advisory boundary check: the box should see f approach its large-x levels
    boundary = lattice[np.max(np.abs(lattice), axis=1) >= box - 1e-12]
    bvals = np.array(
        [evaluate(f_expr, tuple(p) if n > 1 else p[0]) for p in boundary]
    )
    if bvals.min() < 0.9 * min(f_infinity, float(bvals.max())):
        warnings.warn(
            "f dips on the validation-box boundary well below its ceiling; "
            "consider a larger validation box",
            stacklevel=2,
        )

    return ModelSpec(
        n=n,
        m=m,
        a=a,
        f_expr=f_expr,
        g_expr=g_expr,
        f_infinity=f_infinity,
        hess_f0=hess,
        f_text=to_text(f_expr),
        g_text=to_text(g_expr),
        f0_raw=float(f0),
        validation_box=box,
        validation_samples=samples,
    )
