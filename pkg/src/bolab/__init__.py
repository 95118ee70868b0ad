"""Numerical laboratory for semiclassical eigenvalue asymptotics of
Schrodinger operators with fibered degenerate potentials.

The package verifies closed-form eigenvalue predictions for operators of
the form  h^2 D_x^2 + h^2 D_y^2 + f(x) g(y)  (g homogeneous) and for planar
potentials vanishing on a closed curve, against direct sparse eigensolves
with Richardson-extrapolated error budgets.
"""

from .effective import (
    full_lowest,
    ground_coefficient,
    harmonic_levels,
    low_band_levels,
    middle_band_level,
    predict_low,
    predict_middle,
    reduced_lowest,
    reduced_operator,
)
from .eigensolve import (
    cluster_eigenvalues,
    dense_lowest,
    iterative_lowest,
    iterative_nearest,
    richardson_pair,
    solve_lowest,
)
from .expr import parse_expr
from .harness import (
    SolveCache,
    emit,
    fit_slope,
    load_config,
    run_config,
    run_file,
    validate_config,
)
from .hypersurface import (
    ambient_grid,
    build_gamma,
    build_surface_well,
    extract_f,
    find_minima,
    predict_surface,
    surface_gate,
    verify_surface,
)
from .model import (
    ModelSpec,
    SemiclassicalParams,
    h_of_hbar,
    hbar_of_h,
    spectral_scaling,
    validate_model,
)
from .transverse import (
    corrector_solve,
    essential_floor,
    fiber_eigenvalue,
    odd_moment,
    transverse_spectrum,
)

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "SemiclassicalParams",
    "SolveCache",
    "ambient_grid",
    "build_gamma",
    "build_surface_well",
    "cluster_eigenvalues",
    "corrector_solve",
    "dense_lowest",
    "emit",
    "essential_floor",
    "extract_f",
    "fiber_eigenvalue",
    "find_minima",
    "fit_slope",
    "full_lowest",
    "ground_coefficient",
    "h_of_hbar",
    "harmonic_levels",
    "hbar_of_h",
    "iterative_lowest",
    "iterative_nearest",
    "load_config",
    "low_band_levels",
    "middle_band_level",
    "odd_moment",
    "parse_expr",
    "predict_low",
    "predict_middle",
    "predict_surface",
    "reduced_lowest",
    "reduced_operator",
    "richardson_pair",
    "run_config",
    "run_file",
    "solve_lowest",
    "spectral_scaling",
    "surface_gate",
    "transverse_spectrum",
    "validate_config",
    "validate_model",
    "verify_surface",
]
