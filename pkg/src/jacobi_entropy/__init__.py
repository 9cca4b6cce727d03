"""Curvature of the Jacobi metric, geodesic-ball entropy and its conformal perturbations."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateCriticalPointError,
    DimensionError,
    DomainError,
    JacobiError,
    ParseError,
    ResonanceError,
    TurningPointError,
    ValidityError,
)
from .geometry import SystemSpec, curvature, laplace_jacobi, scalar_curvature
from .perturbation import (
    conformal_factor,
    conformal_scalar_shift,
    effective_mass,
    entropy_shift_first_order,
    invariance_condition_residual,
    perturbation_report,
    special_energy,
)
from .potential import PotentialExpr, find_critical_points, parse_potential
from .solver import operator_spectrum, solve_invariance, verify_entropy_invariance
from .volume import (
    BallSpec,
    ball_report,
    ball_volume_expansion,
    ball_volume_numeric,
    entropy,
    unit_ball_volume,
    unit_sphere_area,
)

__version__ = "0.1.0"
