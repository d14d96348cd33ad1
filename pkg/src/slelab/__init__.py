"""Numerical laboratory for chordal SLE in the upper half-plane."""

__version__ = "0.1.0"

from .core import (
    DegenerateInputError,
    DomainError,
    SleParams,
    c_star,
    exact_hm_halfplane,
    green_covariant,
    green_one_point,
    params_from_kappa,
    phi_value,
    sin_arg,
    two_point_envelope,
)
from .loewner import (
    CurveTrace,
    DrivingPath,
    TrackedPoint,
    distance_to_curve,
    evolve_tracked_point,
    farfield_check,
    refine_driving,
    sample_driving,
    slit_step,
    solve_constant_driving,
    trace_curve,
)
