"""Numerical toolkit for the uniformly compressing mean curvature flow of
closed loops: original, normalized, relaxed-constraint, and classical
steppers, tension solves, stationary-state analysis, and a verification
layer for the flow's monotone quantities, decay rates, and extinction
bounds."""

from .grid_curve import (
    CircleFit,
    CurveError,
    GridCurve,
    curvature_sq,
    d1,
    d2,
    edge_cv,
    l2_mass,
    length,
    make_curve,
    project_to_circle_manifold,
    resample_to_arclength,
    w0_samples,
)
from .tension import (
    TensionField,
    TensionSolveError,
    greens_bracket,
    lambda_speed,
    solve_normalized_tension,
    solve_original_tension,
    solve_with_potential,
)
from .flow import (
    ExtinctionReached,
    FlowState,
    StepRejected,
    StepReport,
    f_eps,
    g_eps,
    run,
    step_classical,
    step_normalized,
    step_original,
    step_regularized,
)
from .stationary import (
    FirstIntegralRecord,
    check_sigma_sq_curvature,
    first_integral_check,
    is_simple,
    rigidity_probe,
    stationary_residual,
)
from .diagnostics import (
    DecayFit,
    TimeSeries,
    extinction_bounds_check,
    fit_decay,
    oscillation_check,
    record,
    verify_monotone,
)
from .renormalize import RenormMap, normalize_state, roundtrip_compare
from .config import RunConfig, preset

__version__ = "0.1.0"
