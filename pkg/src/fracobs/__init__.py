"""Obstacle problem for the fractional Laplacian via the weighted extension.

Solves min{(-Delta)^s u, u - phi} = 0 (optionally with drift) through the
degenerate extension problem div(|y|^a grad U) = 0, a = 1 - 2s, and computes
free-boundary diagnostics: Almgren frequency curves, Weiss energies, blowup
profiles, regular-point classification, epiperimetric ratios, and free
boundary graphs.
"""

__version__ = "0.1.0"

from .core import (
    BallRegion,
    ExtensionGrid,
    FracParams,
    GridFunction,
    GridSpec,
    InvalidSpecError,
    OutOfDomainError,
    TraceFunction,
    build_grid,
    sphere_integral,
    weighted_volume_integral,
)
from .fracops import (
    calibrate_dtn,
    dtn_trace,
    frac_laplacian_grid,
    frac_laplacian_point,
    measure_constants,
    poisson_extend,
)
from .solver import (
    DriftReductionResult,
    FarFieldModel,
    ObstacleScenario,
    SolveResult,
    SolverFailureError,
    SolverSettings,
    extend_harmonic,
    kkt_residual,
    reduce_drift,
    solve_linear_fractional,
    solve_obstacle_extension,
)
from .functionals import (
    HeightField,
    MonotonicityCurve,
    compute_F,
    compute_phi,
    fit_almgren_constant,
    fit_weiss_constant,
    height_field,
    monotonicity_curve,
    monotone_slack,
    radius_ladder,
    scaling_d,
    weiss_boundary_W,
)
from .blowup import (
    BlowupProfile,
    almgren_rescale,
    classify_point,
    eval_profile,
    fit_appendix_expansion,
    fit_profile,
    homogeneous_rescale,
    ode_residual,
)
from .epi import (
    EpiReport,
    epiperimetric_report,
    homogeneous_extend,
    minimize_W_constrained,
    probe_batch,
    profile_boundary_trace,
)
from .freeboundary import (
    FreeBoundaryGraph,
    FreeBoundarySet,
    HolderEstimate,
    build_graph,
    classify_boundary_points,
    extract_free_boundary,
    holder_estimate,
)
