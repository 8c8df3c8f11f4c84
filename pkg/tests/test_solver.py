"""Projected SOR on the weighted extension, the linear solve, and drift reduction."""

import numpy as np
import pytest

from fracobs.core import FracParams, GridSpec, InvalidSpecError, TraceFunction, build_grid
from fracobs.blowup import eval_profile
from fracobs.fracops import frac_laplacian_grid
from fracobs.solver import (
    FarFieldModel,
    ObstacleScenario,
    SolverFailureError,
    SolverSettings,
    extend_harmonic,
    kkt_residual,
    solve_linear_fractional,
    solve_obstacle_extension,
)

P1 = FracParams(s=0.75, n=1)
S = 0.75


def test_extend_harmonic_exact_on_linear_data():
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(41,), y_extent=0.8, y_count=13)
    g = build_grid(spec)
    X, Y = g.meshgrid()
    lin = 0.3 + 1.7 * X
    v = extend_harmonic(
        lin[:, 0], g, P1, boundary=lin, settings=SolverSettings(tolerance=1e-12, omega=1.7)
    )
    assert np.max(np.abs(v.values - lin)) <= 1e-10


def test_extend_harmonic_recovers_homogeneous_solution():
    spec = GridSpec(x_bounds=((-1.5, 1.5),), x_counts=(129,), y_extent=1.0, y_count=25)
    g = build_grid(spec)
    X, Y = g.meshgrid()
    pts = np.stack(np.broadcast_arrays(X, Y), axis=-1)
    exact = eval_profile(1.0, (1.0,), pts, P1)
    v = extend_harmonic(
        exact[:, 0], g, P1, boundary=exact, settings=SolverSettings(tolerance=1e-10, omega=1.8)
    )
    rel = np.max(np.abs(v.values - exact)) / np.max(np.abs(exact))
    assert rel <= 5e-4


def test_extend_harmonic_raises_on_sweep_exhaustion():
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(81,), y_extent=0.8, y_count=17)
    g = build_grid(spec)
    X, Y = g.meshgrid()
    data = np.exp(-(X**2))
    with pytest.raises(SolverFailureError):
        extend_harmonic(
            data[:, 0],
            g,
            P1,
            boundary=data,
            settings=SolverSettings(tolerance=1e-13, max_sweeps=3),
        )


def test_halfline_solution_matches_closed_form(halfline):
    scn, res = halfline
    g = res.grid
    xs = g.x_axes[0]
    exact_trace = 2.0**S * (1.0 - S) * np.clip(xs, 0.0, None) ** (1.0 + S)
    scale = np.max(exact_trace)
    assert np.max(np.abs(res.u_trace.values - exact_trace)) <= 2e-3 * scale
    # contact exactly where the far-field profile trace sits on the obstacle
    h = xs[1] - xs[0]
    flagged = xs[res.contact_mask]
    assert np.max(flagged) <= h * 1.5
    assert np.min(xs[~res.contact_mask]) >= -h * 0.5
    assert res.converged
    assert res.residual <= scn.settings.tolerance
    assert res.sweeps >= 1


def test_kkt_residual_within_declared_accuracy(halfline):
    scn, res = halfline
    assert kkt_residual(res, scn) <= scn.settings.kkt_tolerance


def test_solution_dominates_obstacle(parabola):
    scn, res = parabola
    g = res.grid
    phi = scn.obstacle(g.x_axes[0])
    assert np.all(res.u_trace.values >= phi - 10 * scn.settings.tolerance)
    assert np.any(res.contact_mask)
    gap = np.abs(res.u_trace.values - phi)
    assert np.max(gap[res.contact_mask]) <= 1e-6


def test_linear_fractional_inverts_grid_operator():
    xs = np.linspace(-8.0, 8.0, 321)
    f_vals = np.exp(-(xs**2))
    tr = TraceFunction((xs,), f_vals)
    rhs = frac_laplacian_grid(tr, P1, 0.0)
    back = solve_linear_fractional(rhs, P1)
    assert np.max(np.abs(back.values - f_vals)) <= 1e-10


def test_settings_validation():
    for omega in (0.0, 2.0, -1.0):
        with pytest.raises(InvalidSpecError):
            SolverSettings(omega=omega)
    with pytest.raises(InvalidSpecError):
        SolverSettings(tolerance=0.0)
    with pytest.raises(InvalidSpecError):
        SolverSettings(max_sweeps=0)


def test_far_field_validation():
    with pytest.raises(InvalidSpecError):
        FarFieldModel(kind="windy")
    with pytest.raises(InvalidSpecError):
        FarFieldModel(kind="closed_form")
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(5,), y_extent=0.5, y_count=3)
    g = build_grid(spec)
    assert np.all(FarFieldModel(kind="zero").boundary_values(g) == 0.0)
    assert np.all(FarFieldModel(kind="constant", value=2.5).boundary_values(g) == 2.5)


def test_unconverged_solve_is_flagged():
    scn = ObstacleScenario(
        obstacle=lambda x: 0.3 - x**2,
        params=P1,
        grid_spec=GridSpec(x_bounds=((-2.0, 2.0),), x_counts=(129,), y_extent=1.2, y_count=17),
        far_field=FarFieldModel(kind="zero"),
        settings=SolverSettings(omega=1.8, tolerance=1e-10, max_sweeps=5),
    )
    res = solve_obstacle_extension(scn)
    assert not res.converged
    assert res.residual > 1e-10


def test_reduce_drift_basics(drift_reduction):
    scn, red = drift_reduction
    assert red.converged
    assert len(red.history) <= 30
    assert red.history[-1] <= 1e-6
    # solution decomposition: u_hat = reduced solution + corrector
    np.testing.assert_allclose(
        red.u_hat.values, red.result.u_trace.values + red.w.values, atol=1e-12
    )
    assert red.result.converged
    # corrector history contracts
    assert red.history[-1] < red.history[0]


def test_warm_start_agrees_with_cold_start(parabola):
    scn, res = parabola
    res2 = solve_obstacle_extension(scn, initial=res.v_ext.values)
    assert res2.converged
    assert res2.sweeps <= res.sweeps
    assert np.max(np.abs(res2.u_trace.values - res.u_trace.values)) <= 1e-6
