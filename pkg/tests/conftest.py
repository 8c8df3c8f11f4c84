"""Shared scenarios for the test suite.

The expensive solves are session-scoped: the half-line benchmark (exact
profile data, free boundary at 0), the parabola obstacle at two resolutions,
the two-mode exact zero-obstacle benchmark, the n=2 circular benchmark at
two resolutions, and the constant-drift reduction.
"""

import numpy as np
import pytest

from fracobs.core import FracParams, GridSpec, TraceFunction, build_grid
from fracobs.blowup import eval_profile
from fracobs.solver import (
    FarFieldModel,
    ObstacleScenario,
    SolverSettings,
    reduce_drift,
    solve_obstacle_extension,
)

S = 0.75
P1 = FracParams(s=S, n=1)
P2 = FracParams(s=S, n=2)


def profile_far_field(params, amplitude=1.0, direction=None):
    if direction is None:
        direction = (1.0,) if params.n == 1 else (1.0, 0.0)

    def fn(*axes):
        pts = np.stack(np.broadcast_arrays(*axes), axis=-1)
        return eval_profile(amplitude, direction, pts, params)

    return FarFieldModel(kind="closed_form", fn=fn)


def zero_obstacle(grid):
    return TraceFunction(grid.x_axes, np.zeros(grid.shape[:-1]))


def higher_mode(x, y):
    """Degree-(3+s) member of the same explicit family, vanishing on {x<=0, y=0}."""
    rho = np.sqrt(x**2 + y**2)
    return (x + rho) ** S * (
        x**3 - 0.75 * x**2 * rho - 0.375 * x * rho**2 + (11.0 / 64.0) * rho**3
    )


def halfline_scenario(n_x=193, n_y=33):
    spec = GridSpec(x_bounds=((-1.5, 1.5),), x_counts=(n_x,), y_extent=1.0, y_count=n_y)
    grid = build_grid(spec)
    return ObstacleScenario(
        obstacle=zero_obstacle(grid),
        params=P1,
        grid_spec=spec,
        far_field=profile_far_field(P1),
        settings=SolverSettings(omega=1.8, tolerance=1e-9),
    )


@pytest.fixture(scope="session")
def halfline():
    scn = halfline_scenario()
    res = solve_obstacle_extension(scn)
    assert res.converged
    return scn, res


def parabola_scenario(n_x):
    spec = GridSpec(x_bounds=((-2.0, 2.0),), x_counts=(n_x,), y_extent=1.2, y_count=33)
    return ObstacleScenario(
        obstacle=lambda x: 0.3 - x**2,
        params=P1,
        grid_spec=spec,
        far_field=FarFieldModel(kind="zero"),
        settings=SolverSettings(omega=1.8, tolerance=1e-8),
    )


@pytest.fixture(scope="session")
def parabola():
    scn = parabola_scenario(257)
    res = solve_obstacle_extension(scn)
    assert res.converged
    return scn, res


@pytest.fixture(scope="session")
def parabola_fine():
    scn = parabola_scenario(385)
    res = solve_obstacle_extension(scn)
    assert res.converged
    return scn, res


@pytest.fixture(scope="session")
def two_mode():
    """Exact zero-obstacle solution vhat0 + 3 H_{3+s}; regular point at 0."""
    mu = 3.0
    spec = GridSpec(x_bounds=((-1.5, 1.5),), x_counts=(257,), y_extent=1.5, y_count=65)
    grid = build_grid(spec)

    def far(x, y):
        x, y = np.broadcast_arrays(x, y)
        pts = np.stack([x, y], axis=-1)
        return eval_profile(1.0, (1.0,), pts, P1) + mu * higher_mode(x, y)

    scn = ObstacleScenario(
        obstacle=zero_obstacle(grid),
        params=P1,
        grid_spec=spec,
        far_field=FarFieldModel(kind="closed_form", fn=far),
        settings=SolverSettings(omega=1.5, tolerance=1e-9),
    )
    res = solve_obstacle_extension(scn)
    assert res.converged
    return scn, res, mu


RC = 0.5


def circle_scenario(n_x, n_y):
    spec = GridSpec(
        x_bounds=((-1.2, 1.2), (-1.2, 1.2)), x_counts=(n_x, n_x), y_extent=0.9, y_count=n_y
    )
    p1 = FracParams(s=S, n=1)

    def far(x1, x2, y):
        x1, x2, y = np.broadcast_arrays(x1, x2, y)
        pts = np.stack([np.hypot(x1, x2) - RC, y], axis=-1)
        return eval_profile(1.0, (1.0,), pts, p1)

    grid = build_grid(spec)
    return ObstacleScenario(
        obstacle=zero_obstacle(grid),
        params=P2,
        grid_spec=spec,
        far_field=FarFieldModel(kind="closed_form", fn=far),
        settings=SolverSettings(omega=1.9, tolerance=1e-8, max_sweeps=60000),
    )


@pytest.fixture(scope="session")
def circle_coarse():
    scn = circle_scenario(65, 25)
    res = solve_obstacle_extension(scn)
    assert res.converged
    return scn, res


@pytest.fixture(scope="session")
def circle_fine():
    scn = circle_scenario(97, 33)
    res = solve_obstacle_extension(scn)
    assert res.converged
    return scn, res


@pytest.fixture(scope="session")
def drift_reduction():
    scn = ObstacleScenario(
        obstacle=lambda x: 0.3 - x**2,
        params=P1,
        grid_spec=GridSpec(x_bounds=((-2.0, 2.0),), x_counts=(257,), y_extent=1.2, y_count=33),
        far_field=FarFieldModel(kind="zero"),
        drift=0.1,
        settings=SolverSettings(omega=1.8, tolerance=1e-8),
    )
    return scn, reduce_drift(scn)
