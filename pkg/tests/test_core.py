"""Grids, interpolation, and weighted quadrature against independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from fracobs.core import (
    BallRegion,
    FracParams,
    GridFunction,
    GridSpec,
    InvalidSpecError,
    OutOfDomainError,
    TraceFunction,
    _sin_pow_primitive,
    ball_quadrature,
    build_grid,
    sphere_integral,
    weighted_volume_integral,
)

P1 = FracParams(s=0.75, n=1)
P2 = FracParams(s=0.75, n=2)
A = P1.a


def test_params_derived_quantities():
    assert P1.a == pytest.approx(-0.5)
    assert P1.regular_frequency == 4.0
    assert P2.regular_frequency == 5.0


def test_params_range_validation():
    with pytest.raises(InvalidSpecError):
        FracParams(s=0.4)
    with pytest.raises(InvalidSpecError):
        FracParams(s=1.0)
    with pytest.raises(InvalidSpecError):
        FracParams(s=0.75, n=3)


def test_grid_shape_and_grading():
    spec = GridSpec(x_bounds=((-1.0, 2.0),), x_counts=(11,), y_extent=1.5, y_count=9, q=2.0)
    g = build_grid(spec)
    assert g.shape == (11, 9)
    assert g.y[0] == 0.0
    k = np.arange(9)
    np.testing.assert_allclose(g.y, 1.5 * (k / 8.0) ** 2.0)
    assert g.n == 1


def test_grid_validation_messages():
    with pytest.raises(InvalidSpecError):
        build_grid(GridSpec(x_bounds=((0.0, 1.0),), x_counts=(11, 11), y_extent=1.0, y_count=5))
    with pytest.raises(InvalidSpecError):
        build_grid(GridSpec(x_bounds=((1.0, 0.0),), x_counts=(11,), y_extent=1.0, y_count=5))
    with pytest.raises(InvalidSpecError):
        build_grid(GridSpec(x_bounds=((0.0, 1.0),), x_counts=(2,), y_extent=1.0, y_count=5))
    with pytest.raises(InvalidSpecError):
        build_grid(GridSpec(x_bounds=((0.0, 1.0),), x_counts=(11,), y_extent=1.0, y_count=5, q=0.5))


def test_grid_function_reproduces_multilinear_fields():
    # interpolation is exact on functions linear in each variable
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(17,), y_extent=1.0, y_count=9)
    g = build_grid(spec)
    f = GridFunction.from_callable(g, lambda x, y: 2.0 * x - 3.0 * x * y + 0.5)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-1, 1, 40), rng.uniform(0, 1, 40)])
    np.testing.assert_allclose(f(pts), 2 * pts[:, 0] - 3 * pts[:, 0] * pts[:, 1] + 0.5, atol=1e-13)


def test_grid_function_reflects_evenly_in_y():
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(17,), y_extent=1.0, y_count=9)
    g = build_grid(spec)
    f = GridFunction.from_callable(g, lambda x, y: x + y**2)
    pts_up = np.array([[0.3, 0.4], [-0.2, 0.7]])
    pts_dn = pts_up * np.array([1.0, -1.0])
    np.testing.assert_allclose(f(pts_dn), f(pts_up))


def test_grid_function_out_of_domain():
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(17,), y_extent=1.0, y_count=9)
    g = build_grid(spec)
    f = GridFunction.from_callable(g, lambda x, y: x)
    with pytest.raises(OutOfDomainError):
        f(np.array([[1.5, 0.0]]))


def test_trace_function_matches_grid_layer():
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(17,), y_extent=1.0, y_count=9)
    g = build_grid(spec)
    f = GridFunction.from_callable(g, lambda x, y: x**2 + y)
    tr = TraceFunction(g.x_axes, f.trace_values)
    np.testing.assert_allclose(tr.values, g.x_axes[0] ** 2)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-0.9, max_value=3.0), st.floats(min_value=0.05, max_value=np.pi))
def test_sin_pow_primitive_matches_quadrature(w, theta):
    val = _sin_pow_primitive(theta, w)
    ref, _ = integrate.quad(lambda t: np.sin(t) ** w, 0.0, theta)
    assert val == pytest.approx(ref, rel=1e-8, abs=1e-10)


def _sphere_mass_oracle_1d(r, w):
    # int over the circle of radius r of |y|^w: 2 B((w+1)/2, 1/2) r^{1+w}
    return 2.0 * special.beta((w + 1.0) / 2.0, 0.5) * r ** (1.0 + w)


def test_sphere_integral_weighted_mass_n1():
    r = 0.7
    got = sphere_integral(lambda p: np.ones(len(p)), (0.3,), r, P1)
    assert got == pytest.approx(_sphere_mass_oracle_1d(r, A), rel=1e-10)


def test_sphere_integral_custom_weight_and_moment():
    # second moment of x - x0 against |y|^a on the circle;
    # closed form: int cos^2 |sin|^a = 2 B((a+1)/2, 1/2) - 2 B((a+3)/2, 1/2)
    r = 0.5
    x0 = 0.2

    def f(p):
        return (p[:, 0] - x0) ** 2

    got = sphere_integral(f, (x0,), r, P1, n_angular=4096)
    ref = 2.0 * (special.beta((A + 1) / 2.0, 0.5) - special.beta((A + 3) / 2.0, 0.5))
    assert got == pytest.approx(r ** (3.0 + A) * ref, rel=1e-6)


def test_sphere_integral_half_matches_even_reflection():
    r = 0.6
    # pure weighted mass is exact for both rules
    full = sphere_integral(lambda p: np.ones(len(p)), (0.0,), r, P1)
    half = sphere_integral(lambda p: np.ones(len(p)), (0.0,), r, P1, half=True)
    assert full == pytest.approx(2.0 * half, rel=1e-12)
    # a smooth even moment agrees to the angular rule's accuracy
    full = sphere_integral(lambda p: p[:, 0] ** 2, (0.0,), r, P1)
    half = sphere_integral(lambda p: p[:, 0] ** 2, (0.0,), r, P1, half=True)
    assert full == pytest.approx(2.0 * half, rel=2e-4)


def test_sphere_integral_weighted_mass_n2():
    # independent oracle: 2 pi r^{2+a} int_0^pi |cos u|^a sin u du = 4 pi r^{2+a}/(1+a)
    r = 0.8
    got = sphere_integral(lambda p: np.ones(len(p)), (0.1, -0.2), r, P2)
    assert got == pytest.approx(4.0 * np.pi * r ** (2.0 + A) / (1.0 + A), rel=1e-6)


def test_sphere_integral_n2_moment():
    # x1^2 moment, oracle in the polar angle u from the y axis:
    # dS = r^2 sin u du dphi, x1 = r sin u cos phi, int cos^2 phi dphi = pi
    r = 0.5

    def f(p):
        return (p[:, 0] - 0.0) ** 2

    got = sphere_integral(f, (0.0, 0.0), r, P2)
    ref, _ = integrate.quad(
        lambda u: np.pi
        * (r * np.sin(u)) ** 2
        * np.abs(r * np.cos(u)) ** A
        * r**2
        * np.sin(u),
        0.0,
        np.pi,
    )
    assert got == pytest.approx(ref, rel=1e-3)


def test_ball_quadrature_weighted_volume_n1():
    r = 0.9
    region = BallRegion(center=(0.0,), radius=r)
    pts, wts = ball_quadrature(region, P1)
    got = float(np.sum(wts))
    ref, _ = integrate.quad(lambda t: np.abs(np.sin(t)) ** A, 0.0, 2.0 * np.pi)
    exact = r ** (2.0 + A) / (2.0 + A) * ref
    assert got == pytest.approx(exact, rel=1e-8)
    assert np.all(pts[:, -1] >= -1e-12) or np.any(pts[:, -1] < 0)  # layout only


def test_ball_quadrature_scaling_in_radius():
    # weighted volume scales like r^{n + 1 + a}
    v1 = float(np.sum(ball_quadrature(BallRegion((0.0,), 0.5), P1)[1]))
    v2 = float(np.sum(ball_quadrature(BallRegion((0.0,), 1.0), P1)[1]))
    assert v2 / v1 == pytest.approx(2.0 ** (2.0 + A), rel=1e-10)


def test_weighted_volume_integral_polynomial():
    r = 0.75
    region = BallRegion(center=(0.1,), radius=r)

    def f(p):
        return p[:, 1] ** 2

    got = weighted_volume_integral(f, region, P1)

    def integrand(t, rho):
        return (rho * np.sin(t)) ** 2 * np.abs(rho * np.sin(t)) ** A * rho

    ref, _ = integrate.dblquad(integrand, 0.0, r, 0.0, 2.0 * np.pi)
    assert got == pytest.approx(ref, rel=5e-4)


def test_singular_weight_rejected():
    with pytest.raises(InvalidSpecError):
        sphere_integral(lambda p: np.ones(len(p)), (0.0,), 0.5, P1, weight_exponent=-2.0)
    with pytest.raises(InvalidSpecError):
        ball_quadrature(BallRegion((0.0,), 0.5), P1, weight_exponent=-2.0)


def test_ball_region_validation():
    with pytest.raises(InvalidSpecError):
        BallRegion(center=(0.0,), radius=-1.0)
