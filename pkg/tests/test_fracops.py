"""Fractional operators: kernels, extensions, and the DtN calibration."""

import numpy as np
import pytest
from scipy import integrate, special

from fracobs.core import FracParams, GridSpec, TraceFunction, build_grid
from fracobs.blowup import eval_profile
from fracobs.fracops import (
    C_ns_poisson,
    CalibrationFailedError,
    MissingFarFieldError,
    c_ns,
    calibrate_dtn,
    dtn_trace,
    frac_laplacian_grid,
    frac_laplacian_point,
    measure_constants,
    poisson_extend,
    poisson_kernel,
)

P1 = FracParams(s=0.75, n=1)
S = 0.75


def test_normalization_closed_forms():
    # c_ns = 4^s Gamma(n/2 + s) / (pi^{n/2} |Gamma(-s)|)
    got = c_ns(P1)
    ref = 4.0**S * special.gamma(0.5 + S) / (np.sqrt(np.pi) * abs(special.gamma(-S)))
    assert got == pytest.approx(ref, rel=1e-14)
    p2 = FracParams(s=0.6, n=2)
    got2 = C_ns_poisson(p2)
    ref2 = special.gamma((2 + 1.2) / 2.0) / (np.pi * special.gamma(0.6))
    assert got2 == pytest.approx(ref2, rel=1e-14)


def test_poisson_kernel_unit_mass():
    for y in (0.05, 0.3, 1.0):
        mass, err = integrate.quad(
            lambda x: poisson_kernel(x, y, P1), -np.inf, np.inf, limit=200
        )
        assert mass == pytest.approx(1.0, abs=1e-6)


def test_poisson_extend_matches_kernel_quadrature():
    # independent route: brute-force quad of the closed-form kernel
    spec = GridSpec(x_bounds=((-6.0, 6.0),), x_counts=(121,), y_extent=1.0, y_count=17)
    g = build_grid(spec)
    f = lambda x: np.exp(-np.asarray(x) ** 2)
    v = poisson_extend(f, g, P1, far_field=0.0, n_angular=512)
    xs, ys = g.x_axes[0], g.y
    for i, k in [(60, 4), (60, 16), (70, 8), (45, 12)]:
        ref, _ = integrate.quad(
            lambda t: poisson_kernel(xs[i] - t, ys[k], P1) * np.exp(-t * t),
            -np.inf,
            np.inf,
            limit=300,
        )
        assert v.values[i, k] == pytest.approx(ref, rel=1e-5)


def test_poisson_extend_cosine_bessel_closed_form():
    # extension of cos(xi x) is cos(xi x) * 2^{1-s}/Gamma(s) (xi y)^s K_s(xi y)
    spec = GridSpec(x_bounds=((-10.0, 10.0),), x_counts=(201,), y_extent=1.0, y_count=17)
    g = build_grid(spec)
    phi = lambda t: 2.0 ** (1 - S) / special.gamma(S) * t**S * special.kv(S, t)
    for xi in (1.0, 2.0):
        v = poisson_extend(
            lambda x, xi=xi: np.cos(xi * np.asarray(x)), g, P1, far_field=0.0, n_angular=512
        )
        for i, k in [(100, 6), (100, 12), (95, 16)]:
            ref = np.cos(xi * g.x_axes[0][i]) * phi(xi * g.y[k])
            # absolute slack covers the |x| = 10 window truncation
            assert abs(v.values[i, k] - ref) <= 5e-3


def test_poisson_extend_trace_layer_is_f():
    spec = GridSpec(x_bounds=((-2.0, 2.0),), x_counts=(41,), y_extent=1.0, y_count=9)
    g = build_grid(spec)
    f = lambda x: np.exp(-np.asarray(x) ** 2)
    v = poisson_extend(f, g, P1)
    np.testing.assert_allclose(v.trace_values, f(g.x_axes[0]), atol=1e-12)


def test_poisson_extend_trace_function_input():
    spec = GridSpec(x_bounds=((-2.0, 2.0),), x_counts=(81,), y_extent=0.5, y_count=9)
    g = build_grid(spec)
    tr = TraceFunction((g.x_axes[0],), np.exp(-g.x_axes[0] ** 2))
    v = poisson_extend(tr, g, P1, far_field=0.0)
    v2 = poisson_extend(lambda x: np.exp(-np.asarray(x) ** 2), g, P1, far_field=0.0)
    # routes agree to the linear-interpolation accuracy of the sampled trace
    mid = np.abs(g.x_axes[0]) < 1.0
    np.testing.assert_allclose(v.values[mid, 2], v2.values[mid, 2], atol=1e-3)


def test_symbol_on_cosines():
    for xi in (0.5, 1.0, 2.0):
        val = frac_laplacian_point(lambda x, xi=xi: np.cos(xi * np.asarray(x)), 0.0, P1)
        assert val == pytest.approx(xi ** (2.0 * S), rel=2e-2)


def test_frac_laplacian_point_trace_requires_far_field():
    xs = np.linspace(-1, 1, 41)
    tr = TraceFunction((xs,), xs**2)
    with pytest.raises(MissingFarFieldError):
        frac_laplacian_point(tr, 0.0, P1)


def test_gaussian_closed_form():
    # (-Lap)^s e^{-|x|^2} = 4^s Gamma(n/2+s)/Gamma(n/2) 1F1(n/2+s; n/2; -|x|^2)
    import mpmath

    for params, pt in ((P1, 0.0), (P1, 0.7), (FracParams(s=0.75, n=2), (0.3, -0.4))):
        r2 = np.sum(np.square(np.atleast_1d(pt)))
        half_n = 0.5 * params.n
        ref = float(
            4.0**S
            * mpmath.gamma(half_n + S)
            / mpmath.gamma(half_n)
            * mpmath.hyp1f1(half_n + S, half_n, -r2)
        )
        if params.n == 1:
            got = frac_laplacian_point(lambda x: np.exp(-np.asarray(x) ** 2), pt, params)
        else:
            # in two dimensions the callable receives a point vector
            got = frac_laplacian_point(
                lambda p: np.exp(-np.dot(p, p)), np.asarray(pt, dtype=float), params
            )
        assert got == pytest.approx(ref, rel=1e-6)


def test_dtn_trace_vanishes_on_detached_side():
    spec = GridSpec(x_bounds=((-3.0, 3.0),), x_counts=(241,), y_extent=1.0, y_count=33)
    g = build_grid(spec)

    def closed(x, y):
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1)
        return eval_profile(1.0, (1.0,), pts, P1)

    from fracobs.core import GridFunction

    v = GridFunction.from_callable(g, closed)
    dtn = dtn_trace(v, P1)
    xs = g.x_axes[0]
    inner = (xs > 0.5) & (xs < 2.0)
    scale = np.max(np.abs(dtn.values))
    assert np.max(np.abs(dtn.values[inner])) <= 2e-2 * scale


def test_calibration_is_deterministic_and_near_theory():
    spec = GridSpec(x_bounds=((-5.0, 5.0),), x_counts=(257,), y_extent=1.0, y_count=17)
    g = build_grid(spec)
    d1 = calibrate_dtn(P1, g)
    d2 = calibrate_dtn(P1, g)
    assert d1 == d2
    # closed form 2^{1-2s} Gamma(1-s)/Gamma(s)
    theory = 2.0 ** (1.0 - 2.0 * S) * special.gamma(1.0 - S) / special.gamma(S)
    assert d1 == pytest.approx(theory, rel=2e-2)
    mc = measure_constants(P1, g)
    assert mc.d_dtn == d1
    assert mc.c_ns == c_ns(P1)


def test_calibration_needs_one_dimension():
    spec = GridSpec(
        x_bounds=((-1.0, 1.0), (-1.0, 1.0)), x_counts=(9, 9), y_extent=0.5, y_count=5
    )
    g = build_grid(spec)
    from fracobs.core import InvalidSpecError

    with pytest.raises(InvalidSpecError):
        calibrate_dtn(FracParams(s=0.75, n=2), g)


def test_grid_laplacian_matches_point_rule():
    xs = np.linspace(-4.0, 4.0, 161)
    f = lambda x: np.exp(-np.asarray(x) ** 2)
    tr = TraceFunction((xs,), f(xs))
    on_grid = frac_laplacian_grid(tr, P1, far_field=0.0)
    k = 80  # x = 0
    pointwise = frac_laplacian_point(f, 0.0, P1, far_field=0.0)
    assert on_grid.values[k] == pytest.approx(pointwise, rel=2e-2)
