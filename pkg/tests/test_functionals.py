"""Frequency and energy functionals on exact homogeneous fields and solves."""

import numpy as np
import pytest
from scipy import integrate

from fracobs.core import (
    FracParams,
    GridFunction,
    GridSpec,
    InvalidSpecError,
    TraceFunction,
    build_grid,
)
from fracobs.blowup import eval_profile
from fracobs.functionals import (
    HeightField,
    InvalidBasePointError,
    InvalidExponentError,
    MonotonicityCurve,
    compute_F,
    compute_I,
    compute_phi,
    default_exponents,
    fit_adjustment_constant,
    fit_almgren_constant,
    fit_weiss_constant,
    height_field,
    monotone_slack,
    monotonicity_curve,
    radius_ladder,
    scaling_d,
    weiss_WL,
    weiss_boundary_W,
)

P1 = FracParams(s=0.75, n=1)
S, A = 0.75, -0.5

# boundary mass of the unit-amplitude degree-(1+s) profile on the unit sphere,
# computed by adaptive quadrature of the closed form (re-derived in the test)
F1_PROFILE = 1.9437612854336719


def profile_field(amplitude=1.0, n_x=257, n_y=49):
    spec = GridSpec(x_bounds=((-1.5, 1.5),), x_counts=(n_x,), y_extent=1.0, y_count=n_y)
    g = build_grid(spec)

    def fn(x, y):
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1)
        return eval_profile(amplitude, (1.0,), pts, P1)

    v = GridFunction.from_callable(g, fn)
    h = TraceFunction(g.x_axes, np.zeros(n_x))
    return HeightField(v=v, h=h, x0=np.array([0.0]), params=P1)


@pytest.fixture(scope="module")
def exact_hf():
    return profile_field()


def test_boundary_mass_oracle_value():
    def one_sided(t):
        pt = np.array([np.cos(t), np.sin(t)])
        return eval_profile(1.0, (1.0,), pt, P1) ** 2 * np.sin(t) ** A

    val, err = integrate.quad(one_sided, 0.0, np.pi, limit=200)
    assert 2.0 * val == pytest.approx(F1_PROFILE, rel=1e-9)


def test_F_matches_quadrature_oracle(exact_hf):
    for r in (0.2, 0.4, 0.8):
        ref = F1_PROFILE * r ** (1 + A + 2 * (1 + S))
        assert compute_F(exact_hf, r) == pytest.approx(ref, rel=5e-3)


def test_F_homogeneity(exact_hf):
    ratio = compute_F(exact_hf, 0.8) / compute_F(exact_hf, 0.4)
    assert ratio == pytest.approx(2.0 ** (1 + A + 2 * (1 + S)), rel=2e-3)


def test_scaling_d_power_law(exact_hf):
    for r in (0.2, 0.8):
        ref = np.sqrt(F1_PROFILE) * r ** (1 + S)
        assert scaling_d(exact_hf, r) == pytest.approx(ref, rel=2e-3)


def test_energy_equals_boundary_identity(exact_hf):
    # for the homogeneous solution, I(r) = (1+s) F(r) / r
    for r in (0.4, 0.8):
        F_r = compute_F(exact_hf, r)
        assert compute_I(exact_hf, r) == pytest.approx((1 + S) * F_r / r, rel=5e-3)


def test_weiss_WL_vanishes_on_minimizer(exact_hf):
    for r in (0.2, 0.4, 0.8):
        F_r = compute_F(exact_hf, r)
        I_r = compute_I(exact_hf, r)
        scale = (1 + S) * F_r / r ** (1 + 3)
        assert abs(weiss_WL(exact_hf, r, I=I_r, F=F_r)) <= 2e-2 * scale


def test_frequency_equals_regular_value(exact_hf):
    for p in default_exponents(P1):
        for r in (0.2, 0.4):
            assert compute_phi(exact_hf, r, p) == pytest.approx(P1.regular_frequency, abs=1e-2)


def test_frequency_truncation_floor():
    # far below scale, F loses to the truncation power and Phi reads its slope
    tiny = profile_field(amplitude=1e-8, n_x=129, n_y=33)
    for p in default_exponents(P1):
        expected = 1 + A + 2.0 * (1.0 + p)
        assert compute_phi(tiny, 0.3, p) == pytest.approx(expected, abs=1e-10)


def test_exponent_admissibility(exact_hf):
    for p in (0.6, 0.75, 1.0, 1.2):
        with pytest.raises(InvalidExponentError):
            compute_phi(exact_hf, 0.3, p)
    lo, hi = S, 2 * S - 0.5
    p1, p2 = default_exponents(P1)
    assert lo < p1 < hi and lo < p2 < hi and p1 != p2


def test_radius_ladder_geometry(exact_hf):
    g = exact_hf.grid
    radii = radius_ladder(g, [0.0], ratio=1.2)
    assert np.all(np.diff(radii) < 0)
    np.testing.assert_allclose(radii[:-1] / radii[1:], 1.2, rtol=1e-12)
    assert radii[0] <= 0.5 * 1.0 + 1e-12  # half the y extent limits here
    assert radii[-1] >= 4.0 * g.x_spacing * (1.0 - 1e-12)
    with pytest.raises(InvalidSpecError):
        radius_ladder(g, [1.49], ratio=1.1)


def test_monotone_slack_trivia():
    r = np.array([0.1, 0.2, 0.4])
    assert monotone_slack(r, np.array([1.0, 2.0, 3.0])) == 0.0
    assert monotone_slack(r, np.array([1.0, 0.4, 3.0])) == pytest.approx(0.6)
    # order of the radii must not matter
    assert monotone_slack(r[::-1], np.array([3.0, 0.4, 1.0])) == pytest.approx(0.6)


def test_fit_adjustment_constant_exact():
    r = np.linspace(0.1, 1.0, 12)
    powers = r**0.5
    vals = 1.0 - 0.7 * powers
    assert fit_adjustment_constant(r, vals, powers) == pytest.approx(0.7, rel=1e-12)
    assert fit_adjustment_constant(r, powers, powers) == 0.0
    with pytest.raises(InvalidSpecError):
        fit_adjustment_constant(r, vals, -powers)


def synthetic_curve(radii, phi_vals, wl_vals, ps):
    m = len(radii)
    return MonotonicityCurve(
        x0=np.array([0.0]),
        radii=np.asarray(radii, dtype=float),
        F=np.ones(m),
        d=np.ones(m),
        phi={p: np.asarray(phi_vals[p], dtype=float) for p in ps},
        I=np.ones(m),
        WL=np.asarray(wl_vals, dtype=float),
        ps=tuple(ps),
    )


def test_fit_weiss_constant_recovers_planted_rate():
    r = np.geomspace(0.05, 0.8, 20)
    c = 0.37
    curve = synthetic_curve(r, {0.875: np.full(20, 4.0)}, -c * r ** (2 * S - 1), (0.875,))
    assert fit_weiss_constant(curve, P1) == pytest.approx(c, rel=1e-12)


def test_fit_almgren_constant_recovers_planted_rate():
    r = np.geomspace(0.05, 0.8, 20)
    gamma = 0.25
    c = 0.42
    phi_vals = 4.0 * np.exp(-c * r**gamma)
    curve = synthetic_curve(r, {0.875: phi_vals}, np.zeros(20), (0.875,))
    assert fit_almgren_constant(curve, P1, 0.875, gamma=gamma) == pytest.approx(c, rel=1e-12)
    flat = synthetic_curve(r, {0.875: np.full(20, 4.0)}, np.zeros(20), (0.875,))
    assert fit_almgren_constant(flat, P1, 0.875, gamma=gamma) == 0.0


def test_monotonicity_curve_on_exact_field(exact_hf):
    radii = radius_ladder(exact_hf.grid, [0.0], ratio=1.3)
    curve = monotonicity_curve(exact_hf, radii)
    assert curve.ps == default_exponents(P1)
    assert np.all(np.diff(curve.radii) < 0)
    for p in curve.ps:
        np.testing.assert_allclose(curve.phi[p], P1.regular_frequency, atol=2e-2)
    scale = np.max((1 + S) * curve.F / curve.radii**4)
    assert np.max(np.abs(curve.WL)) <= 2e-2 * scale
    assert fit_weiss_constant(curve, P1) <= 0.05 * scale


def test_curve_csv_round_trip(exact_hf, tmp_path):
    radii = radius_ladder(exact_hf.grid, [0.0], ratio=1.5)
    curve = monotonicity_curve(exact_hf, radii)
    path = tmp_path / "curve.csv"
    curve.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x0,r,F,d,phi_p1,phi_p2,I,WL"
    assert len(lines) == 1 + len(radii)
    first = lines[1].split(",")
    assert float(first[1]) == pytest.approx(radii[0])


def test_weiss_boundary_W_quadratic_scaling(exact_hf):
    w1 = weiss_boundary_W(exact_hf.v, P1)
    doubled = GridFunction(exact_hf.grid, 2.0 * exact_hf.v.values)
    assert weiss_boundary_W(doubled, P1) == pytest.approx(4.0 * w1, rel=1e-12)
    # the minimizer itself carries (numerically) zero adjusted energy
    I1 = compute_I(exact_hf, 1.0)
    assert abs(w1) <= 2e-2 * I1


def test_height_field_zero_obstacle_passthrough(halfline):
    scn, res = halfline
    hf = height_field(res, scn, [0.0])
    assert np.all(hf.h.values == 0.0)
    assert hf.v is res.v_ext


def test_height_field_parabola(parabola):
    scn, res = parabola
    xs = res.grid.x_axes[0]
    edge = np.flatnonzero(res.contact_mask[:-1] != res.contact_mask[1:])
    x0 = xs[edge[-1]]
    hf = height_field(res, scn, [x0])
    # h vanishes at the base point by construction
    assert abs(np.interp(x0, xs, hf.h.values)) <= 1e-12
    # the height trace vanishes on the contact side near the base point
    on_contact = res.contact_mask & (np.abs(xs - x0) < 0.2)
    assert np.max(np.abs(hf.v.values[on_contact, 0])) <= 5e-4
    with pytest.raises(InvalidBasePointError):
        height_field(res, scn, [1.9])


def test_gradient_exact_on_linear_field():
    spec = GridSpec(x_bounds=((-1.0, 1.0),), x_counts=(31,), y_extent=0.6, y_count=9)
    g = build_grid(spec)
    X, Y = g.meshgrid()
    v = GridFunction(g, 1.0 + 2.0 * X - 0.5 * Y)
    hf = HeightField(v=v, h=TraceFunction(g.x_axes, np.zeros(31)), x0=np.array([0.0]), params=P1)
    gx, gy = hf.gradient()
    np.testing.assert_allclose(gx.values, 2.0, atol=1e-12)
    np.testing.assert_allclose(gy.values, -0.5, atol=1e-12)
