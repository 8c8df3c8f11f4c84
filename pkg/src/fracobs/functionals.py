"""Height functions and the frequency/energy functionals on shrinking spheres.

Given a solved obstacle run and a free boundary point x0, the height function
v(x,y) = u(x,y) - phi(x,y) - (1/2s) (-Lap)^s phi(x0) y^{2s} (both extensions
L_a-harmonic) vanishes at (x0, 0) and turns the obstacle problem into a
thin-obstacle one with trace source h(x) = 2((-Lap)^s phi(x) - (-Lap)^s
phi(x0)).  On that field this module evaluates, along shrinking spheres
around x0: the boundary mass F(r), the scaling d_r, the frequency
Phi^p(r) = r (log max{F, r^{n+a+2(1+p)}})', the energy I(r), and the Weiss
combination W_L(r) = I/r^{n+2} - (1+s) F/r^{n+3}.  All integrals carry the
weight |y|^a over the full sphere or ball (the stored upper half contributes
twice through the |y| reflection).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import (
    BallRegion,
    FracParams,
    GridFunction,
    InvalidSpecError,
    TraceFunction,
    _check_ball_in_grid,
    sphere_integral,
    weighted_volume_integral,
)
from .fracops import dtn_trace, poisson_extend
from .solver import ObstacleScenario, SolveResult, extend_harmonic


class InvalidBasePointError(ValueError):
    """The requested base point does not sit on the detected free boundary."""


class InvalidExponentError(ValueError):
    """A frequency exponent p lies outside the admissible interval (s, 2s - 1/2)."""


# ---------------------------------------------------------------------------
# height field


@dataclass
class HeightField:
    """Height function v about a base point, with its trace source h."""

    v: GridFunction
    h: TraceFunction
    x0: np.ndarray
    params: FracParams

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        self._grad = None

    @property
    def grid(self):
        return self.v.grid

    def gradient(self):
        """Nodal gradient components by second-order differences (lazy).

        Centered in x and in y away from the trace, one-sided at the first
        layer and at the grid edges (np.gradient's nonuniform-axis formula).
        """
        if self._grad is None:
            grid = self.grid
            axes = [np.gradient(self.v.values, ax, axis=i) for i, ax in enumerate(grid.x_axes)]
            axes.append(np.gradient(self.v.values, grid.y, axis=grid.n))
            self._grad = tuple(GridFunction(grid, g) for g in axes)
        return self._grad

    def grad_squared(self, pts: np.ndarray) -> np.ndarray:
        comps = self.gradient()
        out = np.zeros(pts.shape[:-1])
        for g in comps:
            out += np.asarray(g(pts)) ** 2
        return out

    def radial_derivative(self, pts: np.ndarray) -> np.ndarray:
        """grad v . nu with nu the unit radius vector from (x0, 0); y uses |y|."""
        comps = self.gradient()
        rel = pts.copy()
        rel[..., : len(self.x0)] -= self.x0
        rel[..., -1] = np.abs(rel[..., -1])
        rad = np.linalg.norm(rel, axis=-1)
        out = np.zeros(pts.shape[:-1])
        for i, g in enumerate(comps):
            out += np.asarray(g(pts)) * rel[..., i]
        return out / rad


def _contact_edge_mask(mask: np.ndarray) -> np.ndarray:
    """Trace nodes where the contact mask switches within one cell."""
    edge = np.zeros_like(mask)
    if mask.ndim == 1:
        flip = mask[1:] != mask[:-1]
        edge[1:] |= flip
        edge[:-1] |= flip
    else:
        for ax in range(mask.ndim):
            flip = np.diff(mask.astype(int), axis=ax) != 0
            sl_lo = [slice(None)] * mask.ndim
            sl_hi = [slice(None)] * mask.ndim
            sl_lo[ax] = slice(1, None)
            sl_hi[ax] = slice(None, -1)
            edge[tuple(sl_lo)] |= flip
            edge[tuple(sl_hi)] |= flip
    return edge


def height_field(result: SolveResult, scenario: ObstacleScenario, x0) -> HeightField:
    """Build the height function about a detected free boundary point.

    v = v_ext - extension(phi) - (1/2s) [d (-Lap)^s phi](x0) y^{2s} and
    h(x) = 2([d (-Lap)^s phi](x) - [d (-Lap)^s phi](x0)), where d (-Lap)^s phi
    is realized as -dtn_trace(extension(phi)): the fractional Laplacian in the
    extension's own normalization.  Using the raw operator here would leave a
    y^{2s} mode of relative size (d_dtn - 1) uncancelled at x0 and drag the
    small-radius frequency toward n + a + 4s, below its regular value n + 3.

    The obstacle extension is computed with the same finite-volume stencil as
    the solved field (extend_harmonic, trace clamped to phi, Poisson-kernel
    values on the outer ring).  Subtracting two fields produced by the same
    discrete operator cancels their shared near-trace discretization bias;
    a quadrature extension differs from the solved field by a few percent on
    the first layers, which is exactly where the dtn fit and the small-radius
    spheres look.  Outside the grid the obstacle is modeled as the constant
    continuation of its edge values (a raw quadratic obstacle has no Poisson
    extension); h(x0) = 0 exactly by construction.
    """
    params = scenario.params
    grid = result.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    edge = _contact_edge_mask(result.contact_mask)
    if not np.any(edge):
        raise InvalidBasePointError("the contact set has no free boundary on this grid")
    idx = tuple(int(np.argmin(np.abs(ax - x0[i]))) for i, ax in enumerate(grid.x_axes))
    near = [abs(grid.x_axes[i][idx[i]] - x0[i]) for i in range(grid.n)]
    if not edge[idx] or max(near) > 1.5 * grid.x_spacing:
        raise InvalidBasePointError(
            f"base point {tuple(x0)} is not a contact-mask edge node"
        )

    phi = result.phi_trace
    if np.all(phi == 0.0):
        h = TraceFunction(grid.x_axes, np.zeros(phi.shape))
        return HeightField(v=result.v_ext, h=h, x0=x0, params=params)

    if grid.n != 1:
        raise InvalidSpecError("nonzero-obstacle height fields are built on n = 1 grids")
    ax = grid.x_axes[0]
    if not isinstance(scenario.obstacle, TraceFunction) and callable(scenario.obstacle):
        # constant continuation of the edge values keeps the extension finite
        # (a raw quadratic obstacle has no Poisson extension) and matches the
        # truncated obstacle the solve itself saw; clipping keeps it closed
        # form, so the outer ring sees no interpolation kinks.
        lo, hi = float(ax[0]), float(ax[-1])
        phi_src = lambda xx: np.asarray(scenario.obstacle(np.clip(xx, lo, hi)), dtype=float)
    else:
        phi_src = TraceFunction(grid.x_axes, phi)
    phi_far = 0.5 * (phi[0] + phi[-1])
    ring = poisson_extend(phi_src, grid, params, far_field=phi_far)
    pe_phi = extend_harmonic(
        phi, grid, params, boundary=ring.values,
        settings=scenario.settings, initial=ring.values,
    )
    lap_scaled = -dtn_trace(pe_phi, params).values
    lap_x0 = float(np.interp(x0[0], grid.x_axes[0], lap_scaled))
    y_pow = grid.y ** (2.0 * params.s)
    vals = result.v_ext.values - pe_phi.values - (0.5 / params.s) * lap_x0 * y_pow
    h = TraceFunction(grid.x_axes, 2.0 * (lap_scaled - lap_x0))
    return HeightField(v=GridFunction(grid, vals), h=h, x0=x0, params=params)


# ---------------------------------------------------------------------------
# functionals on spheres


def compute_F(hf: HeightField, r: float) -> float:
    """Full-sphere boundary mass F(r) = int_{dB_r(x0,0)} v^2 |y|^a."""
    _check_ball_in_grid(hf.v, hf.x0, r, hf.params.n)
    return sphere_integral(
        lambda pts: np.asarray(hf.v(pts)) ** 2, hf.x0, r, hf.params
    )


def scaling_d(hf: HeightField, r: float, F: Optional[float] = None) -> float:
    """d_r = (F(r) / r^{n+a})^{1/2}."""
    if F is None:
        F = compute_F(hf, r)
    return float(np.sqrt(F / r ** (hf.params.n + hf.params.a)))


def _check_exponent(params: FracParams, p: float):
    lo, hi = params.s, 2.0 * params.s - 0.5
    if not lo < p < hi:
        raise InvalidExponentError(
            f"p must lie in ({lo}, {hi}) for s = {params.s}, got p = {p}"
        )


def _phi_from_triple(Fm, Fp, rm, rp, kappa):
    Mm = max(Fm, rm**kappa)
    Mp = max(Fp, rp**kappa)
    return (np.log(Mp) - np.log(Mm)) / (np.log(rp) - np.log(rm))


def compute_phi(hf: HeightField, r: float, p: float, step: float = 1.1) -> float:
    """Frequency Phi^p(r) = r d/dr log max{F(r), r^{n+a+2(1+p)}}.

    Centered difference in log r with the given step factor; the truncation
    branch is decided by the max at each stencil point.
    """
    _check_exponent(hf.params, p)
    if step <= 1.0:
        raise InvalidSpecError("step factor must exceed 1")
    kappa = hf.params.n + hf.params.a + 2.0 * (1.0 + p)
    rm, rp = r / step, r * step
    Fm, Fp = compute_F(hf, rm), compute_F(hf, rp)
    return float(_phi_from_triple(Fm, Fp, rm, rp, kappa))


def _trace_integral(hf: HeightField, r: float, n_nodes: int = 96) -> float:
    """int_{B'_r(x0)} v(x,0) h(x) by Gauss-Legendre."""
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_nodes)
    if hf.params.n == 1:
        x = hf.x0[0] + r * gl_x
        pts = np.column_stack([x, np.zeros_like(x)])
        vals = np.asarray(hf.v(pts)) * np.asarray(hf.h(x[:, None]))
        return float(r * np.dot(gl_w, vals))
    # n = 2: polar rule over the disc
    n_ang = 64
    theta = (np.arange(n_ang) + 0.5) * (2.0 * np.pi / n_ang)
    rho = 0.5 * r * (gl_x + 1.0)
    wr = 0.5 * r * gl_w * rho
    P, T = np.meshgrid(rho, theta, indexing="ij")
    xx = hf.x0[0] + P * np.cos(T)
    yy = hf.x0[1] + P * np.sin(T)
    pts = np.stack([xx, yy, np.zeros_like(xx)], axis=-1)
    tr = np.stack([xx, yy], axis=-1)
    vals = np.asarray(hf.v(pts)) * np.asarray(hf.h(tr))
    return float((2.0 * np.pi / n_ang) * np.sum(wr[:, None] * vals))


def compute_I(hf: HeightField, r: float, n_radial: int = 48, n_angular: int = 256) -> float:
    """Energy I(r) = int_{B_r} |grad v|^2 |y|^a + int_{B'_r} v h."""
    _check_ball_in_grid(hf.v, hf.x0, r, hf.params.n)
    region = BallRegion(tuple(hf.x0), r)
    grad_term = weighted_volume_integral(
        hf.grad_squared, region, hf.params, n_radial=n_radial, n_angular=n_angular
    )
    return grad_term + _trace_integral(hf, r)


def weiss_WL(hf: HeightField, r: float, I: Optional[float] = None, F: Optional[float] = None) -> float:
    """W_L(r) = I(r)/r^{n+2} - (1+s) F(r)/r^{n+3}."""
    n, s = hf.params.n, hf.params.s
    if I is None:
        I = compute_I(hf, r)
    if F is None:
        F = compute_F(hf, r)
    return float(I / r ** (n + 2) - (1.0 + s) * F / r ** (n + 3))


def weiss_boundary_W(w: GridFunction, params: FracParams, center=None) -> float:
    """Boundary-adjusted energy on the unit ball,
    W(w) = int_{B_1} |grad w|^2 |y|^a - (1+s) int_{dB_1} w^2 |y|^a."""
    if center is None:
        center = np.zeros(params.n)
    hf = HeightField(v=w, h=TraceFunction(w.grid.x_axes, np.zeros(w.values.shape[:-1])),
                     x0=center, params=params)
    grad_term = weighted_volume_integral(
        hf.grad_squared, BallRegion(tuple(hf.x0), 1.0), params
    )
    bdry = sphere_integral(lambda pts: np.asarray(w(pts)) ** 2, hf.x0, 1.0, params)
    return float(grad_term - (1.0 + params.s) * bdry)


# ---------------------------------------------------------------------------
# monotonicity curves


@dataclass
class MonotonicityCurve:
    """Functional stack sampled on a decreasing radii ladder about one point."""

    x0: np.ndarray
    radii: np.ndarray
    F: np.ndarray
    d: np.ndarray
    phi: dict
    I: np.ndarray
    WL: np.ndarray
    ps: tuple
    truncated: dict = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.radii)
        cols = [self.F, self.d, self.I, self.WL] + [self.phi[p] for p in self.ps]
        if any(len(c) != m for c in cols):
            raise InvalidSpecError("curve columns must share the radii length")

    def to_csv(self, path):
        """Serialize with columns x0, r, F, d, phi_p1, phi_p2, I, WL."""
        x0_str = ";".join(f"{c:.12g}" for c in np.atleast_1d(self.x0))
        names = ["x0", "r", "F", "d"] + [f"phi_p{i+1}" for i in range(len(self.ps))] + ["I", "WL"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(names)
            for j in range(len(self.radii)):
                row = [x0_str, f"{self.radii[j]:.12g}", f"{self.F[j]:.12g}", f"{self.d[j]:.12g}"]
                row += [f"{self.phi[p][j]:.12g}" for p in self.ps]
                row += [f"{self.I[j]:.12g}", f"{self.WL[j]:.12g}"]
                wr.writerow(row)


def default_exponents(params: FracParams) -> tuple:
    """Two admissible frequency exponents: the midpoint of (s, 2s - 1/2) and the
    quarter point; both are strictly inside the interval."""
    lo, hi = params.s, 2.0 * params.s - 0.5
    return (lo + 0.5 * (hi - lo), lo + 0.25 * (hi - lo))


def radius_ladder(grid, x0, ratio: float = 1.1, inner_cells: float = 4.0) -> np.ndarray:
    """Decreasing geometric radii from half the distance to the lateral boundary
    down to inner_cells grid spacings."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    (xb, yb) = grid.bounds()
    gap = min(min(x0[i] - xb[i][0], xb[i][1] - x0[i]) for i in range(grid.n))
    r_max = 0.5 * min(gap, yb[1])
    r_min = inner_cells * grid.x_spacing
    if r_max <= r_min:
        raise InvalidSpecError(
            f"no radii between {r_min:.3g} and {r_max:.3g}; refine the grid or move x0"
        )
    m = int(np.floor(np.log(r_max / r_min) / np.log(ratio)))
    return r_max / ratio ** np.arange(m + 1)


def monotonicity_curve(hf: HeightField, radii, ps=None) -> MonotonicityCurve:
    """Assemble F, d, Phi^p, I, W_L on a decreasing radii ladder (no smoothing).

    The frequency at each radius uses its ladder neighbors when the ladder is
    geometric (the centered log-difference), and fresh 1.1-step evaluations
    at the two ends or for irregular ladders.

    The I column is the volume-quadrature value of compute_I.  The W_L column
    is evaluated through the flux identity instead: height fields satisfy the
    weighted extension equation, so I(r) including its trace term equals the
    sphere integral of v (grad v . nu) |y|^a, which is (F'(r) - (n+a)F/r)/2;
    with the same centered log-derivative as the frequency this gives
    W_L = F (Phi_raw - (n+3)) / (2 r^{n+3}) from F samples alone.  The direct
    combination subtracts two near-equal volume terms and its quadrature
    noise (about 1e-2 of the term scale at the inner ladder radii) would
    swamp the decay of W_L toward zero at a regular point; the two routes
    agree within the volume-quadrature tolerance and are cross-checked in
    the test suite.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise InvalidSpecError("radii ladder is empty")
    if np.any(np.diff(radii) >= 0):
        raise InvalidSpecError("radii must be strictly decreasing")
    params = hf.params
    if ps is None:
        ps = default_exponents(params)
    ps = tuple(ps)
    for p in ps:
        _check_exponent(params, p)

    m = len(radii)
    F = np.array([compute_F(hf, r) for r in radii])
    d = np.sqrt(F / radii ** (params.n + params.a))
    I = np.array([compute_I(hf, r) for r in radii])

    # neighbor table for the log-derivative: use ladder neighbors when geometric
    ratios = radii[:-1] / radii[1:]
    geometric = m >= 3 and np.allclose(ratios, ratios[0], rtol=1e-8)
    triples = []
    for j, r in enumerate(radii):
        if geometric and 0 < j < m - 1:
            triples.append((radii[j + 1], radii[j - 1], F[j + 1], F[j - 1]))
        else:
            rm, rp = r / 1.1, r * 1.1
            triples.append((rm, rp, compute_F(hf, rm), compute_F(hf, rp)))

    phi_raw = np.array(
        [np.log(Fp / Fm) / np.log(rp / rm) for (rm, rp, Fm, Fp) in triples]
    )
    WL = F * (phi_raw - (params.n + 3.0)) / (2.0 * radii ** (params.n + 3))

    phi = {}
    truncated = {}
    for p in ps:
        kappa = params.n + params.a + 2.0 * (1.0 + p)
        col = np.empty(m)
        trunc = np.empty(m, dtype=bool)
        for j, r in enumerate(radii):
            rm, rp, Fm, Fp = triples[j]
            col[j] = _phi_from_triple(Fm, Fp, rm, rp, kappa)
            trunc[j] = F[j] < r**kappa
        phi[p] = col
        truncated[p] = trunc
    return MonotonicityCurve(
        x0=hf.x0, radii=radii, F=F, d=d, phi=phi, I=I, WL=WL, ps=ps, truncated=truncated
    )


# ---------------------------------------------------------------------------
# fitted monotonicity adjustments


def fit_adjustment_constant(radii, values, powers) -> float:
    """Smallest C >= 0 making values + C * powers nondecreasing in r."""
    r = np.asarray(radii, dtype=float)
    order = np.argsort(r)
    val = np.asarray(values, dtype=float)[order]
    pw = np.asarray(powers, dtype=float)[order]
    dv, dp = np.diff(val), np.diff(pw)
    if np.any(dp <= 0):
        raise InvalidSpecError("adjustment powers must be strictly increasing in r")
    need = -dv / dp
    return float(max(0.0, np.max(need)))


def fit_weiss_constant(curve: MonotonicityCurve, params: FracParams) -> float:
    """Smallest C >= 0 with W_L(r) + C r^{2s-1} nondecreasing on the ladder."""
    return fit_adjustment_constant(
        curve.radii, curve.WL, curve.radii ** (2.0 * params.s - 1.0)
    )


def fit_almgren_constant(
    curve: MonotonicityCurve, params: FracParams, p: float, gamma: Optional[float] = None
) -> float:
    """Smallest C >= 0 with e^{C r^gamma} Phi^p(r) nondecreasing on the ladder.

    gamma defaults to 2s - p - 1/2, the value 2(alpha + s - p) - 1 at the
    midpoint alpha of its admissible range.
    """
    if gamma is None:
        gamma = 2.0 * params.s - p - 0.5
    vals = curve.phi[p]
    if np.any(vals <= 0):
        raise InvalidSpecError("frequency must be positive to fit the log adjustment")
    return fit_adjustment_constant(curve.radii, np.log(vals), curve.radii**gamma)


def monotone_slack(radii, adjusted) -> float:
    """Largest decrease of adjusted along increasing r (0 for a monotone curve)."""
    order = np.argsort(np.asarray(radii, dtype=float))
    vals = np.asarray(adjusted, dtype=float)[order]
    return float(max(0.0, np.max(-np.diff(vals)) if len(vals) > 1 else 0.0))


def weiss_derivative_gap(hf: HeightField, r: float) -> float:
    """Sphere term (2/r^{n+2}) int_{dB_r} ((1+s) v / r - grad v . nu)^2 |y|^a
    bounding the Weiss derivative from below."""
    params = hf.params

    def integrand(pts):
        v = np.asarray(hf.v(pts))
        dr = hf.radial_derivative(pts)
        return ((1.0 + params.s) * v / r - dr) ** 2

    _check_ball_in_grid(hf.v, hf.x0, r, params.n)
    val = sphere_integral(integrand, hf.x0, r, params)
    return float(2.0 / r ** (params.n + 2) * val)
