"""Rescalings of height functions and fits against the explicit profile family.

Near a free boundary point the height function is examined through two zoom
sequences: Almgren rescalings v(x0+rx, ry)/d_r, normalized to unit weighted
boundary mass on the unit sphere, and homogeneous rescalings v(x0+rx, ry) /
r^{1+s}.  At regular points both converge to a member of the degree-(1+s)
family a (x.e + rho)^s (x.e - s rho), rho = sqrt((x.e)^2 + y^2), which this
module evaluates, fits (amplitude and direction), and classifies against the
frequency trichotomy.  The degree-s angular factor (cos th + 1)^s and the
asymptotic expansion basis from the same family are covered by ode_residual
and fit_appendix_expansion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    BallRegion,
    ExtensionGrid,
    FracParams,
    GridFunction,
    InvalidSpecError,
    ball_quadrature,
)
from .functionals import HeightField, MonotonicityCurve, scaling_d


class InvalidDirectionError(ValueError):
    """A profile direction is not a unit vector."""


class DegenerateNormalizationError(ValueError):
    """The scaling d_r is below the floor; the Almgren rescale is undefined."""


REGULAR_LABEL = "Regular"
DEGENERATE_LABEL = "Degenerate"
UNRESOLVED_LABEL = "Unresolved"


@dataclass
class BlowupProfile:
    """Best fit of a rescaled field by the explicit degree-(1+s) family."""

    amplitude: float
    direction: Optional[np.ndarray]
    residual: float
    degenerate: bool

    def to_record(self, x0=None, label=None) -> dict:
        """JSON-ready record {x0, class, amplitude, direction, residual}."""
        return {
            "x0": None if x0 is None else [float(t) for t in np.atleast_1d(x0)],
            "class": label,
            "amplitude": float(self.amplitude),
            "direction": None if self.direction is None else [float(t) for t in self.direction],
            "residual": float(self.residual),
        }


@dataclass
class ExpansionFit:
    """Least-squares coefficients of the asymptotic expansion basis."""

    coefficients: np.ndarray
    residual: float


# ---------------------------------------------------------------------------
# rescalings


_UNIT_MARGIN = 1.02


def _unit_ball_grid(params: FracParams, q: float, nx: int = 65, ny: int = 33) -> ExtensionGrid:
    """Grid slightly larger than B_1 so ball and sphere quadrature stay inside."""
    ax = np.linspace(-_UNIT_MARGIN, _UNIT_MARGIN, nx)
    k = np.arange(ny, dtype=float)
    yy = _UNIT_MARGIN * (k / (ny - 1)) ** q
    axes = (ax,) * params.n
    return ExtensionGrid(x_axes=axes, y=yy, q=q)


def _resample(hf: HeightField, r: float, scale: float, nx: int, ny: int) -> GridFunction:
    grid = _unit_ball_grid(hf.params, hf.v.grid.q, nx, ny)
    mesh = grid.meshgrid()
    pts = np.stack([m for m in mesh], axis=-1)
    src = np.empty_like(pts)
    for i in range(hf.params.n):
        src[..., i] = hf.x0[i] + r * pts[..., i]
    src[..., -1] = r * pts[..., -1]
    vals = np.asarray(hf.v(src), dtype=float) / scale
    return GridFunction(grid, vals)


def almgren_rescale(
    hf: HeightField, r: float, floor: Optional[float] = None, nx: int = 65, ny: int = 33
) -> GridFunction:
    """Almgren rescaling v(x0 + r x, r y) / d_r on a unit-ball grid.

    The output has weighted boundary mass 1 on the unit sphere up to
    quadrature and interpolation error.  d_r below the floor (default
    1e-14 times the field scale) raises DegenerateNormalizationError.
    """
    d = scaling_d(hf, r)
    if floor is None:
        floor = 1e-14 * max(float(np.max(np.abs(hf.v.values))), 1e-300)
    if not d > floor:
        raise DegenerateNormalizationError(
            f"scaling d_r = {d:.3e} at r = {r} is below the floor {floor:.3e}"
        )
    return _resample(hf, r, d, nx, ny)


def homogeneous_rescale(hf: HeightField, r: float, nx: int = 65, ny: int = 33) -> GridFunction:
    """Homogeneous rescaling v(x0 + r x, r y) / r^{1+s} on a unit-ball grid."""
    return _resample(hf, r, r ** (1.0 + hf.params.s), nx, ny)


# ---------------------------------------------------------------------------
# the explicit profile family


def eval_profile(amplitude: float, direction, point, params: FracParams):
    """Closed-form family member a (x.e + rho)^s (x.e - s rho) at the point(s).

    rho = sqrt((x.e)^2 + y^2); point has layout (..., n+1) with y last.
    """
    e = np.atleast_1d(np.asarray(direction, dtype=float))
    if e.shape != (params.n,):
        raise InvalidDirectionError(f"direction must have {params.n} components")
    if abs(float(np.linalg.norm(e)) - 1.0) > 1e-12:
        raise InvalidDirectionError(f"direction must be a unit vector, |e| = {np.linalg.norm(e)}")
    pts = np.asarray(point, dtype=float)
    xe = np.tensordot(pts[..., : params.n], e, axes=([-1], [0]))
    y = pts[..., -1]
    rho = np.sqrt(xe * xe + y * y)
    s = params.s
    return amplitude * (xe + rho) ** s * (xe - s * rho)


def _sample_on_grid(fn, grid: ExtensionGrid) -> GridFunction:
    mesh = grid.meshgrid()
    pts = np.stack(mesh, axis=-1)
    return GridFunction(grid, np.asarray(fn(pts), dtype=float))


def fit_profile(w: GridFunction, params: FracParams, floor: float = 1e-10) -> BlowupProfile:
    """Best amplitude and direction of the degree-(1+s) family for w on B_1.

    Directions: for n = 1 both orientations are tried; for n = 2 a 256-angle
    grid is refined by golden-section on the residual.  The amplitude for a
    fixed direction is the weighted L2 projection; amplitudes below the floor
    (or nonpositive) flag the profile degenerate with the direction unset.
    Residual is relative weighted L2 over B_1.  The model is sampled on the
    same grid as w before the quadrature, so feeding the fit its own output
    reproduces the parameters to rounding precision.
    """
    region = BallRegion((0.0,) * params.n, 1.0)
    qpts, qwts = ball_quadrature(region, params)
    wq = np.asarray(w(qpts), dtype=float)
    norm2 = float(np.dot(qwts, wq * wq))
    if norm2 <= floor**2:
        return BlowupProfile(amplitude=0.0, direction=None, residual=0.0, degenerate=True)

    def objective(e):
        model = _sample_on_grid(lambda pts: eval_profile(1.0, e, pts, params), w.grid)
        mq = np.asarray(model(qpts), dtype=float)
        mm = float(np.dot(qwts, mq * mq))
        a = float(np.dot(qwts, wq * mq)) / mm
        res2 = max(norm2 - 2.0 * max(a, 0.0) * float(np.dot(qwts, wq * mq))
                   + max(a, 0.0) ** 2 * mm, 0.0)
        return a, np.sqrt(res2 / norm2)

    if params.n == 1:
        cands = [np.array([1.0]), np.array([-1.0])]
        best = min((objective(e) + (e,) for e in cands), key=lambda t: t[1])
        a, res, e = best
    else:
        angles = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
        vals = []
        for t in angles:
            e = np.array([np.cos(t), np.sin(t)])
            vals.append(objective(e)[1])
        j = int(np.argmin(vals))
        lo = angles[j] - 2.0 * np.pi / 256
        hi = angles[j] + 2.0 * np.pi / 256
        gr = 0.5 * (np.sqrt(5.0) - 1.0)
        c, d = hi - gr * (hi - lo), lo + gr * (hi - lo)
        fc = objective(np.array([np.cos(c), np.sin(c)]))[1]
        fd = objective(np.array([np.cos(d), np.sin(d)]))[1]
        for _ in range(40):
            if fc < fd:
                hi, d, fd = d, c, fc
                c = hi - gr * (hi - lo)
                fc = objective(np.array([np.cos(c), np.sin(c)]))[1]
            else:
                lo, c, fc = c, d, fd
                d = lo + gr * (hi - lo)
                fd = objective(np.array([np.cos(d), np.sin(d)]))[1]
        t = 0.5 * (lo + hi)
        e = np.array([np.cos(t), np.sin(t)])
        a, res = objective(e)

    if a <= floor:
        return BlowupProfile(amplitude=0.0, direction=None, residual=res, degenerate=True)
    return BlowupProfile(amplitude=float(a), direction=e, residual=float(res), degenerate=False)


# ---------------------------------------------------------------------------
# classification


def classify_point(curve: MonotonicityCurve, params: FracParams, band: float = 0.15) -> str:
    """Frequency trichotomy from the small-radius end of a monotonicity curve.

    The small-r estimate per exponent is the median frequency over the three
    smallest radii.  Regular needs every estimate within the band around
    n + 3; Degenerate needs every estimate at or above n + a + 4 - band;
    anything else is Unresolved (reported, never forced into a band).
    """
    if len(curve.radii) < 5:
        raise InvalidSpecError("classification needs at least 5 ladder radii")
    order = np.argsort(curve.radii)
    small = order[:3]
    regular_value = params.n + 3.0
    degenerate_value = params.n + params.a + 4.0
    estimates = [float(np.median(curve.phi[p][small])) for p in curve.ps]
    if all(abs(e - regular_value) <= band for e in estimates):
        return REGULAR_LABEL
    if all(e >= degenerate_value - band for e in estimates):
        return DEGENERATE_LABEL
    return UNRESOLVED_LABEL


# ---------------------------------------------------------------------------
# asymptotic expansion at the flat boundary piece


def fit_appendix_expansion(w: GridFunction, params: FracParams, trace_tol: float = 1e-3) -> ExpansionFit:
    """Least squares of w on B_1 against the expansion basis.

    Basis: (x_n + rho)^s (x_n - s rho) and, for n = 2, (x_n + rho)^s x_i for
    the tangential coordinates, rho = sqrt(x_n^2 + y^2) with x_n the last
    spatial coordinate.  w must vanish on {x_n <= 0, y = 0} within
    trace_tol of its own scale.  An ill-conditioned normal system raises a
    rank-deficiency error (LinAlgError).  Basis members are sampled on w's
    grid before the quadrature so synthesized inputs are fixed points.
    """
    n, s = params.n, params.s
    scale = float(np.max(np.abs(w.values)))
    if scale > 0.0:
        neg = np.linspace(-0.9, -0.05, 12)
        if n == 1:
            pts = np.stack([neg, np.zeros_like(neg)], axis=-1)
        else:
            t1, t2 = np.meshgrid(np.linspace(-0.5, 0.5, 5), neg, indexing="ij")
            pts = np.stack([t1, t2, np.zeros_like(t1)], axis=-1)
        if float(np.max(np.abs(w(pts)))) > trace_tol * scale:
            raise InvalidSpecError(
                "field does not vanish on the negative trace axis; "
                "the expansion basis does not apply"
            )

    def basis(pts):
        xn = pts[..., n - 1]
        y = pts[..., -1]
        rho = np.sqrt(xn * xn + y * y)
        cols = [(xn + rho) ** s * (xn - s * rho)]
        for i in range(n - 1):
            cols.append((xn + rho) ** s * pts[..., i])
        return cols

    region = BallRegion((0.0,) * n, 1.0)
    qpts, qwts = ball_quadrature(region, params)
    wq = np.asarray(w(qpts), dtype=float)
    m = n
    cols = []
    for i in range(m):
        gf = _sample_on_grid(lambda pts, i=i: basis(pts)[i], w.grid)
        cols.append(np.asarray(gf(qpts), dtype=float))
    G = np.empty((m, m))
    b = np.empty(m)
    for i in range(m):
        b[i] = float(np.dot(qwts, cols[i] * wq))
        for j in range(i, m):
            G[i, j] = G[j, i] = float(np.dot(qwts, cols[i] * cols[j]))
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(
            f"expansion normal system is rank deficient (cond = {cond:.3e})"
        )
    coef = np.linalg.solve(G, b)
    norm2 = float(np.dot(qwts, wq * wq))
    res2 = max(norm2 - 2.0 * (b @ coef) + coef @ G @ coef, 0.0)
    rel = np.sqrt(res2 / norm2) if norm2 > 0 else 0.0
    return ExpansionFit(coefficients=coef, residual=float(rel))


# ---------------------------------------------------------------------------
# the angular ODE of the degree-s factor


def ode_residual(s: float, theta_nodes) -> float:
    """Max residual of phi = (cos th + 1)^s in its angular equation.

    A degree-lambda L_a-harmonic function r^lambda phi(th) satisfies
    sin th phi'' + a cos th phi' + lambda (lambda + a) sin th phi = 0; the
    factor (cos th + 1)^s is the lambda = s member, so the zeroth-order
    coefficient is s(s + a).  Derivatives are closed-form, so the residual
    is rounding-level.
    """
    th = np.asarray(theta_nodes, dtype=float)
    if th.size == 0 or np.any(th <= 0.0) or np.any(th >= np.pi):
        raise InvalidSpecError("theta nodes must lie strictly inside (0, pi)")
    a = 1.0 - 2.0 * s
    c, sn = np.cos(th), np.sin(th)
    phi = (c + 1.0) ** s
    dphi = -s * sn * (c + 1.0) ** (s - 1.0)
    d2phi = -s * c * (c + 1.0) ** (s - 1.0) + s * (s - 1.0) * sn**2 * (c + 1.0) ** (s - 2.0)
    res = sn * d2phi + a * c * dphi + s * (s + a) * sn * phi
    return float(np.max(np.abs(res)))
