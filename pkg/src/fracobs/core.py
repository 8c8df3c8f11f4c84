"""Grids, interpolation, and |y|^a-weighted quadrature on the extension half-space.

Everything downstream works on a tensor grid over (x, y) with x in R^n
(n = 1 or 2) and y >= 0, one node layer exactly at y = 0 (the trace), and
y-nodes graded toward the trace because the weight |y|^a with a in (-1, 0)
concentrates mass there.  Functions are stored nodewise and evaluated off
the nodes by multilinear interpolation; integrals over spheres and balls
carry the weight |y|^a with the weight integrated exactly over angular and
radial cells so that a < 0 never meets a quadrature node at y = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.interpolate import RegularGridInterpolator


class InvalidSpecError(ValueError):
    """A grid or parameter specification violates its contract."""


class OutOfDomainError(ValueError):
    """A requested region or evaluation point leaves the grid."""


@dataclass(frozen=True)
class FracParams:
    """Exponent s in (1/2, 1), derived weight a = 1 - 2s, dimension n in {1, 2}."""

    s: float
    n: int = 1

    def __post_init__(self):
        if not 0.5 < self.s < 1.0:
            raise InvalidSpecError(f"s must lie in (1/2, 1), got s={self.s}")
        if self.n not in (1, 2):
            raise InvalidSpecError(f"n must be 1 or 2, got n={self.n}")

    @property
    def a(self) -> float:
        return 1.0 - 2.0 * self.s

    @property
    def regular_frequency(self) -> float:
        """Frequency value at regular points, n + a + 2(1+s) = n + 3 exactly."""
        return self.n + 3.0


@dataclass(frozen=True)
class GridSpec:
    """Specification for build_grid.

    x_bounds: per spatial axis, (lo, hi).
    x_counts: node count per spatial axis (>= 3).
    y_extent: Y > 0; y-nodes live on [0, Y].
    y_count:  node count on the y axis (>= 3), one node at y = 0.
    q:        y-grading exponent >= 1; y_k = Y * (k/(K-1))^q.
    """

    x_bounds: tuple
    x_counts: tuple
    y_extent: float
    y_count: int
    q: float = 2.0


@dataclass(frozen=True)
class ExtensionGrid:
    """Tensor grid over (x, y) with graded y-nodes and a trace layer at y = 0."""

    x_axes: tuple          # tuple of 1-D strictly increasing coordinate arrays
    y: np.ndarray          # 1-D, y[0] == 0, strictly increasing
    q: float

    @property
    def n(self) -> int:
        return len(self.x_axes)

    @property
    def shape(self) -> tuple:
        return tuple(len(ax) for ax in self.x_axes) + (len(self.y),)

    @property
    def x_spacing(self) -> float:
        """Largest spatial node spacing (the h of error statements)."""
        return max(float(np.max(np.diff(ax))) for ax in self.x_axes)

    def bounds(self):
        """((lo, hi) per spatial axis, (0, Y))."""
        return tuple((float(ax[0]), float(ax[-1])) for ax in self.x_axes), (
            0.0,
            float(self.y[-1]),
        )

    def meshgrid(self):
        return np.meshgrid(*self.x_axes, self.y, indexing="ij")


def build_grid(spec: GridSpec) -> ExtensionGrid:
    """Build the tensor extension grid from a GridSpec; deterministic."""
    if len(spec.x_bounds) != len(spec.x_counts):
        raise InvalidSpecError("x_bounds and x_counts must have equal length")
    if len(spec.x_bounds) not in (1, 2):
        raise InvalidSpecError("spatial dimension must be 1 or 2")
    if spec.q < 1.0:
        raise InvalidSpecError(f"grading exponent q must be >= 1, got q={spec.q}")
    if spec.y_extent <= 0:
        raise InvalidSpecError(f"y_extent must be positive, got {spec.y_extent}")
    if spec.y_count < 3:
        raise InvalidSpecError(f"y_count must be >= 3, got {spec.y_count}")
    axes = []
    for (lo, hi), m in zip(spec.x_bounds, spec.x_counts):
        if m < 3:
            raise InvalidSpecError(f"x node count must be >= 3, got {m}")
        if not hi > lo:
            raise InvalidSpecError(f"x bounds must satisfy lo < hi, got ({lo}, {hi})")
        axes.append(np.linspace(lo, hi, m))
    k = np.arange(spec.y_count, dtype=float)
    yy = spec.y_extent * (k / (spec.y_count - 1)) ** spec.q
    return ExtensionGrid(x_axes=tuple(axes), y=yy, q=spec.q)


class GridFunction:
    """One real value per node of an ExtensionGrid, with multilinear evaluation.

    Evaluation accepts points with any sign of y and uses |y| (all fields of
    interest are even in y), so sphere and ball quadrature can treat the full
    sphere while only the upper half is stored.
    """

    def __init__(self, grid: ExtensionGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise InvalidSpecError(
                f"value shape {values.shape} does not match grid shape {grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidSpecError("GridFunction values must be finite")
        self.grid = grid
        self.values = values
        self._interp = RegularGridInterpolator(
            grid.x_axes + (grid.y,), values, method="linear", bounds_error=True
        )

    @classmethod
    def from_callable(cls, grid: ExtensionGrid, fn) -> "GridFunction":
        mesh = grid.meshgrid()
        return cls(grid, fn(*mesh))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points, shape (..., n+1); y may be negative (|y| used)."""
        pts = np.array(points, dtype=float, copy=True)
        pts[..., -1] = np.abs(pts[..., -1])
        try:
            return self._interp(pts)
        except ValueError as exc:
            raise OutOfDomainError(str(exc)) from None

    @property
    def trace_values(self) -> np.ndarray:
        return self.values[..., 0]


class TraceFunction:
    """Values on the y = 0 slice of an ExtensionGrid, with linear evaluation."""

    def __init__(self, x_axes, values: np.ndarray):
        if isinstance(x_axes, np.ndarray):
            x_axes = (x_axes,)
        self.x_axes = tuple(np.asarray(ax, dtype=float) for ax in x_axes)
        values = np.asarray(values, dtype=float)
        expected = tuple(len(ax) for ax in self.x_axes)
        if values.shape != expected:
            raise InvalidSpecError(
                f"trace value shape {values.shape} does not match axes {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidSpecError("TraceFunction values must be finite")
        self.values = values
        self._interp = RegularGridInterpolator(
            self.x_axes, values, method="linear", bounds_error=True
        )

    @classmethod
    def from_grid(cls, grid: ExtensionGrid, values: np.ndarray) -> "TraceFunction":
        return cls(grid.x_axes, values)

    @classmethod
    def from_callable(cls, x_axes, fn) -> "TraceFunction":
        if isinstance(x_axes, np.ndarray):
            x_axes = (x_axes,)
        mesh = np.meshgrid(*x_axes, indexing="ij")
        return cls(x_axes, fn(*mesh))

    @property
    def n(self) -> int:
        return len(self.x_axes)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.n == 1 and pts.ndim >= 1 and (pts.ndim == 1 or pts.shape[-1] != 1):
            pts = pts[..., None]
        try:
            return self._interp(pts)
        except ValueError as exc:
            raise OutOfDomainError(str(exc)) from None


@dataclass(frozen=True)
class BallRegion:
    """Ball (or upper half-ball) of given radius centered at (center, y=0)."""

    center: tuple
    radius: float
    half: bool = False

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidSpecError(f"radius must be positive, got r={self.radius}")


# ---------------------------------------------------------------------------
# exact angular cell masses for the weight |y|^w


def _sin_pow_primitive(theta, w):
    """T(theta) = integral_0^theta |sin t|^w dt on [0, 2*pi], exact via betainc.

    On [0, pi/2] the substitution u = sin^2 t gives
    T = 0.5 * B(sin^2 theta; (w+1)/2, 1/2); the rest follows by quarter
    symmetry of |sin|.  Needs w > -1.
    """
    theta = np.asarray(theta, dtype=float)
    quarter = 0.5 * special.beta((w + 1.0) / 2.0, 0.5)

    def seg(t):
        # t in [0, pi/2]
        z = np.clip(np.sin(t) ** 2, 0.0, 1.0)
        return 0.5 * special.betainc((w + 1.0) / 2.0, 0.5, z) * special.beta(
            (w + 1.0) / 2.0, 0.5
        )

    t = np.mod(theta, 2.0 * np.pi)
    out = np.empty_like(t)
    m1 = t <= 0.5 * np.pi
    m2 = (t > 0.5 * np.pi) & (t <= np.pi)
    m3 = (t > np.pi) & (t <= 1.5 * np.pi)
    m4 = t > 1.5 * np.pi
    out[m1] = seg(t[m1])
    out[m2] = 2.0 * quarter - seg(np.pi - t[m2])
    out[m3] = 2.0 * quarter + seg(t[m3] - np.pi)
    out[m4] = 4.0 * quarter - seg(2.0 * np.pi - t[m4])
    return out + 4.0 * quarter * np.floor(theta / (2.0 * np.pi))


def _circle_rule(w: float, n_nodes: int, half: bool):
    """Midpoint-offset angles on the (half) circle with exact |sin|^w cell masses."""
    span = np.pi if half else 2.0 * np.pi
    edges = np.linspace(0.0, span, n_nodes + 1)
    nodes = 0.5 * (edges[:-1] + edges[1:])
    prim = _sin_pow_primitive(edges, w)
    masses = np.diff(prim)
    return nodes, masses


def _polar_rule(w: float, n_nodes: int, half: bool):
    """Polar-angle nodes measured from the y-axis with exact |cos|^w sin cell masses.

    For n = 2 the weight integral per cell is elementary:
    integral |cos t|^w sin t dt = -sign(cos t) |cos t|^{w+1} / (w+1).
    """
    span = 0.5 * np.pi if half else np.pi
    if n_nodes % 2:
        n_nodes += 1  # keep the equator t = pi/2 on a cell edge, never a node
    edges = np.linspace(0.0, span, n_nodes + 1)
    nodes = 0.5 * (edges[:-1] + edges[1:])
    c = np.cos(edges)
    prim = -np.sign(c) * np.abs(c) ** (w + 1.0) / (w + 1.0)
    masses = np.diff(prim)
    return nodes, masses


def _sphere_points_weights(n, x0, r, w, n_angular, half):
    """Quadrature points in (x, y) and weights for integral_{sphere_r(x0)} |y|^w dsigma."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if n == 1:
        theta, masses = _circle_rule(w, n_angular, half)
        pts = np.column_stack([x0[0] + r * np.cos(theta), r * np.sin(theta)])
        wts = r ** (1.0 + w) * masses
        return pts, wts
    # n == 2: product rule, polar angle from the y-axis is the singular direction
    n_theta = max(8, n_angular // 4)
    n_phi = max(8, n_angular // 4)
    theta, tmass = _polar_rule(w, n_theta, half)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    pts = np.column_stack(
        [
            x0[0] + r * np.sin(th).ravel() * np.cos(ph).ravel(),
            x0[1] + r * np.sin(th).ravel() * np.sin(ph).ravel(),
            r * np.cos(th).ravel(),
        ]
    )
    wts = np.repeat(r ** (2.0 + w) * tmass * (2.0 * np.pi / n_phi), n_phi)
    return pts, wts


def sphere_integral(
    f,
    x0,
    r: float,
    params: FracParams,
    weight_exponent: float | None = None,
    n_angular: int = 256,
    half: bool = False,
) -> float:
    """integral over the sphere of radius r about (x0, 0) of f |y|^w.

    w defaults to params.a.  f is a GridFunction (or any callable on point
    arrays of shape (m, n+1)); angular nodes sit half a step off the trace
    directions so |y|^w is never evaluated at y = 0, and the weight itself
    is integrated exactly over each angular cell.
    """
    if r <= 0:
        raise InvalidSpecError(f"radius must be positive, got r={r}")
    w = params.a if weight_exponent is None else weight_exponent
    if w <= -1.0:
        raise InvalidSpecError(f"weight exponent too singular for a sphere rule: w = {w}")
    _check_ball_in_grid(f, x0, r, params.n)
    pts, wts = _sphere_points_weights(params.n, x0, r, w, n_angular, half)
    vals = np.asarray(f(pts), dtype=float)
    return float(np.dot(wts, vals))


def _check_ball_in_grid(f, x0, r, n):
    grid = getattr(f, "grid", None)
    if grid is None:
        return
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    (xb, yb) = grid.bounds()
    for i in range(n):
        if x0[i] - r < xb[i][0] - 1e-12 or x0[i] + r > xb[i][1] + 1e-12:
            raise OutOfDomainError(
                f"ball of radius {r} at {tuple(x0)} exceeds spatial bounds {xb}"
            )
    if r > yb[1] + 1e-12:
        raise OutOfDomainError(f"ball of radius {r} exceeds y-extent {yb[1]}")


def ball_quadrature(
    region: BallRegion,
    params: FracParams,
    weight_exponent: float | None = None,
    n_radial: int = 48,
    n_angular: int = 256,
):
    """Nodes and weights with integral of f |y|^w over the region ~ wts . f(pts).

    Radial-shell rule: the shell integrand rho -> sphere_integral(f, rho) scales
    like rho^{n+w} times a smooth factor, so the substitution
    u = rho^{n+w+1}/(n+w+1) absorbs the weight exactly and Gauss-Legendre in u
    handles the smooth remainder.  No quadrature node ever sits at y = 0.
    """
    w = params.a if weight_exponent is None else weight_exponent
    kappa = params.n + w + 1.0
    if kappa <= 0:
        raise InvalidSpecError(f"weight exponent too singular: n + w + 1 = {kappa}")
    r = region.radius
    gl_u, gl_w = np.polynomial.legendre.leggauss(n_radial)
    U = r**kappa / kappa
    u = 0.5 * U * (gl_u + 1.0)
    du = 0.5 * U * gl_w
    rho = (kappa * u) ** (1.0 / kappa)
    all_pts, all_wts = [], []
    for rho_i, du_i in zip(rho, du):
        pts, wts = _sphere_points_weights(
            params.n, region.center, rho_i, w, n_angular, region.half
        )
        all_pts.append(pts)
        all_wts.append(wts * (du_i / rho_i ** (params.n + w)))
    return np.concatenate(all_pts, axis=0), np.concatenate(all_wts)


def weighted_volume_integral(
    f,
    region: BallRegion,
    params: FracParams,
    weight_exponent: float | None = None,
    n_radial: int = 48,
    n_angular: int = 256,
) -> float:
    """integral over a ball (or half-ball) region of f |y|^w, w = params.a by default."""
    _check_ball_in_grid(f, region.center, region.radius, params.n)
    pts, wts = ball_quadrature(region, params, weight_exponent, n_radial, n_angular)
    return float(np.dot(wts, np.asarray(f(pts), dtype=float)))
