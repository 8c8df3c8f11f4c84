"""Finite-volume form of L_a, the extension-form obstacle solver, and drift reduction.

The operator div(|y|^a grad v) is discretized conservatively on the tensor
grid: the flux across an x-face carries the exact cell mass of |y|^a over the
cell's y-extent (so the trace cell, which starts at y = 0, gets a finite
weight), and the flux across a y-face carries the face-midpoint weight
|y_face|^a.  The obstacle problem is posed as a complementarity system on the
trace layer (v >= phi, outgoing weighted flux <= 0, product zero) and solved
by projected SOR with a red-black sweep order, which is deterministic and
vectorizes.  Drift problems are reduced to drift-free ones by the corrector
fixed point: w solves the linear fractional equation with the drift terms of
the current iterate as right-hand side, and the obstacle is lowered by w.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .core import (
    ExtensionGrid,
    FracParams,
    GridFunction,
    GridSpec,
    InvalidSpecError,
    TraceFunction,
    build_grid,
)
from .fracops import _fraclap_grid_weights, c_ns, calibrate_dtn, dtn_trace


class SolverFailureError(RuntimeError):
    """A linear solve could not be completed (singular or ill-posed system)."""


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True)
class FarFieldModel:
    """Dirichlet data for the lateral and top boundary of the extension box.

    kind is one of "zero", "constant", "closed_form"; a closed form is a
    vectorized callable fn(x..., y) on the extension variables.
    """

    kind: str = "zero"
    value: float = 0.0
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "closed_form"):
            raise InvalidSpecError(f"unknown far-field kind {self.kind!r}")
        if self.kind == "closed_form" and self.fn is None:
            raise InvalidSpecError("closed_form far field needs a callable fn")

    def boundary_values(self, grid: ExtensionGrid) -> np.ndarray:
        """Data sampled on every grid node (only the Dirichlet ring is used)."""
        if self.kind == "zero":
            return np.zeros(grid.shape)
        if self.kind == "constant":
            return np.full(grid.shape, float(self.value))
        return np.asarray(self.fn(*grid.meshgrid()), dtype=float)


@dataclass(frozen=True)
class SolverSettings:
    """Projected-SOR controls.

    tolerance is the complementarity residual threshold in solution units;
    kkt_tolerance is the declared accuracy of the independent trace-side
    check in kkt_residual, which is limited by the grid rather than by the
    sweep count and is therefore recorded separately per scenario.
    """

    omega: float = 1.5
    tolerance: float = 1.0e-8
    max_sweeps: int = 100000
    kkt_tolerance: float = 5.0e-3

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise InvalidSpecError(f"relaxation factor must lie in (0, 2), got {self.omega}")
        if self.tolerance <= 0:
            raise InvalidSpecError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise InvalidSpecError("max_sweeps must be at least 1")


@dataclass(frozen=True)
class ObstacleScenario:
    """Full description of one obstacle run.

    obstacle: closed form (positional meshgrid arguments, one per spatial
    axis) or a sampled TraceFunction.  drift/potential are trace fields
    (callable of x, a constant, or None for identically zero); the potential
    must be nonnegative.  far_field supplies the Dirichlet data for u.
    """

    obstacle: Union[Callable, TraceFunction]
    params: FracParams
    grid_spec: GridSpec
    far_field: FarFieldModel = field(default_factory=FarFieldModel)
    drift: Union[Callable, float, None] = None
    potential: Union[Callable, float, None] = None
    settings: SolverSettings = field(default_factory=SolverSettings)


@dataclass
class SolveResult:
    """Converged (or capped) output of solve_obstacle_extension."""

    u_trace: TraceFunction
    v_ext: GridFunction
    contact_mask: np.ndarray
    residual: float
    sweeps: int
    converged: bool
    grid: ExtensionGrid
    phi_trace: np.ndarray


@dataclass
class DriftReductionResult:
    """Corrector and reduced problem produced by the drift fixed point."""

    w: TraceFunction
    reduced: ObstacleScenario
    history: list
    converged: bool
    result: SolveResult
    u_hat: TraceFunction


# ---------------------------------------------------------------------------
# discrete operator


class DiscreteLa:
    """Conservative finite-volume stencil for div(|y|^a grad v).

    Nodes own cells [x_i - h/2, x_i + h/2] x [y_{k-1/2}, y_{k+1/2}] with the
    trace cell starting at y = 0.  flux() returns the net outward weighted
    flux per cell (zero on the Dirichlet ring), apply() divides by the
    unweighted cell volume to approximate the pointwise density L_a v.
    """

    def __init__(self, grid: ExtensionGrid, params: FracParams):
        if grid.n != params.n:
            raise InvalidSpecError("grid dimension does not match params.n")
        self.grid = grid
        self.params = params
        a = params.a
        y = grid.y
        yf = 0.5 * (y[:-1] + y[1:])
        dy = np.diff(y)
        lo = np.concatenate([[0.0], yf])
        hi = np.concatenate([yf, [y[-1]]])
        # exact |y|^a mass of each cell's y-extent, finite at the trace cell
        self.w_cell = (hi ** (1.0 + a) - lo ** (1.0 + a)) / (1.0 + a)
        self.w_face = yf**a / dy
        self.cell_height = hi - lo
        hx = []
        for ax in grid.x_axes:
            steps = np.diff(ax)
            if not np.allclose(steps, steps[0], rtol=1e-9):
                raise InvalidSpecError("solver needs uniform spacing on each x axis")
            hx.append(float(steps[0]))
        self.hx = tuple(hx)
        if grid.n == 1:
            self.cx = (self.w_cell / hx[0],)
            self.cy = self.w_face * hx[0]
            self.cell_vol = self.cell_height * hx[0]
        else:
            self.cx = (
                self.w_cell * hx[1] / hx[0],
                self.w_cell * hx[0] / hx[1],
            )
            self.cy = self.w_face * hx[0] * hx[1]
            self.cell_vol = self.cell_height * hx[0] * hx[1]
        # diagonal of the flux form on the updated region k = 0..K-2
        K = len(y)
        diag = np.zeros(K - 1)
        diag += 2.0 * sum(c[: K - 1] for c in self.cx)
        diag += self.cy[: K - 1]
        diag[1:] += self.cy[: K - 2]
        self.diag = diag

    def flux(self, values: np.ndarray) -> np.ndarray:
        """Net outward weighted flux per cell; zero on the Dirichlet ring."""
        v = np.asarray(values, dtype=float)
        if v.shape != self.grid.shape:
            raise InvalidSpecError("value shape does not match grid")
        G = np.zeros_like(v)
        if self.grid.n == 1:
            core = v[1:-1, :-1]
            out = self.cx[0][:-1] * (v[:-2, :-1] + v[2:, :-1] - 2.0 * core)
            out += self.cy * (v[1:-1, 1:] - core)
            dn = np.zeros_like(core)
            dn[:, 1:] = self.cy[:-1] * (v[1:-1, :-2] - core[:, 1:])
            G[1:-1, :-1] = out + dn
        else:
            core = v[1:-1, 1:-1, :-1]
            out = self.cx[0][:-1] * (v[:-2, 1:-1, :-1] + v[2:, 1:-1, :-1] - 2.0 * core)
            out += self.cx[1][:-1] * (v[1:-1, :-2, :-1] + v[1:-1, 2:, :-1] - 2.0 * core)
            out += self.cy * (v[1:-1, 1:-1, 1:] - core)
            dn = np.zeros_like(core)
            dn[:, :, 1:] = self.cy[:-1] * (v[1:-1, 1:-1, :-2] - core[:, :, 1:])
            G[1:-1, 1:-1, :-1] = out + dn
        return G

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Pointwise approximation of L_a v (flux over unweighted cell volume)."""
        return self.flux(values) / self.cell_vol

    def energy(self, values: np.ndarray) -> float:
        """Discrete weighted Dirichlet energy sum_faces c_face (dv)^2."""
        v = np.asarray(values, dtype=float)
        total = 0.0
        if self.grid.n == 1:
            total += float(np.sum(self.cx[0] * np.diff(v, axis=0) ** 2))
            total += float(np.sum(self.cy * np.diff(v, axis=1) ** 2))
        else:
            total += float(np.sum(self.cx[0] * np.diff(v, axis=0) ** 2))
            total += float(np.sum(self.cx[1] * np.diff(v, axis=1) ** 2))
            total += float(np.sum(self.cy * np.diff(v, axis=2) ** 2))
        return total


def assemble_La(grid: ExtensionGrid, params: FracParams) -> DiscreteLa:
    """Build the conservative finite-volume stencil for L_a on the grid."""
    return DiscreteLa(grid, params)


# ---------------------------------------------------------------------------
# obstacle solve


def _sample_obstacle(obstacle, grid: ExtensionGrid) -> np.ndarray:
    if isinstance(obstacle, TraceFunction):
        mesh = np.meshgrid(*grid.x_axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        phi = np.asarray(obstacle(pts)).reshape(mesh[0].shape)
    else:
        mesh = np.meshgrid(*grid.x_axes, indexing="ij")
        phi = np.asarray(obstacle(*mesh), dtype=float)
        phi = np.broadcast_to(phi, mesh[0].shape).copy()
    if not np.all(np.isfinite(phi)):
        raise InvalidSpecError("obstacle must be bounded on the grid")
    return phi


def _eval_trace_field(fld, x_nodes: np.ndarray) -> np.ndarray:
    """Trace field given as callable, constant, or None (zero)."""
    if fld is None:
        return np.zeros_like(x_nodes)
    if callable(fld):
        return np.broadcast_to(np.asarray(fld(x_nodes), dtype=float), x_nodes.shape).copy()
    return np.full_like(x_nodes, float(fld))


def _require_drift_free(scenario: ObstacleScenario, x_nodes: np.ndarray):
    b = _eval_trace_field(scenario.drift, x_nodes)
    c = _eval_trace_field(scenario.potential, x_nodes)
    if np.any(b != 0.0) or np.any(c != 0.0):
        raise InvalidSpecError(
            "solve_obstacle_extension needs b = 0 and c = 0; use reduce_drift first"
        )


def _interior_color_masks(shape_core):
    idx = np.indices(shape_core).sum(axis=0)
    return (idx % 2 == 0), (idx % 2 == 1)


def _complementarity_residual(La: DiscreteLa, v, phi, diag_full):
    """Max violation in solution units: |G|/diag off the trace, complementarity on it."""
    G = La.flux(v)
    if La.grid.n == 1:
        r = G[1:-1, :-1] / diag_full
        trace = np.minimum(v[1:-1, 0] - phi[1:-1], -r[:, 0])
        r = np.abs(r)
        r[:, 0] = np.abs(trace)
    else:
        r = G[1:-1, 1:-1, :-1] / diag_full
        trace = np.minimum(v[1:-1, 1:-1, 0] - phi[1:-1, 1:-1], -r[:, :, 0])
        r = np.abs(r)
        r[:, :, 0] = np.abs(trace)
    return float(np.max(r))


def solve_obstacle_extension(
    scenario: ObstacleScenario, initial: Optional[np.ndarray] = None
) -> SolveResult:
    """Projected SOR for the drift-free extension obstacle problem.

    Interior nodes satisfy discrete L_a v = 0; trace nodes satisfy
    v >= phi, net weighted flux <= 0, and complementarity.  Boundary nodes
    carry the far-field Dirichlet data.  Runs until the max complementarity
    residual drops below settings.tolerance, or returns converged = False
    after max_sweeps (never a silent success).  An initial array warm-starts
    the sweep; the Dirichlet ring and trace feasibility are re-imposed.
    """
    st = scenario.settings
    grid = build_grid(scenario.grid_spec)
    La = assemble_La(grid, scenario.params)
    phi = _sample_obstacle(scenario.obstacle, grid)
    x0_nodes = grid.x_axes[0]
    _require_drift_free(scenario, x0_nodes)
    data = scenario.far_field.boundary_values(grid)
    if data.shape != grid.shape:
        raise InvalidSpecError("far-field data shape does not match grid")

    v = data.copy() if initial is None else np.array(initial, dtype=float, copy=True)
    if v.shape != grid.shape:
        raise InvalidSpecError("initial guess shape does not match grid")
    # re-impose Dirichlet data on the ring
    if grid.n == 1:
        v[0, :] = data[0, :]
        v[-1, :] = data[-1, :]
        v[:, -1] = data[:, -1]
        corners = (v[0, 0] < phi[0] - st.tolerance) or (v[-1, 0] < phi[-1] - st.tolerance)
    else:
        v[0, :, :] = data[0, :, :]
        v[-1, :, :] = data[-1, :, :]
        v[:, 0, :] = data[:, 0, :]
        v[:, -1, :] = data[:, -1, :]
        v[:, :, -1] = data[:, :, -1]
        ring = np.zeros(phi.shape, dtype=bool)
        ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
        corners = bool(np.any(v[..., 0][ring] < phi[ring] - st.tolerance))
    if corners:
        raise InvalidSpecError("far-field data lies below the obstacle at the trace boundary")

    K = len(grid.y)
    if grid.n == 1:
        core = v[1:-1, :-1]
        phi_core = phi[1:-1]
        core[:, 0] = np.maximum(core[:, 0], phi_core)
        cxa = La.cx[0][: K - 1]
        cya = La.cy[: K - 1]
        diag = La.diag
        red, black = _interior_color_masks(core.shape)

        def half_sweep(mask):
            num = cxa * (v[:-2, :-1] + v[2:, :-1])
            num += cya * v[1:-1, 1:]
            num[:, 1:] += La.cy[: K - 2] * v[1:-1, : K - 2]
            vgs = num / diag
            vn = core + st.omega * (vgs - core)
            vn[:, 0] = np.maximum(vn[:, 0], phi_core)
            np.copyto(core, vn, where=mask)

    else:
        core = v[1:-1, 1:-1, :-1]
        phi_core = phi[1:-1, 1:-1]
        core[:, :, 0] = np.maximum(core[:, :, 0], phi_core)
        cxa = La.cx[0][: K - 1]
        cxb = La.cx[1][: K - 1]
        cya = La.cy[: K - 1]
        diag = La.diag
        red, black = _interior_color_masks(core.shape)

        def half_sweep(mask):
            num = cxa * (v[:-2, 1:-1, :-1] + v[2:, 1:-1, :-1])
            num += cxb * (v[1:-1, :-2, :-1] + v[1:-1, 2:, :-1])
            num += cya * v[1:-1, 1:-1, 1:]
            num[:, :, 1:] += La.cy[: K - 2] * v[1:-1, 1:-1, : K - 2]
            vgs = num / diag
            vn = core + st.omega * (vgs - core)
            vn[:, :, 0] = np.maximum(vn[:, :, 0], phi_core)
            np.copyto(core, vn, where=mask)

    residual = np.inf
    sweeps = 0
    converged = False
    check_every = 4
    while sweeps < st.max_sweeps:
        half_sweep(red)
        half_sweep(black)
        sweeps += 1
        if sweeps % check_every == 0 or sweeps == st.max_sweeps:
            residual = _complementarity_residual(La, v, phi, diag)
            if residual <= st.tolerance:
                converged = True
                break
    if not converged:
        residual = _complementarity_residual(La, v, phi, diag)
        converged = residual <= st.tolerance

    mask = np.abs(v[..., 0] - phi) <= 10.0 * st.tolerance
    return SolveResult(
        u_trace=TraceFunction.from_grid(grid, v[..., 0].copy()),
        v_ext=GridFunction(grid, v),
        contact_mask=mask,
        residual=residual,
        sweeps=sweeps,
        converged=converged,
        grid=grid,
        phi_trace=phi,
    )


def extend_harmonic(
    trace_values: np.ndarray,
    grid: ExtensionGrid,
    params: FracParams,
    boundary: np.ndarray,
    settings: Optional[SolverSettings] = None,
    initial: Optional[np.ndarray] = None,
) -> GridFunction:
    """Discrete L_a-harmonic extension with the trace layer clamped.

    Linear Dirichlet companion to solve_obstacle_extension: the y = 0 layer
    is fixed to trace_values, the lateral and top layers take the ring of
    `boundary`, and interior nodes are relaxed to discrete L_a v = 0 with the
    same finite-volume stencil as the obstacle solve.  Extending a reference
    function this way puts it on the same discrete footing as a solved field,
    so near-trace discretization bias cancels when the two are subtracted.
    Raises SolverFailureError if the sweeps do not converge.
    """
    st = settings if settings is not None else SolverSettings()
    La = assemble_La(grid, params)
    K = len(grid.y)
    tr = np.asarray(trace_values, dtype=float)
    if tr.shape != grid.shape[:-1]:
        raise InvalidSpecError("trace values shape does not match grid")
    v = np.array(boundary, dtype=float, copy=True)
    if v.shape != grid.shape:
        raise InvalidSpecError("boundary data shape does not match grid")
    if initial is not None:
        inner = np.array(initial, dtype=float, copy=True)
        if inner.shape != grid.shape:
            raise InvalidSpecError("initial guess shape does not match grid")
        if grid.n == 1:
            v[1:-1, 1 : K - 1] = inner[1:-1, 1 : K - 1]
        else:
            v[1:-1, 1:-1, 1 : K - 1] = inner[1:-1, 1:-1, 1 : K - 1]
    v[..., 0] = tr

    if grid.n == 1:
        core = v[1:-1, 1 : K - 1]
        cxa = La.cx[0][1 : K - 1]
        cya = La.cy[1 : K - 1]
        cyb = La.cy[: K - 2]
        diag = La.diag[1 : K - 1]
        red, black = _interior_color_masks(core.shape)

        def half_sweep(mask):
            num = cxa * (v[:-2, 1 : K - 1] + v[2:, 1 : K - 1])
            num += cya * v[1:-1, 2:K]
            num += cyb * v[1:-1, : K - 2]
            vn = core + st.omega * (num / diag - core)
            np.copyto(core, vn, where=mask)

        def residual():
            G = La.flux(v)
            return float(np.max(np.abs(G[1:-1, 1 : K - 1] / diag)))

    else:
        core = v[1:-1, 1:-1, 1 : K - 1]
        cxa = La.cx[0][1 : K - 1]
        cxb = La.cx[1][1 : K - 1]
        cya = La.cy[1 : K - 1]
        cyb = La.cy[: K - 2]
        diag = La.diag[1 : K - 1]
        red, black = _interior_color_masks(core.shape)

        def half_sweep(mask):
            num = cxa * (v[:-2, 1:-1, 1 : K - 1] + v[2:, 1:-1, 1 : K - 1])
            num += cxb * (v[1:-1, :-2, 1 : K - 1] + v[1:-1, 2:, 1 : K - 1])
            num += cya * v[1:-1, 1:-1, 2:K]
            num += cyb * v[1:-1, 1:-1, : K - 2]
            vn = core + st.omega * (num / diag - core)
            np.copyto(core, vn, where=mask)

        def residual():
            G = La.flux(v)
            return float(np.max(np.abs(G[1:-1, 1:-1, 1 : K - 1] / diag)))

    sweeps = 0
    check_every = 4
    while sweeps < st.max_sweeps:
        half_sweep(red)
        half_sweep(black)
        sweeps += 1
        if sweeps % check_every == 0 or sweeps == st.max_sweeps:
            if residual() <= st.tolerance:
                return GridFunction(grid, v)
    raise SolverFailureError(
        "harmonic extension did not converge within max_sweeps "
        f"(residual {residual():.3e}, tolerance {st.tolerance:.3e})"
    )


# ---------------------------------------------------------------------------
# independent trace-side check


_DTN_CACHE: dict = {}


def _calibrated_dtn(params: FracParams, grid: ExtensionGrid) -> float:
    key = (
        round(params.s, 12),
        params.n,
        grid.shape,
        tuple(np.round(np.asarray(grid.bounds()[0]).ravel(), 12)),
        round(float(grid.y[-1]), 12),
        round(grid.q, 12),
    )
    if key not in _DTN_CACHE:
        if params.n == 1:
            cal_grid = grid
        else:
            # calibration runs on a 1-D grid with matching y layering
            ax = grid.x_axes[0]
            cal_grid = ExtensionGrid(x_axes=(ax,), y=grid.y, q=grid.q)
        _DTN_CACHE[key] = calibrate_dtn(FracParams(params.s, 1), cal_grid)
    return _DTN_CACHE[key]


def kkt_residual(result: SolveResult, scenario: ObstacleScenario, d_dtn: float | None = None) -> float:
    """Trace-side complementarity violation max |min(u - phi, (-Lap)^s u + drift terms)|.

    The operator value is recovered from the extension by the weighted normal
    derivative, (-Lap)^s u = -dtn_trace(v)/d_dtn, which is independent of the
    sweep algebra; its accuracy is set by the grid, so converged solves are
    judged against settings.kkt_tolerance rather than the sweep tolerance.
    """
    params = scenario.params
    grid = result.grid
    if d_dtn is None:
        d_dtn = _calibrated_dtn(params, grid)
    lam = -dtn_trace(result.v_ext, params).values / d_dtn
    u = result.u_trace.values
    x = grid.x_axes[0]
    if params.n == 1:
        b = _eval_trace_field(scenario.drift, x)
        c = _eval_trace_field(scenario.potential, x)
        if np.any(b != 0.0) or np.any(c != 0.0):
            lam = lam + b * np.gradient(u, x) + c * u
        comp = np.minimum(u - result.phi_trace, lam)[1:-1]
    else:
        comp = np.minimum(u - result.phi_trace, lam)[1:-1, 1:-1]
    return float(np.max(np.abs(comp)))


# ---------------------------------------------------------------------------
# linear fractional solve and drift reduction


def solve_linear_fractional(rhs: TraceFunction, params: FracParams) -> TraceFunction:
    """Solve (-Lap)^s w = rhs on the trace grid, zero Dirichlet far field.

    Dense collocation with the same sampled-trace stencil used by
    frac_laplacian_grid, so the two are exact inverses of one another on the
    grid.  The right-hand side should decay toward the truncation boundary.
    """
    if rhs.n != 1:
        raise InvalidSpecError("linear fractional solve supports n = 1 traces")
    x = rhs.x_axes[0]
    h = float(x[1] - x[0])
    if not np.allclose(np.diff(x), h, rtol=1e-9):
        raise InvalidSpecError("linear fractional solve needs a uniform grid")
    s = params.s
    N = len(x)
    m = N
    u = _fraclap_grid_weights(h, m, s)
    cns = c_ns(params)
    tail = (m * h) ** (-2.0 * s) / (2.0 * s)
    A = np.zeros((N, N))
    rows = np.arange(N)
    A[rows, rows] = cns * (2.0 * np.sum(u) + 2.0 * tail)
    for j in range(1, m + 1):
        keep = rows + j < N
        A[rows[keep], rows[keep] + j] -= cns * u[j - 1]
        keep = rows - j >= 0
        A[rows[keep], rows[keep] - j] -= cns * u[j - 1]
    try:
        w = np.linalg.solve(A, rhs.values)
    except np.linalg.LinAlgError as exc:
        raise SolverFailureError(f"collocation matrix is singular: {exc}") from None
    if not np.all(np.isfinite(w)):
        raise SolverFailureError("linear fractional solve produced non-finite values")
    return TraceFunction(rhs.x_axes, w)


def reduce_drift(
    scenario: ObstacleScenario, tol: float = 1.0e-6, max_iter: int = 30
) -> DriftReductionResult:
    """Reduce an obstacle problem with drift to a drift-free one by a fixed point.

    Iterates: w^k solves (-Lap)^s w = b grad(u_hat^k) + c u_hat^k; the
    drift-free problem with obstacle phi_hat - w^k gives u^{k+1}; then
    u_hat^{k+1} = u^{k+1} + w^k.  Stops when sup|u_hat^{k+1} - u_hat^k| <= tol.
    The history records every iterate's residual; hitting max_iter returns
    converged = False with the history intact.
    """
    if scenario.params.n != 1:
        raise InvalidSpecError("drift reduction runs on n = 1 scenarios")
    grid = build_grid(scenario.grid_spec)
    x = grid.x_axes[0]
    b = _eval_trace_field(scenario.drift, x)
    c = _eval_trace_field(scenario.potential, x)
    if np.any(c < 0.0):
        raise InvalidSpecError("potential must be nonnegative")
    phi_hat = _sample_obstacle(scenario.obstacle, grid)

    base = replace(scenario, drift=None, potential=None)
    res = solve_obstacle_extension(base)
    u_hat = res.u_trace.values.copy()
    w_vals = np.zeros_like(u_hat)
    history = []
    converged = False
    reduced = base
    for _ in range(max_iter):
        rhs = b * np.gradient(u_hat, x) + c * u_hat
        w_vals = solve_linear_fractional(TraceFunction((x,), rhs), scenario.params).values
        reduced = replace(
            scenario,
            obstacle=TraceFunction((x,), phi_hat - w_vals),
            drift=None,
            potential=None,
        )
        res = solve_obstacle_extension(reduced, initial=res.v_ext.values)
        u_hat_next = res.u_trace.values + w_vals
        step = float(np.max(np.abs(u_hat_next - u_hat)))
        history.append(step)
        u_hat = u_hat_next
        if step <= tol:
            converged = True
            break
    return DriftReductionResult(
        w=TraceFunction((x,), w_vals),
        reduced=reduced,
        history=history,
        converged=converged,
        result=res,
        u_hat=TraceFunction((x,), u_hat),
    )
