"""Homogeneous competitors and the constrained boundary adjusted energy probe.

Given a trace t on the upper unit half-circle, the degree-d homogeneous
extension w(rho, theta) = rho^d t(theta) competes against the minimizer zeta
of the boundary adjusted energy

    W(v) = int_{B_1} |grad v|^2 |y|^a - (1+s) int_{dB_1} v^2 |y|^a

over fields sharing the trace and nonnegative on the equator {y = 0}.  The
improvement ratio kappa_eff = 1 - W(zeta)/W(w) is the empirical analogue of
the uniform energy decay seen near the model profile
vhat0 = (x + rho)^s (x - s rho), whose W vanishes.

Both energies in a report come from one discrete quadratic form on a shared
polar mesh of the upper half-disk, so the minimizer can never beat itself by
quadrature disagreement, and the zero-energy profile calibrates the floor
below which the ratio is reported degenerate.  Spatial dimension 1 only; the
probe geometry is the two-dimensional extension plane.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .core import (
    ExtensionGrid,
    FracParams,
    GridFunction,
    InvalidSpecError,
    _sin_pow_primitive,
)


class InvalidDegreeError(ValueError):
    """Homogeneous extension requested with a nonpositive degree."""


class ConstraintInfeasibleError(ValueError):
    """The fixed trace is negative where it meets the constrained equator."""


class HomogeneityDefectError(ValueError):
    """A field offered as homogeneous fails the homogeneity check."""


SIGN_POSITIVE = "positive"
SIGN_ZERO = "zero"
SIGN_NEGATIVE = "negative"


def equator_offset_angles(n_theta: int) -> np.ndarray:
    """Angular trace nodes (j + 1/2) pi / n_theta, offset from both equator ends."""
    if n_theta < 8:
        raise InvalidSpecError(f"need at least 8 angular nodes, got {n_theta}")
    return (np.arange(n_theta) + 0.5) * (np.pi / n_theta)


def profile_boundary_trace(params: FracParams, n_theta: int) -> np.ndarray:
    """Trace of the zero-energy profile (x + rho)^s (x - s rho) on the half-circle."""
    th = equator_offset_angles(n_theta)
    c = np.cos(th)
    return (c + 1.0) ** params.s * (c - params.s)


# ---------------------------------------------------------------------------
# the shared polar mesh and its quadratic form


@dataclass(frozen=True)
class PolarMesh:
    """Polar finite-volume mesh of the upper half-disk with |y|^a weights.

    Angular slots: equator end theta = 0, the offset trace nodes, equator end
    theta = pi.  Radial nodes rho_i = i / n_radial, the outer ring Dirichlet.
    Face conductances integrate the weight exactly (power-function primitives
    in rho, |sin|^(+-a) primitives in theta), so purely radial and purely
    angular variations are penalized consistently with the continuum energy.
    All energies carry the even-reflection factor 2.
    """

    params: FracParams
    rho: np.ndarray            # (Nr,) radial nodes, rho[-1] = 1
    slots: np.ndarray          # (J,) angular positions including both ends
    slot_mass: np.ndarray      # (J,) exact |sin|^a mass of each angular dual cell
    ang_cond: np.ndarray       # (J-1,) conductance of each angular face
    rad_cond: np.ndarray       # (Nr-1,) radial face conductance per unit slot mass
    rad_mass: np.ndarray       # (Nr,) exact rho^{a-1} mass of each radial dual cell

    @property
    def n_theta(self) -> int:
        return len(self.slots) - 2

    def gradient_energy(self, Z: np.ndarray) -> float:
        """2 * int_{B_1^+} |grad v|^2 |y|^a of the mesh field Z (rows rho, cols slots)."""
        dr = np.diff(Z, axis=0)
        erad = np.sum(self.rad_cond[:, None] * self.slot_mass[None, :] * dr * dr)
        da = np.diff(Z, axis=1)
        eang = np.sum(self.rad_mass[:, None] * self.ang_cond[None, :] * da * da)
        return float(2.0 * (erad + eang))

    def boundary_mass(self, ring: np.ndarray) -> float:
        """2 * int_{dB_1 cap {y>0}} v^2 |y|^a from the Dirichlet ring values."""
        return float(2.0 * np.dot(self.slot_mass, ring * ring))

    def ring_from_trace(self, trace: np.ndarray) -> np.ndarray:
        """Slot values on the ring: the trace continued constantly to both ends.

        The two corner slots sit on the closed equator, so they are clamped
        at zero; a trace continuous up to the corners with nonnegative corner
        values loses only its sub-node sampling dip.
        """
        return np.concatenate(
            ([max(trace[0], 0.0)], trace, [max(trace[-1], 0.0)])
        )

    def homogeneous_values(self, trace: np.ndarray, degree: float) -> np.ndarray:
        """Mesh samples of rho^degree * trace(theta)."""
        return self.rho[:, None] ** degree * self.ring_from_trace(trace)[None, :]

    def adjusted_energy(self, Z: np.ndarray, trace: np.ndarray) -> float:
        """W of a mesh field whose ring row carries the given trace."""
        s = self.params.s
        return self.gradient_energy(Z) - (1.0 + s) * self.boundary_mass(
            self.ring_from_trace(trace)
        )


def build_polar_mesh(params: FracParams, n_theta: int, n_radial: int) -> PolarMesh:
    if params.n != 1:
        raise InvalidSpecError(
            "the energy probe works on the two-dimensional extension plane; n must be 1"
        )
    if n_radial < 8:
        raise InvalidSpecError(f"need at least 8 radial nodes, got {n_radial}")
    a = params.a
    nodes = equator_offset_angles(n_theta)
    slots = np.concatenate(([0.0], nodes, [np.pi]))
    mids = 0.5 * (slots[:-1] + slots[1:])
    edges = np.concatenate(([0.0], mids, [np.pi]))
    prim_a = _sin_pow_primitive(edges, a)
    slot_mass = np.diff(prim_a)
    prim_inv = _sin_pow_primitive(slots, -a)
    ang_cond = 1.0 / np.diff(prim_inv)

    rho = np.arange(1, n_radial + 1, dtype=float) / n_radial
    # conductance of [rho_i, rho_{i+1}]: inverse of the exact rho^{-(1+a)} integral
    pr = rho ** (-a) / (-a)
    rad_cond = 1.0 / np.diff(pr)
    # dual-cell rho^{a-1} mass, cells clipped to [rho_1/2, 1]
    lo = np.concatenate(([rho[0] / 2.0], 0.5 * (rho[:-1] + rho[1:])))
    hi = np.concatenate((0.5 * (rho[:-1] + rho[1:]), [1.0]))
    rad_mass = (hi**a - lo**a) / a
    return PolarMesh(
        params=params,
        rho=rho,
        slots=slots,
        slot_mass=slot_mass,
        ang_cond=ang_cond,
        rad_cond=rad_cond,
        rad_mass=rad_mass,
    )


# ---------------------------------------------------------------------------
# homogeneous extension


_MARGIN = 1.02


def _disk_grid(nx: int, ny: int, q: float = 2.0) -> ExtensionGrid:
    ax = np.linspace(-_MARGIN, _MARGIN, nx)
    k = np.arange(ny, dtype=float)
    yy = _MARGIN * (k / (ny - 1)) ** q
    return ExtensionGrid(x_axes=(ax,), y=yy, q=q)


class HomogeneousField(GridFunction):
    """rho^degree * trace(theta) with exact polar evaluation.

    Node values on the tensor grid are sampled for gradient-based consumers;
    point evaluation uses the closed form (piecewise-linear trace in theta,
    clamped to its end values on the equator gaps), so radial scaling holds
    exactly and the origin value is exactly zero for positive degree.
    """

    def __init__(self, trace, degree: float, nx: int = 129, ny: int = 65):
        trace = np.asarray(trace, dtype=float)
        if trace.ndim != 1 or len(trace) < 8:
            raise InvalidSpecError("trace must be a flat array of at least 8 node values")
        if not np.all(np.isfinite(trace)):
            raise InvalidSpecError("trace values must be finite")
        if not degree > 0.0:
            raise InvalidDegreeError(f"homogeneity degree must be positive, got {degree}")
        self.trace = trace
        self.degree = float(degree)
        self.theta_nodes = equator_offset_angles(len(trace))
        grid = _disk_grid(nx, ny)
        mesh = grid.meshgrid()
        pts = np.stack(mesh, axis=-1)
        super().__init__(grid, self._closed_form(pts))

    def _closed_form(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        x = pts[..., 0]
        y = np.abs(pts[..., -1])
        rho = np.hypot(x, y)
        th = np.arctan2(y, x)
        tval = np.interp(th, self.theta_nodes, self.trace)
        # 0^degree = 0 for positive degree, so the origin needs no special case
        return rho**self.degree * tval

    def __call__(self, points) -> np.ndarray:
        return self._closed_form(points)


def homogeneous_extend(trace, degree: float, nx: int = 129, ny: int = 65) -> HomogeneousField:
    """Degree-homogeneous extension of a half-circle trace to the unit disk.

    The trace lives on the offset angular nodes of equator_offset_angles.
    Nonpositive degree raises InvalidDegreeError.
    """
    return HomogeneousField(trace, degree, nx=nx, ny=ny)


# ---------------------------------------------------------------------------
# constrained minimization of the boundary adjusted energy


class MinimizerField(GridFunction):
    """Constrained minimizer resampled to a tensor grid, with its polar state.

    Carries the polar mesh, the mesh values Z, the convergence flag and sweep
    count, and the discrete gradient energy, so energy comparisons stay on
    the minimizer's own footing.
    """

    def __init__(self, mesh: PolarMesh, Z: np.ndarray, converged: bool, sweeps: int,
                 residual: float, nx: int = 129, ny: int = 65):
        self.mesh = mesh
        self.Z = Z
        self.converged = converged
        self.sweeps = sweeps
        self.residual = residual
        grid = _disk_grid(nx, ny)
        gm = grid.meshgrid()
        pts = np.stack(gm, axis=-1)
        super().__init__(grid, self._polar_eval(pts))

    def _polar_eval(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        x = pts[..., 0]
        y = np.abs(pts[..., -1])
        rho = np.hypot(x, y)
        th = np.arctan2(y, x)
        mesh = self.mesh
        s = mesh.params.s
        # homogeneous continuation outside [rho_1, 1] keeps the trace scale
        rc = np.clip(rho, mesh.rho[0], 1.0)
        scale = np.where(
            rho < mesh.rho[0],
            (rho / mesh.rho[0]) ** (1.0 + s),
            np.where(rho > 1.0, np.maximum(rho, 1.0) ** (1.0 + s), 1.0),
        )
        ri = np.clip(np.searchsorted(mesh.rho, rc) - 1, 0, len(mesh.rho) - 2)
        wr = (rc - mesh.rho[ri]) / (mesh.rho[ri + 1] - mesh.rho[ri])
        ti = np.clip(np.searchsorted(mesh.slots, th) - 1, 0, len(mesh.slots) - 2)
        wt = (th - mesh.slots[ti]) / (mesh.slots[ti + 1] - mesh.slots[ti])
        z00 = self.Z[ri, ti]
        z01 = self.Z[ri, ti + 1]
        z10 = self.Z[ri + 1, ti]
        z11 = self.Z[ri + 1, ti + 1]
        vals = (1 - wr) * ((1 - wt) * z00 + wt * z01) + wr * ((1 - wt) * z10 + wt * z11)
        return vals * scale

    def __call__(self, points) -> np.ndarray:
        return self._polar_eval(points)

    @property
    def gradient_energy(self) -> float:
        return self.mesh.gradient_energy(self.Z)


def _psor_minimize(mesh: PolarMesh, ring: np.ndarray, constrained: bool,
                   omega: float, tolerance: float, max_sweeps: int, initial=None):
    """Projected SOR for the mesh quadratic form with the ring row fixed.

    Equator slots (first and last columns) are clamped to be nonnegative when
    constrained.  Returns (Z, converged, sweeps, residual); the residual is
    the scaled stationarity defect, with the one-sided complementarity
    version at constrained slots.
    """
    Nr, J = len(mesh.rho), len(mesh.slots)
    crad = mesh.rad_cond[:, None] * mesh.slot_mass[None, :]      # (Nr-1, J)
    cang = mesh.rad_mass[:, None] * mesh.ang_cond[None, :]       # (Nr, J-1)

    Z = np.zeros((Nr, J)) if initial is None else np.array(initial, dtype=float)
    Z[-1, :] = ring
    scale = max(float(np.max(np.abs(ring))), 1e-300)

    nu, nk = Nr - 1, J   # unknown block Z[:nu, :]
    D = np.zeros((nu, nk))
    D += crad[:nu, :]                     # face to the row above (toward the ring)
    D[1:, :] += crad[: nu - 1, :]         # face to the row below
    D[:, :-1] += cang[:nu, :]
    D[:, 1:] += cang[:nu, :]

    rr, kk = np.meshgrid(np.arange(nu), np.arange(nk), indexing="ij")
    colors = [(rr + kk) % 2 == 0, (rr + kk) % 2 == 1]
    proj_cols = (0, nk - 1)

    def numerator():
        N = np.zeros((nu, nk))
        N += crad[:nu, :] * Z[1 : nu + 1, :]
        N[1:, :] += crad[: nu - 1, :] * Z[: nu - 1, :]
        N[:, :-1] += cang[:nu, :] * Z[:nu, 1:]
        N[:, 1:] += cang[:nu, :] * Z[:nu, :-1]
        return N

    def residual():
        N = numerator()
        r = (D * Z[:nu, :] - N) / (D * scale)
        out = np.abs(r)
        if constrained:
            for c in proj_cols:
                out[:, c] = np.abs(np.minimum(Z[:nu, c] / scale, r[:, c]))
        return float(np.max(out))

    sweeps = 0
    res = residual()
    while res > tolerance and sweeps < max_sweeps:
        for mask in colors:
            N = numerator()
            Znew = Z[:nu, :] + omega * (N / D - Z[:nu, :])
            if constrained:
                for c in proj_cols:
                    Znew[:, c] = np.maximum(Znew[:, c], 0.0)
            np.copyto(Z[:nu, :], Znew, where=mask)
        sweeps += 1
        if sweeps % 8 == 0 or sweeps >= max_sweeps:
            res = residual()
    return Z, res <= tolerance, sweeps, res


def minimize_W_constrained(
    trace,
    params: FracParams,
    n_radial: int = 96,
    omega: float = 1.92,
    tolerance: float = 1.0e-9,
    max_sweeps: int = 200000,
) -> MinimizerField:
    """Minimizer of the boundary adjusted energy with the trace fixed on dB_1
    and nonnegativity imposed on the equator.

    The trace must be nonnegative at its two equatorial boundary angles up
    to the node-offset allowance scale * (pi/n_theta)^{2s}: the end nodes
    sit half a step off the equator, where a trace that is Hoelder-2s up to
    a nonnegative corner value may legitimately dip by that amount.  A
    deeper negative end raises ConstraintInfeasibleError.  Hitting the sweep
    limit returns a result flagged converged=False rather than raising.
    """
    trace = np.asarray(trace, dtype=float)
    mesh = build_polar_mesh(params, len(trace), n_radial)
    scale = max(float(np.max(np.abs(trace))), 1e-300)
    allowance = scale * (np.pi / len(trace)) ** (2.0 * params.s)
    if trace[0] < -allowance or trace[-1] < -allowance:
        raise ConstraintInfeasibleError(
            "trace is negative at an equatorial boundary angle; end values "
            f"({trace[0]:.3e}, {trace[-1]:.3e}) fall below -{allowance:.3e}"
        )
    ring = mesh.ring_from_trace(trace)
    initial = mesh.homogeneous_values(trace, 1.0 + params.s)
    Z, ok, sweeps, res = _psor_minimize(
        mesh, ring, True, omega, tolerance, max_sweeps, initial=initial
    )
    return MinimizerField(mesh, Z, ok, sweeps, res)


def _unconstrained_extension(trace, params: FracParams, n_radial: int = 96,
                             omega: float = 1.92, tolerance: float = 1.0e-9,
                             max_sweeps: int = 200000) -> MinimizerField:
    """Plain energy minimizer with the same trace, no equator sign constraint."""
    trace = np.asarray(trace, dtype=float)
    mesh = build_polar_mesh(params, len(trace), n_radial)
    ring = mesh.ring_from_trace(trace)
    initial = mesh.homogeneous_values(trace, 1.0 + params.s)
    Z, ok, sweeps, res = _psor_minimize(
        mesh, ring, False, omega, tolerance, max_sweeps, initial=initial
    )
    return MinimizerField(mesh, Z, ok, sweeps, res)


# ---------------------------------------------------------------------------
# the report


@dataclass
class EpiReport:
    """Energies of the homogeneous competitor and the constrained minimizer.

    kappa_eff = 1 - W_zeta/W_w is defined only when |W_w| exceeds the floor;
    below it the ratio is degenerate (0/0 at the zero-energy profile) and
    sign_case is "zero".
    """

    W_w: float
    W_zeta: float
    kappa_eff: Optional[float]
    sign_case: str
    converged: bool
    floor: float

    def to_row(self, seed=None, delta=None) -> dict:
        return {
            "seed": seed,
            "delta": delta,
            "W_w": self.W_w,
            "W_zeta": self.W_zeta,
            "kappa_eff": "" if self.kappa_eff is None else self.kappa_eff,
            "sign_case": self.sign_case,
            "converged": self.converged,
        }


@lru_cache(maxsize=32)
def _calibration_energy(s: float, n_theta: int, n_radial: int):
    """(|W|, gradient energy) of the sampled zero-energy profile on this mesh.

    The continuum W of the profile vanishes, so the discrete value measures
    the resolution of the mesh form itself and calibrates the degeneracy
    floor.
    """
    params = FracParams(s=s, n=1)
    mesh = build_polar_mesh(params, n_theta, n_radial)
    t = profile_boundary_trace(params, n_theta)
    Z = mesh.homogeneous_values(t, 1.0 + s)
    return abs(mesh.adjusted_energy(Z, t)), mesh.gradient_energy(Z)


def epiperimetric_report(
    w: GridFunction,
    params: FracParams,
    floor: Optional[float] = None,
    n_theta: int = 256,
    n_radial: int = 96,
    homogeneity_tol: float = 1.0e-6,
    **solver_kwargs,
) -> EpiReport:
    """Energy comparison of a (1+s)-homogeneous field against its minimizer.

    The field's trace is sampled on the offset half-circle nodes; both W
    values come from the shared polar mesh form, the competitor as the exact
    homogeneous extension of that trace and zeta from the constrained solve.
    The default floor is the larger of 1e-10 times the competitor's gradient
    energy and three times the mesh form's own resolution, measured once per
    mesh as |W| of the sampled zero-energy profile and rescaled to the
    competitor's energy; an explicit floor argument overrides both.
    """
    degree = 1.0 + params.s
    th = equator_offset_angles(n_theta)
    circle = np.stack([np.cos(th), np.sin(th)], axis=-1)
    t = np.asarray(w(circle), dtype=float)
    scale = max(float(np.max(np.abs(t))), 1e-300)
    half = np.asarray(w(0.5 * circle), dtype=float)
    defect = float(np.max(np.abs(half - 0.5**degree * t)))
    if defect > homogeneity_tol * scale:
        raise HomogeneityDefectError(
            f"homogeneity defect {defect:.3e} exceeds {homogeneity_tol:.1e} * scale"
        )

    mesh = build_polar_mesh(params, n_theta, n_radial)
    Zw = mesh.homogeneous_values(t, degree)
    W_w = mesh.adjusted_energy(Zw, t)
    E_w = mesh.gradient_energy(Zw)

    zeta = minimize_W_constrained(t, params, n_radial=n_radial, **solver_kwargs)
    W_z = mesh.adjusted_energy(zeta.Z, t)

    if floor is None:
        w_cal, e_cal = _calibration_energy(params.s, n_theta, n_radial)
        floor = max(1.0e-10 * E_w, 3.0 * w_cal * (E_w / e_cal))

    if abs(W_w) <= floor:
        return EpiReport(W_w=W_w, W_zeta=W_z, kappa_eff=None, sign_case=SIGN_ZERO,
                         converged=zeta.converged, floor=floor)
    sign = SIGN_POSITIVE if W_w > 0 else SIGN_NEGATIVE
    return EpiReport(W_w=W_w, W_zeta=W_z, kappa_eff=1.0 - W_z / W_w, sign_case=sign,
                     converged=zeta.converged, floor=floor)


# ---------------------------------------------------------------------------
# seeded perturbation probes


def _perturbation_basis(params: FracParams, n_theta: int) -> np.ndarray:
    """Trace directions spanning the probe family on the angular nodes.

    Members: the equator coordinate times the degree-s factor, the mirrored
    profile, and the first low angular harmonics.
    """
    th = equator_offset_angles(n_theta)
    c = np.cos(th)
    s = params.s
    rows = [
        c * (c + 1.0) ** s,
        (1.0 - c) ** s * (-c - s),       # profile mirrored across the y axis
        np.cos(th),
        np.cos(2.0 * th),
        np.cos(3.0 * th),
        np.sin(th),
    ]
    return np.stack(rows, axis=0)


def perturbed_profile_trace(
    params: FracParams, n_theta: int, delta: float, rng: np.random.Generator
) -> np.ndarray:
    """Profile trace plus a seeded admissible perturbation of relative size delta.

    The perturbation is a random span of the probe basis, normalized in the
    mesh energy norm relative to the profile, then the two equatorial end
    values are projected to be nonnegative so the homogeneous field stays
    admissible on the equator.
    """
    mesh = build_polar_mesh(params, n_theta, max(16, n_theta // 8))
    base = profile_boundary_trace(params, n_theta)
    basis = _perturbation_basis(params, n_theta)
    coef = rng.standard_normal(len(basis))
    u = coef @ basis
    deg = 1.0 + params.s

    def h1(tr):
        Z = mesh.homogeneous_values(tr, deg)
        return np.sqrt(mesh.gradient_energy(Z) + mesh.boundary_mass(mesh.ring_from_trace(tr)))

    u = u * (h1(base) / max(h1(u), 1e-300))
    t = base + delta * u
    t[0] = max(t[0], 0.0)
    t[-1] = max(t[-1], 0.0)
    return t


def probe_batch(
    params: FracParams,
    count: int,
    delta: float,
    seed: int,
    n_theta: int = 256,
    n_radial: int = 96,
    **report_kwargs,
) -> list:
    """Seeded batch of perturbation reports as CSV-ready rows."""
    rows = []
    for k in range(count):
        sk = seed + k
        rng = np.random.default_rng(sk)
        t = perturbed_profile_trace(params, n_theta, delta, rng)
        w = homogeneous_extend(t, 1.0 + params.s)
        rep = epiperimetric_report(
            w, params, n_theta=n_theta, n_radial=n_radial, **report_kwargs
        )
        rows.append(rep.to_row(seed=sk, delta=delta))
    return rows


EPI_CSV_FIELDS = ("seed", "delta", "W_w", "W_zeta", "kappa_eff", "sign_case", "converged")


def reports_to_csv(rows) -> str:
    """Serialize report rows to CSV text with the stated column order."""
    import csv
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(EPI_CSV_FIELDS), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in EPI_CSV_FIELDS})
    return buf.getvalue()
