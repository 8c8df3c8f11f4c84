"""Contact-set extraction, free boundary points, local graphs, and normal fields.

The coincidence set {u = phi} is read off the solved trace within a contact
tolerance; the free boundary is its edge, refined to subgrid accuracy by a
linear root of (u - phi) - tol along each crossing grid edge.  Around a
regular anchor point in two spatial dimensions the boundary is rewritten as
a rotated graph x_n = g(x'), with the anchor's blowup direction as the last
axis, and the per-point normal directions feed a pairwise log-log regression
for the Hoelder exponent of x -> e_x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blowup import (
    REGULAR_LABEL,
    UNRESOLVED_LABEL,
    BlowupProfile,
    almgren_rescale,
    classify_point,
    fit_profile,
)
from .core import FracParams, InvalidSpecError, OutOfDomainError
from .functionals import (
    default_exponents,
    height_field,
    monotonicity_curve,
    radius_ladder,
)
from .solver import ObstacleScenario, SolveResult


class UnconvergedResultError(ValueError):
    """The solve did not converge; its contact set is not trustworthy."""


class NotAGraphError(RuntimeError):
    """Boundary points share an abscissa in the rotated frame."""


@dataclass
class FreeBoundarySet:
    """Contact mask with subgrid-refined boundary points.

    points has shape (m,) in one spatial dimension and (m, 2) in two; h is
    the trace grid spacing that sets every locality tolerance downstream.
    classifications and profiles are filled per point by
    classify_boundary_points (None entries mean unclassified).
    """

    contact_mask: np.ndarray
    points: np.ndarray
    h: float
    tol: float
    classifications: Optional[list] = None
    profiles: Optional[list] = None


def extract_free_boundary(
    result: SolveResult, scenario: ObstacleScenario, tol: Optional[float] = None
) -> FreeBoundarySet:
    """Contact mask and boundary points of a converged solve.

    The mask is |u - phi| <= tol on trace nodes (default tol: 10 times the
    solver tolerance).  Boundary points are linear roots of (u - phi) - tol
    along every grid edge where the mask flips, so each returned point is
    adjacent to one contact and one non-contact node by construction.  A
    non-converged result is refused.
    """
    if not result.converged:
        raise UnconvergedResultError(
            "free boundary extraction needs a converged result "
            f"(residual {result.residual:.3e})"
        )
    if tol is None:
        tol = 10.0 * scenario.settings.tolerance
    grid = result.grid
    d = np.abs(result.u_trace.values - result.phi_trace)
    mask = d <= tol
    pts = []
    if grid.n == 1:
        ax = grid.x_axes[0]
        flip = np.nonzero(mask[1:] != mask[:-1])[0]
        for i in flip:
            t = (tol - d[i]) / (d[i + 1] - d[i])
            pts.append(ax[i] + t * (ax[i + 1] - ax[i]))
        points = np.array(pts, dtype=float)
        h = float(np.max(np.diff(ax)))
    else:
        ax1, ax2 = grid.x_axes
        flip = np.nonzero(mask[1:, :] != mask[:-1, :])
        for i, j in zip(*flip):
            t = (tol - d[i, j]) / (d[i + 1, j] - d[i, j])
            pts.append((ax1[i] + t * (ax1[i + 1] - ax1[i]), ax2[j]))
        flip = np.nonzero(mask[:, 1:] != mask[:, :-1])
        for i, j in zip(*flip):
            t = (tol - d[i, j]) / (d[i, j + 1] - d[i, j])
            pts.append((ax1[i], ax2[j] + t * (ax2[j + 1] - ax2[j])))
        points = np.array(pts, dtype=float).reshape(-1, 2)
        h = max(float(np.max(np.diff(ax1))), float(np.max(np.diff(ax2))))
    return FreeBoundarySet(contact_mask=mask, points=points, h=h, tol=tol)


def classify_boundary_points(
    result: SolveResult,
    scenario: ObstacleScenario,
    fb: FreeBoundarySet,
    indices=None,
    ps=None,
    ratio: float = 1.1,
    max_points: Optional[int] = None,
) -> FreeBoundarySet:
    """Classify boundary points through their monotonicity curves and fit profiles.

    Each selected point gets a frequency label and, at the smallest ladder
    radius, a blowup profile fit; points whose radius ladder leaves the grid
    stay Unresolved with no profile.  indices selects a subset of fb.points
    (default all, evenly thinned to max_points when given).  Fills
    fb.classifications and fb.profiles in place and returns fb.
    """
    m = len(fb.points)
    if indices is None:
        indices = np.arange(m)
        if max_points is not None and m > max_points:
            indices = indices[np.linspace(0, m - 1, max_points).round().astype(int)]
    params = scenario.params
    if ps is None:
        ps = default_exponents(params)
    labels: list = [None] * m
    profiles: list = [None] * m
    for k in indices:
        x0 = fb.points[k]
        try:
            hf = height_field(result, scenario, x0)
            radii = radius_ladder(result.grid, np.atleast_1d(x0), ratio=ratio)
            curve = monotonicity_curve(hf, radii, ps=ps)
            labels[k] = classify_point(curve, params)
            w = almgren_rescale(hf, float(np.min(radii)))
            profiles[k] = fit_profile(w, params)
        except (OutOfDomainError, InvalidSpecError, ValueError):
            labels[k] = UNRESOLVED_LABEL
            profiles[k] = None
    fb.classifications = labels
    fb.profiles = profiles
    return fb


def boundary_records(fb: FreeBoundarySet) -> list:
    """JSON-ready classification records, one per classified point."""
    out = []
    if fb.classifications is None:
        return out
    for k, label in enumerate(fb.classifications):
        if label is None:
            continue
        prof = fb.profiles[k] if fb.profiles else None
        if prof is None:
            prof = BlowupProfile(amplitude=0.0, direction=None, residual=0.0, degenerate=True)
        out.append(prof.to_record(x0=np.atleast_1d(fb.points[k]), label=label))
    return out


# ---------------------------------------------------------------------------
# Hoelder exponent of the normal field


@dataclass
class HolderEstimate:
    """Pairwise log-log regression result for |e_x - e_x'| vs |x - x'|."""

    gamma: Optional[float]
    constant_field: bool
    n_pairs: int
    raw_gamma: Optional[float] = None
    intercept: Optional[float] = None
    rms_residual: Optional[float] = None
    n_envelope: Optional[int] = None

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "constant_field": self.constant_field,
            "n_pairs": self.n_pairs,
            "raw_gamma": self.raw_gamma,
            "intercept": self.intercept,
            "rms_residual": self.rms_residual,
            "n_envelope": self.n_envelope,
        }


def holder_estimate(
    points,
    normals,
    min_sep: float = 0.0,
    max_sep: Optional[float] = None,
    angle_floor: float = 1.0e-9,
) -> HolderEstimate:
    """Least-squares Hoelder exponent of a point-to-direction association.

    Point pairs with separation in (max(min_sep, tiny), max_sep] and
    direction gap above angle_floor feed a regression of log|e - e'| on
    log|x - x'|.  Pairs are first reduced to their upper envelope (the
    max-gap pair per log-separation bin, three bins per decade) because
    the Hoelder seminorm is a supremum: smooth nearby pairs lie far below
    the envelope and would otherwise bias the slope.  If every direction
    gap sits below the floor the field is flagged constant and gamma stays
    unset.  The reported gamma is clipped to [0, 1]; the raw slope is kept
    in raw_gamma.  Fewer than 4 distinct points is an error.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    es = np.asarray(normals, dtype=float)
    m = len(pts)
    if m != len(es):
        raise InvalidSpecError("points and normals must align")
    distinct = np.unique(pts.round(decimals=12), axis=0)
    if len(distinct) < 4:
        raise InvalidSpecError(f"need at least 4 distinct points, got {len(distinct)}")
    ii, jj = np.triu_indices(m, k=1)
    sep = np.linalg.norm(pts[ii] - pts[jj], axis=-1)
    gap = np.linalg.norm(es[ii] - es[jj], axis=-1)
    keep = sep > max(min_sep, 1.0e-12)
    if max_sep is not None:
        keep &= sep <= max_sep
    if not np.any(gap[keep] > angle_floor):
        return HolderEstimate(gamma=None, constant_field=True, n_pairs=0)
    keep &= gap > angle_floor
    if keep.sum() < 3:
        return HolderEstimate(gamma=None, constant_field=False, n_pairs=int(keep.sum()))
    ls, lg = np.log(sep[keep]), np.log(gap[keep])
    span = float(ls.max() - ls.min())
    n_bins = max(3, int(round(3.0 * span / np.log(10.0))))
    if span > 1.0e-12 and len(ls) > n_bins:
        edges = np.linspace(ls.min(), ls.max() * (1.0 + 1.0e-12) + 1.0e-12, n_bins + 1)
        which = np.clip(np.digitize(ls, edges) - 1, 0, n_bins - 1)
        env = [
            idx[np.argmax(lg[idx])]
            for idx in (np.nonzero(which == b)[0] for b in range(n_bins))
            if len(idx)
        ]
        if len(env) >= 3:
            ls, lg = ls[env], lg[env]
    slope, intercept = np.polyfit(ls, lg, 1)
    resid = lg - (slope * ls + intercept)
    return HolderEstimate(
        gamma=float(np.clip(slope, 0.0, 1.0)),
        constant_field=False,
        n_pairs=int(keep.sum()),
        raw_gamma=float(slope),
        intercept=float(intercept),
        rms_residual=float(np.sqrt(np.mean(resid**2))),
        n_envelope=len(ls),
    )


# ---------------------------------------------------------------------------
# the rotated local graph


@dataclass
class FreeBoundaryGraph:
    """Boundary samples as a graph in the anchor's rotated frame.

    frame rows are (e_perp, e): x' = (p - x0) . e_perp and g = (p - x0) . e,
    sorted by x'.  normals holds the per-sample fitted directions; gamma is
    the Hoelder estimate of the normal field over the window (None when the
    field is constant at the floor).
    """

    anchor: np.ndarray
    direction: np.ndarray
    frame: np.ndarray
    xprime: np.ndarray
    g: np.ndarray
    normals: np.ndarray
    gamma: Optional[float]
    constant_field: bool
    diagnostics: dict = field(default_factory=dict)


def build_graph(
    fb: FreeBoundarySet,
    x0,
    profiles=None,
    window: Optional[float] = None,
    g_tol: Optional[float] = None,
) -> FreeBoundaryGraph:
    """Local graph of the free boundary around a Regular anchor (two dimensions).

    The anchor must be a boundary point of fb classified Regular with a
    fitted profile direction (profiles defaults to fb.profiles).  Points
    within the window (default: everything) are rotated so the anchor
    direction is the last axis and reported as g(x') samples sorted by x'.
    Two samples sharing an abscissa with g values farther apart than g_tol
    (default 2h) mean the boundary is not a graph in this frame and raise
    NotAGraphError.  One spatial dimension has no graph to build and is
    refused; fewer than 5 window points is an error.
    """
    pts = np.asarray(fb.points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidSpecError("graph construction needs two spatial dimensions")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dist0 = np.linalg.norm(pts - x0[None, :], axis=-1)
    k0 = int(np.argmin(dist0))
    if dist0[k0] > 1.5 * fb.h:
        raise InvalidSpecError(f"anchor {tuple(x0)} is not near a boundary point")
    if profiles is None:
        profiles = fb.profiles
    if fb.classifications is None or profiles is None:
        raise InvalidSpecError("anchor needs classifications and profiles; classify first")
    if fb.classifications[k0] != REGULAR_LABEL:
        raise InvalidSpecError(
            f"anchor must be classified {REGULAR_LABEL}, got {fb.classifications[k0]}"
        )
    prof = profiles[k0]
    if prof is None or prof.direction is None or prof.degenerate:
        raise InvalidSpecError("anchor has no usable profile direction")
    e = np.asarray(prof.direction, dtype=float)
    e = e / np.linalg.norm(e)
    eperp = np.array([-e[1], e[0]])
    frame = np.stack([eperp, e], axis=0)

    sel = np.arange(len(pts)) if window is None else np.nonzero(dist0 <= window)[0]
    if len(sel) < 5:
        raise InvalidSpecError(f"need at least 5 boundary points in the window, got {len(sel)}")
    rel = pts[sel] - x0[None, :]
    xp = rel @ eperp
    gg = rel @ e
    order = np.argsort(xp)
    sel, xp, gg = sel[order], xp[order], gg[order]

    if g_tol is None:
        g_tol = 2.0 * fb.h
    x_tol = max(1.0e-9, 1.0e-3 * fb.h)
    close = np.nonzero(np.diff(xp) <= x_tol)[0]
    for i in close:
        if abs(gg[i + 1] - gg[i]) > g_tol:
            raise NotAGraphError(
                f"points at x' = {xp[i]:.6f} differ in g by {abs(gg[i+1]-gg[i]):.3e}; "
                "the boundary is not a graph in this frame"
            )

    normals = []
    for k in sel:
        pk = profiles[k]
        if pk is not None and pk.direction is not None and not pk.degenerate:
            normals.append(np.asarray(pk.direction, dtype=float))
        else:
            normals.append(np.array([np.nan, np.nan]))
    normals = np.array(normals).reshape(-1, 2)

    good = ~np.isnan(normals[:, 0])
    if good.sum() >= 4:
        est = holder_estimate(
            np.column_stack([xp[good], gg[good]]),
            normals[good],
            min_sep=4.0 * fb.h,
            max_sep=window,
        )
        gamma, const, diag = est.gamma, est.constant_field, est.to_json_dict()
    else:
        gamma, const, diag = None, False, {"n_pairs": 0, "note": "too few fitted normals"}

    return FreeBoundaryGraph(
        anchor=x0,
        direction=e,
        frame=frame,
        xprime=xp,
        g=gg,
        normals=normals,
        gamma=gamma,
        constant_field=const,
        diagnostics=diag,
    )


def graph_to_csv(graph: FreeBoundaryGraph) -> str:
    """Graph samples as CSV text with columns xprime, g, ex1, ex2."""
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["xprime", "g", "ex1", "ex2"])
    for xp, gv, en in zip(graph.xprime, graph.g, graph.normals):
        writer.writerow([repr(float(xp)), repr(float(gv)), repr(float(en[0])), repr(float(en[1]))])
    return buf.getvalue()
