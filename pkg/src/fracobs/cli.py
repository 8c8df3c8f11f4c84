"""Command line pipeline: validated JSON configs in, reproducible artifacts out.

Subcommands run prefixes of one pipeline (solve, drift reduction, boundary
extraction, frequency curves, point classification, graph construction,
perturbation probes) and emit manifest.json plus per-stage CSV/JSON files.
Reruns with the same config and seed produce byte-identical artifacts, so
the manifest records deterministic work counters (sweeps, iterations, point
counts) instead of wall-clock times.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .blowup import REGULAR_LABEL, eval_profile
from .core import FracParams, GridSpec, InvalidSpecError, build_grid
from .epi import probe_batch, reports_to_csv
from .freeboundary import (
    boundary_records,
    build_graph,
    classify_boundary_points,
    extract_free_boundary,
    graph_to_csv,
)
from .functionals import height_field, monotonicity_curve, radius_ladder
from .solver import (
    FarFieldModel,
    ObstacleScenario,
    SolverSettings,
    reduce_drift,
    solve_obstacle_extension,
)

S_RANGE_MESSAGE = "s must lie in (0.5, 1)"
SEED_MESSAGE = "seed is required when random probes are requested"
FAILURE_MARKER = "failure.json"


class ConfigError(ValueError):
    """Configuration rejected; .violations lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("configuration invalid:\n  " + "\n  ".join(self.violations))


# ---------------------------------------------------------------------------
# configuration schema


_OBSTACLE_KINDS = ("zero", "parabola")
_FAR_FIELD_KINDS = ("zero", "constant", "profile", "radial_profile")
_DRIFT_KINDS = ("constant", "gaussian")

_TOP_KEYS = (
    "s",
    "n",
    "seed",
    "grid",
    "obstacle",
    "far_field",
    "drift",
    "potential",
    "solver",
    "epi",
    "curves",
    "classify",
    "graph",
)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_keys(section: dict, allowed, prefix: str, out: list):
    for k in section:
        if k not in allowed:
            out.append(f"unknown key {prefix}{k!r}")


def _need_number(section, key, prefix, out, positive=False) -> Optional[float]:
    if key not in section:
        out.append(f"{prefix}{key} is required")
        return None
    val = section[key]
    if not _is_number(val):
        out.append(f"{prefix}{key} must be a number, got {type(val).__name__}")
        return None
    if positive and val <= 0:
        out.append(f"{prefix}{key} must be positive")
        return None
    return float(val)


def _need_int(section, key, prefix, out, minimum=None) -> Optional[int]:
    if key not in section:
        out.append(f"{prefix}{key} is required")
        return None
    val = section[key]
    if not _is_int(val):
        out.append(f"{prefix}{key} must be an integer, got {type(val).__name__}")
        return None
    if minimum is not None and val < minimum:
        out.append(f"{prefix}{key} must be at least {minimum}")
        return None
    return int(val)


def _validate_grid(raw, n, out) -> dict:
    allowed = ("x_bounds", "x_counts", "y_extent", "y_count", "q")
    _check_keys(raw, allowed, "grid.", out)
    cfg = {"q": 2.0}
    if "q" in raw:
        q = raw["q"]
        if not _is_number(q) or q < 1.0:
            out.append("grid.q must be a number >= 1")
        else:
            cfg["q"] = float(q)
    cfg["y_extent"] = _need_number(raw, "y_extent", "grid.", out, positive=True)
    cfg["y_count"] = _need_int(raw, "y_count", "grid.", out, minimum=3)
    for key in ("x_bounds", "x_counts"):
        if key not in raw:
            out.append(f"grid.{key} is required")
            cfg[key] = None
        elif not isinstance(raw[key], list):
            out.append(f"grid.{key} must be a list, got {type(raw[key]).__name__}")
            cfg[key] = None
        else:
            cfg[key] = raw[key]
    if cfg["x_bounds"] is not None and n is not None and len(cfg["x_bounds"]) != n:
        out.append(f"grid.x_bounds must have {n} entries for n = {n}")
    if cfg["x_bounds"] is not None:
        for i, b in enumerate(cfg["x_bounds"]):
            ok = (
                isinstance(b, list)
                and len(b) == 2
                and all(_is_number(t) for t in b)
                and b[0] < b[1]
            )
            if not ok:
                out.append(f"grid.x_bounds[{i}] must be [lo, hi] with lo < hi")
    if cfg["x_counts"] is not None:
        if n is not None and len(cfg["x_counts"]) != n:
            out.append(f"grid.x_counts must have {n} entries for n = {n}")
        for i, c in enumerate(cfg["x_counts"]):
            if not _is_int(c) or c < 3:
                out.append(f"grid.x_counts[{i}] must be an integer >= 3")
    return cfg


def _validate_obstacle(raw, out) -> dict:
    _check_keys(raw, ("kind", "height", "curvature"), "obstacle.", out)
    kind = raw.get("kind")
    if kind not in _OBSTACLE_KINDS:
        out.append(f"obstacle.kind must be one of {_OBSTACLE_KINDS}, got {kind!r}")
        return {"kind": "zero"}
    cfg = {"kind": kind}
    if kind == "parabola":
        cfg["height"] = _need_number(raw, "height", "obstacle.", out)
        cfg["curvature"] = _need_number(raw, "curvature", "obstacle.", out, positive=True)
    return cfg


def _validate_far_field(raw, n, out) -> dict:
    allowed = ("kind", "value", "amplitude", "direction", "radius")
    _check_keys(raw, allowed, "far_field.", out)
    kind = raw.get("kind")
    if kind not in _FAR_FIELD_KINDS:
        out.append(f"far_field.kind must be one of {_FAR_FIELD_KINDS}, got {kind!r}")
        return {"kind": "zero"}
    cfg = {"kind": kind}
    if kind == "constant":
        cfg["value"] = _need_number(raw, "value", "far_field.", out)
    elif kind == "profile":
        cfg["amplitude"] = _need_number(raw, "amplitude", "far_field.", out, positive=True)
        direction = raw.get("direction")
        if n == 1 and direction is None:
            direction = [1.0]
        ok = (
            isinstance(direction, list)
            and (n is None or len(direction) == n)
            and all(_is_number(t) for t in direction)
            and len(direction) > 0
            and np.linalg.norm(direction) > 0
        )
        if not ok:
            out.append(f"far_field.direction must be a list of {n or 'n'} numbers with nonzero norm")
        else:
            cfg["direction"] = [float(t) for t in direction]
    elif kind == "radial_profile":
        if n != 2:
            out.append("far_field.radial_profile needs n = 2")
        cfg["amplitude"] = _need_number(raw, "amplitude", "far_field.", out, positive=True)
        cfg["radius"] = _need_number(raw, "radius", "far_field.", out, positive=True)
    return cfg


def _validate_drift(raw, n, out) -> dict:
    _check_keys(raw, ("kind", "value", "amplitude", "width"), "drift.", out)
    if n is not None and n != 1:
        out.append("drift needs n = 1")
    kind = raw.get("kind")
    if kind not in _DRIFT_KINDS:
        out.append(f"drift.kind must be one of {_DRIFT_KINDS}, got {kind!r}")
        return {"kind": "constant", "value": 0.0}
    cfg = {"kind": kind}
    if kind == "constant":
        cfg["value"] = _need_number(raw, "value", "drift.", out)
    else:
        cfg["amplitude"] = _need_number(raw, "amplitude", "drift.", out)
        cfg["width"] = _need_number(raw, "width", "drift.", out, positive=True)
    return cfg


@dataclass
class ScenarioConfig:
    """Validated pipeline configuration; raw holds the JSON form with defaults."""

    raw: dict

    @property
    def s(self) -> float:
        return self.raw["s"]

    @property
    def n(self) -> int:
        return self.raw["n"]

    @property
    def seed(self) -> Optional[int]:
        return self.raw.get("seed")

    @property
    def params(self) -> FracParams:
        return FracParams(s=self.s, n=self.n)

    def to_json_text(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"


def validate_config(raw: dict) -> ScenarioConfig:
    """Schema check collecting every violation before rejecting."""
    out: list = []
    if not isinstance(raw, dict):
        raise ConfigError(["configuration must be a JSON object"])
    _check_keys(raw, _TOP_KEYS, "", out)

    cfg: dict = {}
    s = _need_number(raw, "s", "", out)
    if s is not None and not 0.5 < s < 1.0:
        out.append(S_RANGE_MESSAGE)
        s = None
    cfg["s"] = s
    n = _need_int(raw, "n", "", out)
    if n is not None and n not in (1, 2):
        out.append("n must be 1 or 2")
        n = None
    cfg["n"] = n

    if "seed" in raw:
        if not _is_int(raw["seed"]):
            out.append(f"seed must be an integer, got {type(raw['seed']).__name__}")
        else:
            cfg["seed"] = raw["seed"]

    for key, checker in (
        ("grid", lambda r: _validate_grid(r, n, out)),
        ("obstacle", lambda r: _validate_obstacle(r, out)),
        ("far_field", lambda r: _validate_far_field(r, n, out)),
    ):
        if key not in raw:
            out.append(f"{key} is required")
        elif not isinstance(raw[key], dict):
            out.append(f"{key} must be an object, got {type(raw[key]).__name__}")
        else:
            cfg[key] = checker(raw[key])

    if "drift" in raw:
        if not isinstance(raw["drift"], dict):
            out.append(f"drift must be an object, got {type(raw['drift']).__name__}")
        else:
            cfg["drift"] = _validate_drift(raw["drift"], n, out)
    if "potential" in raw:
        if not _is_number(raw["potential"]) or raw["potential"] < 0:
            out.append("potential must be a nonnegative number")
        else:
            cfg["potential"] = float(raw["potential"])

    solver = dict(raw.get("solver", {}))
    _check_keys(solver, ("omega", "tolerance", "max_sweeps", "kkt_tolerance"), "solver.", out)
    scfg = {"omega": 1.5, "tolerance": 1.0e-8, "max_sweeps": 100000, "kkt_tolerance": 5.0e-3}
    for key in ("omega", "tolerance", "kkt_tolerance"):
        if key in solver:
            val = solver[key]
            if not _is_number(val) or val <= 0:
                out.append(f"solver.{key} must be a positive number")
            else:
                scfg[key] = float(val)
    if "max_sweeps" in solver:
        if not _is_int(solver["max_sweeps"]) or solver["max_sweeps"] < 1:
            out.append("solver.max_sweeps must be a positive integer")
        else:
            scfg["max_sweeps"] = solver["max_sweeps"]
    if not 0.0 < scfg["omega"] < 2.0:
        out.append("solver.omega must lie in (0, 2)")
    cfg["solver"] = scfg

    epi = dict(raw.get("epi", {}))
    _check_keys(epi, ("probes", "delta", "n_theta", "n_radial"), "epi.", out)
    ecfg = {"probes": 0, "delta": 0.05, "n_theta": 256, "n_radial": 96}
    if "probes" in epi:
        got = _need_int(epi, "probes", "epi.", out, minimum=0)
        if got is not None:
            ecfg["probes"] = got
    if "delta" in epi:
        got = _need_number(epi, "delta", "epi.", out, positive=True)
        if got is not None:
            ecfg["delta"] = got
    for key in ("n_theta", "n_radial"):
        if key in epi:
            got = _need_int(epi, key, "epi.", out, minimum=8)
            if got is not None:
                ecfg[key] = got
    cfg["epi"] = ecfg
    if ecfg["probes"] > 0 and "seed" not in cfg:
        out.append(SEED_MESSAGE)
    if ecfg["probes"] > 0 and n == 2:
        out.append("epi.probes needs n = 1")

    curves = dict(raw.get("curves", {}))
    _check_keys(curves, ("x0", "ratio"), "curves.", out)
    ccfg = {"x0": None, "ratio": 1.1}
    if "ratio" in curves:
        got = _need_number(curves, "ratio", "curves.", out)
        if got is not None:
            if got <= 1.0:
                out.append("curves.ratio must exceed 1")
            else:
                ccfg["ratio"] = got
    if curves.get("x0") is not None:
        x0 = curves["x0"]
        if not (isinstance(x0, list) and n is not None and len(x0) == n and all(_is_number(t) for t in x0)):
            out.append(f"curves.x0 must be a list of {n or 'n'} numbers")
        else:
            ccfg["x0"] = [float(t) for t in x0]
    cfg["curves"] = ccfg

    classify = dict(raw.get("classify", {}))
    _check_keys(classify, ("max_points",), "classify.", out)
    kcfg = {"max_points": 8}
    if "max_points" in classify:
        got = _need_int(classify, "max_points", "classify.", out, minimum=1)
        if got is not None:
            kcfg["max_points"] = got
    cfg["classify"] = kcfg

    if "graph" in raw:
        graph = raw["graph"]
        if not isinstance(graph, dict):
            out.append(f"graph must be an object, got {type(graph).__name__}")
        else:
            _check_keys(graph, ("anchor", "window"), "graph.", out)
            if n is not None and n != 2:
                out.append("graph stage needs n = 2")
            gcfg = {}
            anchor = graph.get("anchor")
            if not (isinstance(anchor, list) and len(anchor) == 2 and all(_is_number(t) for t in anchor)):
                out.append("graph.anchor must be a list of 2 numbers")
            else:
                gcfg["anchor"] = [float(t) for t in anchor]
            if "window" in graph:
                got = _need_number(graph, "window", "graph.", out, positive=True)
                if got is not None:
                    gcfg["window"] = got
            cfg["graph"] = gcfg

    if out:
        raise ConfigError(out)
    return ScenarioConfig(raw=cfg)


def load_config(path) -> ScenarioConfig:
    """Read, parse, and validate a JSON configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
    return validate_config(raw)


# ---------------------------------------------------------------------------
# scenario construction


def _obstacle_callable(cfg: ScenarioConfig):
    ob = cfg.raw["obstacle"]
    if ob["kind"] == "zero":
        return lambda *axes: np.zeros_like(np.asarray(axes[0], dtype=float))
    height, curv = ob["height"], ob["curvature"]

    def parabola(*axes):
        rr = sum(np.asarray(ax) ** 2 for ax in axes)
        return height - curv * rr

    return parabola


def _far_field_model(cfg: ScenarioConfig) -> FarFieldModel:
    ff = cfg.raw["far_field"]
    params = cfg.params
    if ff["kind"] == "zero":
        return FarFieldModel(kind="zero")
    if ff["kind"] == "constant":
        return FarFieldModel(kind="constant", value=ff["value"])
    if ff["kind"] == "profile":
        e = np.asarray(ff["direction"], dtype=float)
        e = e / np.linalg.norm(e)
        amp = ff["amplitude"]

        def fn(*axes):
            pts = np.stack(np.broadcast_arrays(*axes), axis=-1)
            return eval_profile(amp, e, pts, params)

        return FarFieldModel(kind="closed_form", fn=fn)
    radius, amp = ff["radius"], ff["amplitude"]
    p1 = FracParams(s=params.s, n=1)

    def radial(x1, x2, y):
        x1, x2, y = np.broadcast_arrays(x1, x2, y)
        pts = np.stack([np.hypot(x1, x2) - radius, y], axis=-1)
        return eval_profile(amp, (1.0,), pts, p1)

    return FarFieldModel(kind="closed_form", fn=radial)


def _drift_callable(cfg: ScenarioConfig):
    drift = cfg.raw.get("drift")
    if drift is None:
        return None
    if drift["kind"] == "constant":
        return drift["value"]
    amp, width = drift["amplitude"], drift["width"]
    return lambda x: amp * np.exp(-((x / width) ** 2))


def build_scenario(cfg: ScenarioConfig) -> ObstacleScenario:
    """Turn a validated configuration into a runnable scenario."""
    grid = cfg.raw["grid"]
    spec = GridSpec(
        x_bounds=tuple(tuple(b) for b in grid["x_bounds"]),
        x_counts=tuple(grid["x_counts"]),
        y_extent=grid["y_extent"],
        y_count=grid["y_count"],
        q=grid["q"],
    )
    solver = cfg.raw["solver"]
    return ObstacleScenario(
        obstacle=_obstacle_callable(cfg),
        params=cfg.params,
        grid_spec=spec,
        far_field=_far_field_model(cfg),
        drift=_drift_callable(cfg),
        potential=cfg.raw.get("potential"),
        settings=SolverSettings(
            omega=solver["omega"],
            tolerance=solver["tolerance"],
            max_sweeps=solver["max_sweeps"],
            kkt_tolerance=solver["kkt_tolerance"],
        ),
    )


# ---------------------------------------------------------------------------
# artifacts


def _float_cell(x) -> str:
    return repr(float(x))


def solution_csv_text(axes, u, phi, mask, n: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if n == 1:
        writer.writerow(["x", "u", "phi", "contact"])
        for i, x in enumerate(axes[0]):
            writer.writerow([_float_cell(x), _float_cell(u[i]), _float_cell(phi[i]), int(mask[i])])
    else:
        writer.writerow(["x1", "x2", "u", "phi", "contact"])
        for i, x1 in enumerate(axes[0]):
            for j, x2 in enumerate(axes[1]):
                writer.writerow(
                    [
                        _float_cell(x1),
                        _float_cell(x2),
                        _float_cell(u[i, j]),
                        _float_cell(phi[i, j]),
                        int(mask[i, j]),
                    ]
                )
    return buf.getvalue()


def curve_csv_text(curve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = ["x0", "r", "F", "d"] + [f"phi_p{i+1}" for i in range(len(curve.ps))] + ["I", "WL"]
    writer.writerow(names)
    x0_str = ";".join(f"{c:.12g}" for c in np.atleast_1d(curve.x0))
    for k, r in enumerate(curve.radii):
        row = [x0_str, _float_cell(r), _float_cell(curve.F[k]), _float_cell(curve.d[k])]
        row += [_float_cell(curve.phi[p][k]) for p in curve.ps]
        row += [_float_cell(curve.I[k]), _float_cell(curve.WL[k])]
        writer.writerow(row)
    return buf.getvalue()


def _write_text(outdir, name, text) -> str:
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return name


def _write_json(outdir, name, payload) -> str:
    return _write_text(outdir, name, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _finite_or_report(name, arrays) -> Optional[dict]:
    for label, arr in arrays:
        arr = np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(arr)):
            return {
                "array": label,
                "stage": name,
                "n_nan": int(np.isnan(arr).sum()),
                "n_inf": int(np.isinf(arr).sum()),
                "shape": list(arr.shape),
            }
    return None


# ---------------------------------------------------------------------------
# the pipeline


@dataclass
class PipelineRun:
    """Mutable pipeline state shared between stages."""

    config: ScenarioConfig
    outdir: str
    threads: int
    stages: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    scenario: Optional[ObstacleScenario] = None
    effective_scenario: Optional[ObstacleScenario] = None
    result: object = None
    reduction: object = None
    fb: object = None
    curve: object = None
    graph: object = None

    def record(self, name, status, work=0, converged=True, detail=""):
        self.stages.append(
            {
                "stage": name,
                "status": status,
                "work": int(work),
                "converged": bool(converged),
                "detail": detail,
            }
        )

    def fail(self, name, exc) -> int:
        self.record(name, "failed", converged=False, detail=str(exc))
        _write_json(self.outdir, FAILURE_MARKER, {"stage": name, "error": str(exc)})
        self.write_manifest(exit_code=1)
        return 1

    def abort_nonfinite(self, name, report) -> int:
        self.record(name, "failed", converged=False, detail="non-finite values")
        _write_json(self.outdir, "diagnostics.json", report)
        _write_json(self.outdir, FAILURE_MARKER, {"stage": name, "error": "non-finite values"})
        self.write_manifest(exit_code=3)
        return 3

    def write_manifest(self, exit_code: int):
        import scipy

        manifest = {
            "inputs": self.config.raw,
            "versions": {
                "fracobs": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": ".".join(str(t) for t in sys.version_info[:3]),
            },
            "seed": self.config.seed,
            "threads": self.threads,
            "timings": {
                "unit": "work counters (sweeps, iterations, points); wall clock is not recorded so reruns are byte-identical",
                "stages": self.stages,
                "total_work": int(sum(st["work"] for st in self.stages)),
            },
            "artifacts": sorted(self.artifacts),
            "exit_code": exit_code,
        }
        _write_json(self.outdir, "manifest.json", manifest)


def _stage_solve(run: PipelineRun) -> Optional[int]:
    cfg = run.config
    run.scenario = build_scenario(cfg)
    if cfg.raw.get("drift") is not None:
        try:
            run.reduction = reduce_drift(run.scenario)
        except Exception as exc:
            return run.fail("reduce", exc)
        run.result = run.reduction.result
        run.record(
            "reduce",
            "ok",
            work=len(run.reduction.history),
            converged=run.reduction.converged,
            detail=f"{len(run.reduction.history)} corrector iterations",
        )
        effective = run.reduction.reduced
    else:
        run.record("reduce", "skipped", detail="no drift configured")
        try:
            run.result = solve_obstacle_extension(run.scenario)
        except Exception as exc:
            return run.fail("solve", exc)
        effective = run.scenario
    run.effective_scenario = effective
    res = run.result
    bad = _finite_or_report(
        "solve",
        [("u_trace", res.u_trace.values), ("v_ext", res.v_ext.values)],
    )
    if bad is not None:
        return run.abort_nonfinite("solve", bad)
    run.record(
        "solve",
        "ok",
        work=res.sweeps,
        converged=res.converged,
        detail=f"residual {res.residual:.3e}",
    )
    if run.reduction is not None:
        u_out = run.reduction.u_hat.values
        phi_out = res.phi_trace + run.reduction.w.values
    else:
        u_out = res.u_trace.values
        phi_out = res.phi_trace
    out = solution_csv_text(res.u_trace.x_axes, u_out, phi_out, res.contact_mask, cfg.n)
    run.artifacts.append(_write_text(run.outdir, "solution.csv", out))
    return None


def _stage_extract(run: PipelineRun) -> Optional[int]:
    try:
        run.fb = extract_free_boundary(run.result, run.effective_scenario)
    except Exception as exc:
        return run.fail("extract", exc)
    run.record("extract", "ok", work=len(run.fb.points), detail=f"{len(run.fb.points)} points")
    return None


def _curve_center(run: PipelineRun):
    x0 = run.config.raw["curves"]["x0"]
    if x0 is not None:
        return np.asarray(x0, dtype=float)
    if run.fb is None or len(run.fb.points) == 0:
        return None
    pts = np.atleast_2d(np.asarray(run.fb.points, dtype=float).reshape(len(run.fb.points), -1))
    return pts[np.argmin(np.linalg.norm(pts, axis=1))]


def _stage_curves(run: PipelineRun) -> Optional[int]:
    cfg = run.config
    if cfg.n == 2 and cfg.raw["obstacle"]["kind"] != "zero":
        run.record("curves", "skipped", detail="nonzero obstacle needs n = 1 height fields")
        return None
    x0 = _curve_center(run)
    if x0 is None:
        run.record("curves", "skipped", detail="no boundary point to center on")
        return None
    try:
        hf = height_field(run.result, run.effective_scenario, x0)
        radii = radius_ladder(run.result.grid, x0, ratio=cfg.raw["curves"]["ratio"])
        run.curve = monotonicity_curve(hf, radii)
    except Exception as exc:
        return run.fail("curves", exc)
    cols = [("F", run.curve.F), ("d", run.curve.d), ("I", run.curve.I), ("WL", run.curve.WL)]
    bad = _finite_or_report("curves", cols)
    if bad is not None:
        return run.abort_nonfinite("curves", bad)
    center = [float(t) for t in np.atleast_1d(x0)]
    run.record("curves", "ok", work=len(radii), detail=f"{len(radii)} radii about {center}")
    run.artifacts.append(_write_text(run.outdir, "curves.csv", curve_csv_text(run.curve)))
    return None


def _stage_classify(run: PipelineRun) -> Optional[int]:
    cfg = run.config
    if cfg.n == 2 and cfg.raw["obstacle"]["kind"] != "zero":
        run.record("classify", "skipped", detail="nonzero obstacle needs n = 1 height fields")
        return None
    if run.fb is None or len(run.fb.points) == 0:
        run.record("classify", "skipped", detail="no boundary points")
        return None
    m = len(run.fb.points)
    max_points = cfg.raw["classify"]["max_points"]
    gcfg = cfg.raw.get("graph")
    if gcfg is not None and cfg.n == 2:
        anchor = np.asarray(gcfg["anchor"], dtype=float)
        dist = np.linalg.norm(run.fb.points - anchor[None, :], axis=1)
        window = gcfg.get("window")
        pool = np.argsort(dist) if window is None else np.nonzero(dist <= window)[0]
        if window is not None:
            pool = pool[np.argsort(dist[pool])]
        pool = np.asarray(pool, dtype=int)
        if len(pool) > max_points:
            # keep the anchor's nearest point and spread the rest over the window
            spread = pool[np.linspace(0, len(pool) - 1, max_points).round().astype(int)]
            indices = np.unique(np.concatenate([[pool[0]], spread]))
        else:
            indices = pool
    else:
        indices = np.arange(m)
        if m > max_points:
            indices = indices[np.linspace(0, m - 1, max_points).round().astype(int)]
    try:
        classify_boundary_points(run.result, run.effective_scenario, run.fb, indices=indices)
    except Exception as exc:
        return run.fail("classify", exc)
    records = boundary_records(run.fb)
    run.record("classify", "ok", work=len(records), detail=f"{len(records)} points classified")
    run.artifacts.append(_write_json(run.outdir, "classifications.json", records))
    return None


def _stage_graph(run: PipelineRun) -> Optional[int]:
    gcfg = run.config.raw.get("graph")
    if gcfg is None:
        run.record("graph", "skipped", detail="no graph section configured")
        return None
    if run.fb is None or len(run.fb.points) == 0:
        run.record("graph", "skipped", detail="no boundary points")
        return None
    try:
        run.graph = build_graph(run.fb, gcfg["anchor"], window=gcfg.get("window"))
    except Exception as exc:
        return run.fail("graph", exc)
    run.record("graph", "ok", work=len(run.graph.xprime), detail=f"{len(run.graph.xprime)} samples")
    run.artifacts.append(_write_text(run.outdir, "graph.csv", graph_to_csv(run.graph)))
    payload = {
        "anchor": [float(t) for t in run.graph.anchor],
        "direction": [float(t) for t in run.graph.direction],
        "gamma": run.graph.gamma,
        "constant_field": run.graph.constant_field,
        "diagnostics": run.graph.diagnostics,
    }
    run.artifacts.append(_write_json(run.outdir, "graph_diagnostics.json", payload))
    return None


def _stage_epi(run: PipelineRun) -> Optional[int]:
    cfg = run.config
    ecfg = cfg.raw["epi"]
    if ecfg["probes"] < 1:
        run.record("epi", "skipped", detail="no probes requested")
        return None
    try:
        rows = probe_batch(
            FracParams(s=cfg.s, n=1),
            ecfg["probes"],
            ecfg["delta"],
            cfg.seed,
            n_theta=ecfg["n_theta"],
            n_radial=ecfg["n_radial"],
        )
    except Exception as exc:
        return run.fail("epi", exc)
    all_conv = all(row["converged"] for row in rows)
    run.record("epi", "ok", work=len(rows), converged=all_conv, detail=f"{len(rows)} probes")
    run.artifacts.append(_write_text(run.outdir, "epi.csv", reports_to_csv(rows)))
    return None


_SUBCOMMAND_STAGES = {
    "solve": ("solve",),
    "reduce": ("solve",),
    "curves": ("solve", "extract", "curves"),
    "classify": ("solve", "extract", "classify"),
    "graph": ("solve", "extract", "classify", "graph"),
    "epi": ("epi",),
    "all": ("solve", "extract", "curves", "classify", "graph", "epi"),
}

_STAGE_FUNCS = {
    "solve": _stage_solve,
    "extract": _stage_extract,
    "curves": _stage_curves,
    "classify": _stage_classify,
    "graph": _stage_graph,
    "epi": _stage_epi,
}


def run_pipeline(config: ScenarioConfig, outdir, stages=_SUBCOMMAND_STAGES["all"], threads: int = 1) -> int:
    """Run the requested stages, writing artifacts and manifest.json.

    Returns the process exit code: 0 only when every executed stage finished
    and converged; skipped stages do not block success.
    """
    os.makedirs(outdir, exist_ok=True)
    run = PipelineRun(config=config, outdir=outdir, threads=threads)
    for name in stages:
        code = _STAGE_FUNCS[name](run)
        if code is not None:
            return code
    ok = all(st["status"] != "failed" and st["converged"] for st in run.stages)
    exit_code = 0 if ok else 1
    if exit_code != 0:
        _write_json(outdir, FAILURE_MARKER, {"stage": "pipeline", "error": "a stage did not converge"})
    run.write_manifest(exit_code=exit_code)
    return exit_code


# ---------------------------------------------------------------------------
# entry point


def _resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("FRACOBS_THREADS", "")
    if env.strip().isdigit():
        return max(1, int(env))
    return 1


def _apply_threads(threads: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracobs",
        description="Fractional obstacle problem pipeline: solve, diagnostics, artifacts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the obstacle problem (with drift reduction when configured)"),
        ("reduce", "run the drift reduction fixed point (requires a drift section)"),
        ("curves", "solve plus frequency and energy curves at the configured center"),
        ("classify", "solve plus boundary point classification"),
        ("graph", "solve plus the rotated free boundary graph (n = 2)"),
        ("epi", "seeded perturbation energy probes (no solve needed)"),
        ("all", "every configured stage"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON configuration")
        p.add_argument("--out", required=True, help="output directory for artifacts")
        p.add_argument("--threads", type=int, default=None, help="worker thread cap (falls back to FRACOBS_THREADS, then 1)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw = dict(config.raw)
        raw["seed"] = args.seed
        config = ScenarioConfig(raw=raw)
    if args.command == "reduce" and config.raw.get("drift") is None:
        print("reduce needs a drift section in the configuration", file=sys.stderr)
        return 2
    if args.command == "epi" and config.raw["epi"]["probes"] < 1:
        print("epi needs epi.probes >= 1 in the configuration", file=sys.stderr)
        return 2
    if args.command == "graph" and config.raw.get("graph") is None:
        print("graph needs a graph section in the configuration", file=sys.stderr)
        return 2
    threads = _resolve_threads(args.threads)
    _apply_threads(threads)
    return run_pipeline(config, args.out, stages=_SUBCOMMAND_STAGES[args.command], threads=threads)


if __name__ == "__main__":
    sys.exit(main())
