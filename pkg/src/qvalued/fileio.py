"""JSON/CSV serialization for spaces, Q-points, functions, germs and reports.

All artifacts are JSON (CSV for tabular summaries); no binary formats, so
every file stays inspectable at desk scale.  Schema violations raise
:class:`~qvalued.errors.FormatError`, which the CLI maps to exit code 2.
Writers emit keys in sorted order so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from .diff import DiffVerdict, QuotientCurve, SampledQFunction
from .errors import FormatError
from .germs import AffineQGerm, Chart
from .qpoint import QPoint
from .space import PointCloudSpace
from .stepanov import StratificationReport

__all__ = [
    "load_space", "space_to_dict", "save_space",
    "load_qpoint", "save_qpoint",
    "load_function", "save_function",
    "germ_to_dict", "load_germ",
    "report_to_dict", "save_report_json", "save_report_csv",
    "stratification_to_dict", "save_stratification_json", "save_stratification_csv",
    "write_json",
]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise FormatError(msg)


def _load_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from None


def write_json(payload, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


# -- spaces ------------------------------------------------------------------

def space_from_dict(d) -> PointCloudSpace:
    _require(isinstance(d, dict), "space payload must be an object")
    weights = d.get("weights")
    if "points" in d:
        pts = d["points"]
        _require(isinstance(pts, list) and pts, "space 'points' must be a nonempty list")
        arr = np.asarray(pts, dtype=np.float64)
        _require(arr.ndim == 2, "space 'points' must be a list of coordinate vectors")
        if "dim" in d:
            _require(int(d["dim"]) == arr.shape[1], "space 'dim' disagrees with 'points'")
        return PointCloudSpace.from_points(arr, weights)
    if "distance_matrix" in d:
        mat = np.asarray(d["distance_matrix"], dtype=np.float64)
        _require(mat.ndim == 2 and mat.shape[0] == mat.shape[1],
                 "space 'distance_matrix' must be square")
        return PointCloudSpace.from_distance_matrix(mat, weights, dim=int(d.get("dim", 0)))
    raise FormatError("space payload needs 'points' or 'distance_matrix'")


def space_to_dict(space: PointCloudSpace) -> dict:
    out = {"dim": space.dim, "weights": space.weights.tolist()}
    if space.points is not None:
        out["points"] = space.points.tolist()
    else:
        out["distance_matrix"] = space.distance_matrix.tolist()
    return out


def load_space(path: str) -> PointCloudSpace:
    return space_from_dict(_load_json(path))


def save_space(space: PointCloudSpace, path: str) -> None:
    write_json(space_to_dict(space), path)


# -- Q-points ----------------------------------------------------------------

def load_qpoint(path: str) -> QPoint:
    d = _load_json(path)
    _require(isinstance(d, dict) and "points" in d, "Q-point payload needs 'points'")
    arr = np.asarray(d["points"], dtype=np.float64)
    _require(arr.ndim == 2 and arr.size > 0, "Q-point 'points' must be a (q, k) list")
    if "q" in d:
        _require(int(d["q"]) == arr.shape[0], "'q' disagrees with the number of points")
    if "k" in d:
        _require(int(d["k"]) == arr.shape[1], "'k' disagrees with the point dimension")
    return QPoint(arr)


def save_qpoint(p: QPoint, path: str) -> None:
    write_json({"q": p.q, "k": p.k, "points": p.points.tolist()}, path)


# -- functions ----------------------------------------------------------------

def load_function(path: str) -> SampledQFunction:
    d = _load_json(path)
    _require(isinstance(d, dict), "function payload must be an object")
    for key in ("space", "domain", "values"):
        _require(key in d, f"function payload needs '{key}'")
    spc = d["space"]
    if isinstance(spc, str):
        space = load_space(os.path.join(os.path.dirname(os.path.abspath(path)), spc))
    else:
        space = space_from_dict(spc)
    domain = np.asarray(d["domain"], dtype=np.int64)
    _require(domain.ndim == 1 and domain.size > 0, "function 'domain' must be a nonempty index list")
    values = np.asarray(d["values"], dtype=np.float64)
    _require(values.ndim == 3, "function 'values' must be a list of (q, k) tuples")
    _require(values.shape[0] == domain.size, "one value per domain index required")
    if "q" in d:
        _require(int(d["q"]) == values.shape[1], "'q' disagrees with the values")
    if "k" in d:
        _require(int(d["k"]) == values.shape[2], "'k' disagrees with the values")
    try:
        return SampledQFunction(space, domain, values)
    except Exception as exc:  # domain/space inconsistencies are format errors here
        raise FormatError(f"inconsistent function file: {exc}") from None


def save_function(f: SampledQFunction, path: str) -> None:
    payload = {
        "space": space_to_dict(f.space),
        "domain": f.domain.tolist(),
        "q": f.q,
        "k": f.k,
        "values": f.values.tolist(),
    }
    write_json(payload, path)


# -- germs ---------------------------------------------------------------------

def germ_to_dict(g: AffineQGerm) -> dict:
    return {
        "q": g.q,
        "k": g.k,
        "chart_dim": g.chart.chart_dim,
        "base_index": g.x,
        "p": g.p.tolist(),
        "l": g.l.tolist(),
        "groups": [list(grp) for grp in g.groups],
    }


def load_germ(d: dict, chart: Chart) -> AffineQGerm:
    _require(isinstance(d, dict), "germ payload must be an object")
    for key in ("base_index", "p", "l"):
        _require(key in d, f"germ payload needs '{key}'")
    p = np.asarray(d["p"], dtype=np.float64)
    l = np.asarray(d["l"], dtype=np.float64)
    groups = tuple(tuple(int(i) for i in grp) for grp in d.get(
        "groups", [[i] for i in range(p.shape[0])]))
    return AffineQGerm(chart, int(d["base_index"]), p, l, groups)


# -- differentiability reports --------------------------------------------------

def _curve_rows(curve: QuotientCurve | None):
    return None if curve is None else curve.rows()


def _finite(x: float):
    return x if math.isfinite(x) else None


def report_to_dict(verdicts: list[DiffVerdict], config: dict | None = None) -> dict:
    rows = []
    for v in verdicts:
        rows.append({
            "index": v.index,
            "in_af": v.in_af,
            "abgr_estimate": _finite(v.abgr_estimate),
            "abgr_curve": _curve_rows(v.abgr_curve),
            "residual_curve": _curve_rows(v.residual_curve),
            "differentiable": v.differentiable,
            "boundary": v.boundary,
            "germ": None if v.germ is None else germ_to_dict(v.germ),
            "error": v.error,
        })
    n_interior = sum(1 for v in verdicts if not v.boundary)
    n_diff = sum(1 for v in verdicts if v.differentiable and not v.boundary)
    summary = {
        "points": len(verdicts),
        "interior_points": n_interior,
        "interior_differentiable": n_diff,
        "interior_differentiable_pct": (100.0 * n_diff / n_interior) if n_interior else None,
        "in_af": sum(1 for v in verdicts if v.in_af),
    }
    return {"summary": summary, "verdicts": rows, "config": config or {}}


def save_report_json(verdicts: list[DiffVerdict], path: str, config: dict | None = None) -> None:
    write_json(report_to_dict(verdicts, config), path)


def save_report_csv(verdicts: list[DiffVerdict], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "in_af", "abgr_estimate", "differentiable", "boundary", "error"])
        for v in verdicts:
            w.writerow([v.index, v.in_af,
                        "" if not math.isfinite(v.abgr_estimate) else repr(v.abgr_estimate),
                        v.differentiable, v.boundary, v.error or ""])


# -- stratification reports ------------------------------------------------------

def stratification_to_dict(report: StratificationReport) -> dict:
    strata = []
    for s in report.strata:
        strata.append({
            "i": s.i,
            "j": s.j,
            "base_point": s.base_point.points.tolist(),
            "members": s.members.tolist(),
            "certificate": s.lip_certificate,
            "variant": s.variant,
        })
    return {
        "strata": strata,
        "union": report.union.tolist(),
        "direct_af": report.direct_af.tolist(),
        "uncovered": report.uncovered.tolist(),
        "config": report.config,
    }


def save_stratification_json(report: StratificationReport, path: str) -> None:
    write_json(stratification_to_dict(report), path)


def save_stratification_csv(report: StratificationReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "base_point", "n_members", "certificate", "six_i_bound"])
        for s in report.strata:
            w.writerow([s.i, s.j, json.dumps(s.base_point.points.tolist()),
                        int(s.members.size),
                        "" if s.lip_certificate is None else repr(s.lip_certificate),
                        6 * s.i])
