"""Versioned JSON artifacts: instances, scenario sets, solutions, results.

Every document carries ``format_version`` and ``kind``; floats serialize via
repr, so write-read round trips are exact. Writes go through a temp file and
rename, and key order is fixed, making artifact bytes a pure function of the
data.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Optional, Sequence

import numpy as np

from .instgen import QuadrantMap
from .model import Instance, RouteSet, Scenario, ScenarioSet
from .stochsolve import BoundEstimate, SaaReport

__all__ = [
    "FORMAT_VERSION",
    "ArtifactError",
    "write_document",
    "write_text",
    "read_document",
    "instance_to_doc",
    "instance_from_doc",
    "quadrants_to_doc",
    "quadrants_from_doc",
    "scenarios_to_doc",
    "scenarios_from_doc",
    "solution_to_doc",
    "solution_from_doc",
    "estimate_to_doc",
    "estimate_from_doc",
    "report_to_doc",
    "report_from_doc",
    "render_csv",
    "render_text",
    "CSV_HEADER",
]

FORMAT_VERSION = "fcmurp/1"

CSV_HEADER = "instance,EV,EEV,EEV_sd,LB,LB_sd,UB,UB_sd,H,H_sd,VSS,VSS_pct"


class ArtifactError(ValueError):
    """Missing or malformed artifact file."""


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".fcmurp-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_document(doc: dict, path: str) -> None:
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_text(text: str, path: str) -> None:
    """Atomic plain-text write, same temp-and-rename path as documents."""
    _atomic_write(path, text)


def read_document(path: str, kind: Optional[str] = None) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except FileNotFoundError:
        raise ArtifactError(f"artifact not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"artifact is not valid JSON: {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"artifact has unsupported format_version: {path}")
    if kind is not None and doc.get("kind") != kind:
        raise ArtifactError(
            f"artifact kind {doc.get('kind')!r} where {kind!r} expected: {path}"
        )
    return doc


def _matrix(arr: np.ndarray) -> list:
    return [[float(x) for x in row] for row in np.asarray(arr)]


def _from_matrix(rows: Sequence[Sequence[float]]) -> np.ndarray:
    return np.array(rows, dtype=float)


def instance_to_doc(instance: Instance) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "instance",
        "vertices": list(instance.vertices),
        "n_refuel": instance.n_refuel,
        "coordinates": _matrix(instance.coordinates),
        "cost": _matrix(instance.cost),
        "nominal_fuel": _matrix(instance.nominal_fuel),
        "vehicles": instance.vehicles,
        "fuel_capacity": float(instance.fuel_capacity),
        "lam": float(instance.lam),
        "grid": None if instance.grid is None else float(instance.grid),
        "metric": bool(instance.metric),
    }


def instance_from_doc(doc: dict) -> Instance:
    try:
        return Instance(
            vertices=tuple(doc["vertices"]),
            n_refuel=int(doc["n_refuel"]),
            coordinates=_from_matrix(doc["coordinates"]),
            cost=_from_matrix(doc["cost"]),
            nominal_fuel=_from_matrix(doc["nominal_fuel"]),
            vehicles=int(doc["vehicles"]),
            fuel_capacity=float(doc["fuel_capacity"]),
            lam=float(doc["lam"]),
            grid=None if doc.get("grid") is None else float(doc["grid"]),
            metric=bool(doc["metric"]),
        )
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"malformed instance document: {exc}") from None


def quadrants_to_doc(qmap: QuadrantMap) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "quadrants",
        "seed": qmap.seed,
        "grid": float(qmap.grid),
        "quadrant_labels": list(qmap.quadrant_labels),
        "vertex_labels": list(qmap.vertex_labels),
    }


def quadrants_from_doc(doc: dict) -> QuadrantMap:
    try:
        return QuadrantMap(
            seed=int(doc["seed"]),
            grid=float(doc["grid"]),
            quadrant_labels=tuple(doc["quadrant_labels"]),
            vertex_labels=tuple(str(q) for q in doc["vertex_labels"]),
        )
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"malformed quadrants document: {exc}") from None


def scenarios_to_doc(scenario_set: ScenarioSet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "scenario_set",
        "label": scenario_set.label,
        "scenarios": [
            {"id": s.id, "probability": float(s.probability), "fuel": _matrix(s.fuel)}
            for s in scenario_set
        ],
    }


def scenarios_from_doc(doc: dict) -> ScenarioSet:
    try:
        scenarios = tuple(
            Scenario(
                id=int(s["id"]),
                probability=float(s["probability"]),
                fuel=_from_matrix(s["fuel"]),
            )
            for s in doc["scenarios"]
        )
        return ScenarioSet(scenarios, label=str(doc["label"]))
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"malformed scenario document: {exc}") from None


def solution_to_doc(routes: RouteSet, meta: Optional[dict] = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "solution",
        "routes": [list(r) for r in routes.routes],
    }
    if meta:
        doc["meta"] = meta
    return doc


def solution_from_doc(doc: dict) -> tuple[RouteSet, dict]:
    try:
        routes = RouteSet(tuple(tuple(int(v) for v in r) for r in doc["routes"]))
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"malformed solution document: {exc}") from None
    return routes, doc.get("meta", {})


def estimate_to_doc(estimate: Optional[BoundEstimate]) -> Optional[dict]:
    if estimate is None:
        return None
    return {
        "mean": estimate.mean,
        "dispersion": estimate.dispersion,
        "standard_error": estimate.standard_error,
        "count": len(estimate.values),
        "values": list(estimate.values),
        "rigorous": estimate.rigorous,
        "label": estimate.label,
    }


def estimate_from_doc(doc: Optional[dict]) -> Optional[BoundEstimate]:
    if doc is None:
        return None
    try:
        return BoundEstimate(
            mean=float(doc["mean"]),
            dispersion=float(doc["dispersion"]),
            standard_error=float(doc["standard_error"]),
            values=tuple(float(v) for v in doc["values"]),
            rigorous=bool(doc["rigorous"]),
            label=str(doc["label"]),
        )
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"malformed estimate document: {exc}") from None


def report_to_doc(report: SaaReport) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "result",
        "instance_name": report.instance_name,
        "ev": report.ev,
        "ev_optimal": report.ev_optimal,
        "eev": estimate_to_doc(report.eev),
        "lb": estimate_to_doc(report.lb),
        "ub": estimate_to_doc(report.ub),
        "h": estimate_to_doc(report.h),
        "solution": [list(r) for r in report.solution.routes],
        "vss": report.vss,
        "vss_pct": report.vss_pct,
    }


def report_from_doc(doc: dict) -> SaaReport:
    try:
        return SaaReport(
            instance_name=str(doc["instance_name"]),
            ev=float(doc["ev"]),
            ev_optimal=bool(doc["ev_optimal"]),
            eev=estimate_from_doc(doc["eev"]),
            lb=estimate_from_doc(doc["lb"]),
            ub=estimate_from_doc(doc["ub"]),
            h=estimate_from_doc(doc["h"]),
            solution=RouteSet(tuple(tuple(int(v) for v in r) for r in doc["solution"])),
            vss=None if doc["vss"] is None else float(doc["vss"]),
            vss_pct=None if doc["vss_pct"] is None else float(doc["vss_pct"]),
        )
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"malformed result document: {exc}") from None


def _csv_cell(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


def render_csv(reports: Sequence[SaaReport]) -> str:
    """Machine-readable table; the _sd columns carry standard errors."""
    lines = [CSV_HEADER]
    for r in reports:
        cells = [
            r.instance_name,
            _csv_cell(r.ev),
            _csv_cell(None if r.eev is None else r.eev.mean),
            _csv_cell(None if r.eev is None else r.eev.standard_error),
            _csv_cell(None if r.lb is None else r.lb.mean),
            _csv_cell(None if r.lb is None else r.lb.standard_error),
            _csv_cell(None if r.ub is None else r.ub.mean),
            _csv_cell(None if r.ub is None else r.ub.standard_error),
            _csv_cell(None if r.h is None else r.h.mean),
            _csv_cell(None if r.h is None else r.h.standard_error),
            _csv_cell(r.vss),
            _csv_cell(r.vss_pct),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _text_cell(estimate: Optional[BoundEstimate]) -> str:
    if estimate is None:
        return "-"
    return f"{estimate.mean:.2f} ({estimate.dispersion:.2f})"


def render_text(reports: Sequence[SaaReport]) -> str:
    """Human table: mean with the dispersion statistic in parentheses."""
    header = ["instance", "EV", "EEV", "LB", "UB", "H", "VSS", "VSS%"]
    rows = [header]
    for r in reports:
        rows.append(
            [
                r.instance_name,
                f"{r.ev:.2f}",
                _text_cell(r.eev),
                _text_cell(r.lb),
                _text_cell(r.ub),
                _text_cell(r.h),
                "-" if r.vss is None else f"{r.vss:.2f}",
                "-" if r.vss_pct is None else f"{r.vss_pct:.2f}",
            ]
        )
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    out = []
    for row in rows:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    out.append("")
    out.append("values are 'mean (dispersion)'; dispersion is the squared-spread")
    out.append("statistic, standard error = sqrt(dispersion / count)")
    return "\n".join(out) + "\n"
