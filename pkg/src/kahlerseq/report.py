"""
Run reports, schema ``ksq/1``.

Reports are plain JSON-compatible dicts built in a fixed key order so that
identical inputs give byte-identical output. Floats are written by ``json``
with their shortest round-trip representation. Every numeric block is an
object carrying a ``tier`` label: ``exact`` (array identities and inputs),
``ad`` (built from forward-mode jets) or ``fd`` (built from finite differences).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from typing import Any, Dict, List, Optional

from torch import Tensor

from kahlerseq import __version__
from kahlerseq.config import TIER_AD, TIER_EXACT, Tolerances
from kahlerseq.fields import ManifoldSpec
from kahlerseq.gromov import CertifyReport, FrameCheck, GromovFrame
from kahlerseq.sequence import PointSequence, SequenceConfig, SequenceReport
from kahlerseq.tensors import max_abs, torsion

SCHEMA = "ksq/1"

CONVENTIONS = {
    "index_order": "gamma[k][i][j] is the k-th component of the derivative of the j-th coordinate field along the i-th",
    "exterior_derivative": "(d omega)[i][j][k] = d_i omega_jk + d_j omega_ki + d_k omega_ij, no 1/3 factor",
    "closed_form_lowering": "W[a][b][c] = sum_m omega[a][m] gamma[m][b][c] for the connection and its symmetric part",
    "period_tolerance": "relative: period_tol * max(1, max|G0|) per point",
    "collapse_check": "d(G1, G0) <= d(G2, G0)",
    "float_format": "shortest round-trip repr, lossless for float64 (at most 17 significant digits)",
}


def spec_digest(document: Dict[str, Any]) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _floats(values) -> List[float]:
    return [float(v) for v in values]


def matrix(t: Tensor) -> List[List[float]]:
    """Row-major nested lists."""
    return [[float(v) for v in row] for row in t.tolist()]


def _header(command: str, spec: ManifoldSpec) -> Dict[str, Any]:
    return {
        "schema": SCHEMA,
        "tool": {"name": "kahlerseq", "version": __version__},
        "command": command,
        "spec": {
            "name": spec.name,
            "digest": spec_digest(spec.document),
            "dim": spec.dim,
            "num_points": spec.domain.num_points,
        },
    }


def _tolerances(tol: Tolerances) -> Dict[str, Any]:
    return {
        "tier": TIER_EXACT,
        "exact": tol.exact,
        "ad": tol.ad,
        "fd": tol.fd,
        "sequence_residual": tol.sequence_residual,
        "sequence_shared": tol.sequence_shared,
        "step_precondition": tol.step_precondition,
    }


def _sequence_config(cfg: SequenceConfig) -> Dict[str, Any]:
    return {
        "tier": TIER_EXACT,
        "max_steps": cfg.max_steps,
        "period_tol": cfg.period_tol,
        "seed_torsion": cfg.seed_torsion is not None,
        "tolerances": _tolerances(cfg.tolerances),
    }


def _point_block(point) -> Dict[str, Any]:
    return {"tier": TIER_EXACT, "coordinates": _floats(point)}


def sequence_point_record(trace: PointSequence) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "index": trace.index,
        "point": _point_block(trace.point),
        "verdict": trace.verdict,
    }
    if trace.error is not None:
        record["error"] = trace.error
        return record
    record["trivial"] = trace.trivial
    record["distances"] = {
        "tier": TIER_AD,
        "tol_abs": trace.tol_abs,
        "to_initial": trace.distances,
        "consecutive": trace.consecutive,
    }
    record["period"] = {
        "tier": TIER_AD,
        "status": trace.period_status,
        "preperiod": trace.period[0] if trace.period else None,
        "period": trace.period[1] if trace.period else None,
    }
    record["initial_omega_residual"] = {"tier": TIER_AD, "max_abs": trace.omega_residual_initial}
    record["torsion_g1"] = {
        "tier": TIER_AD,
        "max_abs": max_abs(torsion(trace.coeffs[1])) if len(trace.coeffs) > 1 else None,
    }
    if trace.collapse is not None:
        record["collapse"] = {
            "tier": TIER_AD,
            "d1": trace.collapse.d1,
            "d2": trace.collapse.d2,
            "holds": trace.collapse.holds,
        }
    record["invariants"] = {
        "tier": TIER_AD,
        "all_ok": trace.invariants_ok,
        "records": [
            {
                "step": r.step,
                "rule": r.rule,
                "residual": r.residual,
                "tolerance": r.tolerance,
                "ok": r.ok,
            }
            for r in trace.invariants
        ],
    }
    return record


def _sequence_summary(report: SequenceReport) -> Dict[str, Any]:
    return {
        "tier": TIER_AD,
        "num_points": len(report.points),
        "num_trivial": sum(p.trivial for p in report.points),
        "num_failed": report.num_failed,
        "all_trivial": report.all_trivial,
        "worst_d1": report.worst_d1,
        "collapse_holds": report.collapse_holds,
        "worst_invariant_residuals": report.worst_invariant_residuals,
    }


def _finish(report: Dict[str, Any], wall_time: Optional[float]) -> Dict[str, Any]:
    if wall_time is not None:
        report["wall_time"] = {"tier": TIER_EXACT, "seconds": wall_time}
    return report


def sequence_report(
    spec: ManifoldSpec, report: SequenceReport, wall_time: Optional[float] = None
) -> Dict[str, Any]:
    out = _header("sequence", spec)
    out["config"] = _sequence_config(report.config)
    out["conventions"] = CONVENTIONS
    out["points"] = [sequence_point_record(p) for p in report.points]
    out["summary"] = _sequence_summary(report)
    return _finish(out, wall_time)


def certify_report(
    spec: ManifoldSpec, report: CertifyReport, wall_time: Optional[float] = None
) -> Dict[str, Any]:
    out = _header("certify", spec)
    out["config"] = {
        "tier": TIER_EXACT,
        "fd_step": report.fd_step,
        "sequence": _sequence_config(report.config.sequence),
        "tolerances": _tolerances(report.config.tolerances),
    }
    out["conventions"] = CONVENTIONS
    points = []
    for verdict, trace in zip(report.points, report.sequence.points):
        record: Dict[str, Any] = {
            "index": verdict.index,
            "point": _point_block(verdict.point),
            "verdict": verdict.verdict,
            "trivial": verdict.trivial,
            "residuals": {
                name: {
                    "tier": r.tier,
                    "value": r.value,
                    "tolerance": r.tolerance,
                    "ok": r.ok,
                }
                for name, r in verdict.residuals.items()
            },
        }
        if trace.error is None:
            record["sequence"] = {
                "tier": TIER_AD,
                "d1": trace.distances[1] if len(trace.distances) > 1 else None,
                "period_status": trace.period_status,
            }
        if verdict.error is not None:
            record["error"] = verdict.error
        points.append(record)
    out["points"] = points
    counts: Dict[str, int] = {}
    for verdict in report.points:
        counts[verdict.verdict] = counts.get(verdict.verdict, 0) + 1
    out["summary"] = {
        "tier": TIER_EXACT,
        "verdicts": dict(sorted(counts.items())),
        "all_certified": report.all_certified,
        "worst": _worst_residuals(report),
    }
    return _finish(out, wall_time)


def _worst_residuals(report: CertifyReport) -> Dict[str, Any]:
    tiers = {}
    for verdict in report.points:
        for name, r in verdict.residuals.items():
            tiers.setdefault(name, r.tier)
    return {name: {"tier": tiers[name], "value": value} for name, value in report.worst().items()}


def gromov_report(
    spec: ManifoldSpec, point, frame: GromovFrame, check: FrameCheck
) -> Dict[str, Any]:
    out = _header("gromov", spec)
    out["point"] = _point_block(point)
    out["conventions"] = CONVENTIONS
    out["frame"] = {
        "tier": TIER_EXACT,
        "A": matrix(frame.A),
        "B": matrix(frame.B),
        "J": matrix(frame.J),
        "g_herm": matrix(frame.g_herm),
    }
    out["residuals"] = {"tier": TIER_EXACT, **check.residuals}
    out["positivity"] = {"tier": TIER_EXACT, **check.positivity}
    return out


def validate_report(spec: ManifoldSpec, problems: List[str]) -> Dict[str, Any]:
    out = _header("validate", spec)
    out["valid"] = not problems
    out["problems"] = problems
    return out


def dumps(report: Dict[str, Any]) -> str:
    return json.dumps(report, indent=2) + "\n"


def sequence_csv(report: SequenceReport) -> str:
    """One row per point and sequence index: distance to G0 and to the previous entry."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    dim = len(report.points[0].point) if report.points else 0
    writer.writerow(
        ["index", *[f"x{i + 1}" for i in range(dim)], "step", "distance_to_initial", "distance_to_previous"]
    )
    for trace in report.points:
        for m, d in enumerate(trace.distances):
            previous = trace.consecutive[m - 1] if m > 0 else 0.0
            writer.writerow([trace.index, *map(repr, trace.point), m, repr(d), repr(previous)])
    return buffer.getvalue()


def certify_csv(report: CertifyReport) -> str:
    """One row per point with every residual of the certification."""
    names = list(report.worst())
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    dim = len(report.points[0].point) if report.points else 0
    writer.writerow(["index", *[f"x{i + 1}" for i in range(dim)], "verdict", *names])
    for verdict in report.points:
        values = [
            repr(verdict.residuals[n].value) if n in verdict.residuals else "" for n in names
        ]
        writer.writerow([verdict.index, *map(repr, verdict.point), verdict.verdict, *values])
    return buffer.getvalue()
