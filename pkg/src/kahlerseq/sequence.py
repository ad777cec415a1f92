"""
The alternating connection sequence.

Starting from a metric connection ``G0`` (Levi-Civita, or the metric connection
with a prescribed seed torsion), each step keeps the symmetric part and makes
the connection preserve the two-form, then keeps the torsion and makes it
preserve the metric again::

    G0 -> G1 (same symmetric part, preserves omega)
       -> G2 (same torsion as G1, preserves g) -> G3 -> ...

Every point of the chart domain is processed independently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from kahlerseq.config import DEFAULT_TOLERANCES, TIER_AD, Tolerances
from kahlerseq.connections import (
    levi_civita,
    metric_connection_with_torsion,
    metric_preservation_residual,
    omega_connection_from_sym,
    omega_preservation_residual,
)
from kahlerseq.errors import KahlerSeqError, ParameterError, SequenceInvariantError
from kahlerseq.fields import ChartDomain, FieldJet, TensorFieldSpec, TorsionFieldSpec, eval_jet, eval_jets
from kahlerseq.tensors import (
    ConnectionCoeffs,
    max_abs,
    max_abs_distance,
    symmetric_part,
    torsion,
)
from kahlerseq.utils import map_points

logger = logging.getLogger(__name__)

PERIOD_CONFIRMED = "confirmed"
PERIOD_SUGGESTIVE = "suggestive"
PERIOD_NONE = "none"

VERDICT_TRIVIAL = "trivial"
VERDICT_PERIODIC = "periodic"
VERDICT_NONTRIVIAL = "nontrivial"
VERDICT_FAILED = "failed"

RULE_METRIC = "metric_preserved"
RULE_OMEGA = "omega_preserved"
RULE_SHARED_SYMMETRIC = "shared_symmetric_part"
RULE_SHARED_TORSION = "shared_torsion"
RULE_COLLAPSE = "collapse_inequality"

# Slack of the collapse inequality d(G1, G0) <= d(G2, G0).
COLLAPSE_SLACK = 1e-12


@dataclass(frozen=True)
class SequenceConfig:
    """
    Args:
        max_steps: Index of the last connection computed (at least 2).
        period_tol: Relative tolerance of periodicity and triviality.
        seed_torsion: Torsion of ``G0``; ``None`` starts from Levi-Civita.
        tolerances: Tolerance tiers of the invariant checks.
    """

    max_steps: int = 16
    period_tol: float = 1e-8
    seed_torsion: Optional[TorsionFieldSpec] = None
    tolerances: Tolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        if self.max_steps < 2:
            raise ParameterError(f"max_steps must be at least 2, got {self.max_steps}")
        if not self.period_tol > 0:
            raise ParameterError(f"period_tol must be positive, got {self.period_tol}")


@dataclass(frozen=True)
class InvariantRecord:
    """One residual check of the sequence at a given index."""

    step: int
    rule: str
    residual: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.residual <= self.tolerance


@dataclass(frozen=True)
class CollapseRecord:
    d1: float
    d2: float

    @property
    def holds(self) -> bool:
        return self.d1 <= self.d2 + COLLAPSE_SLACK * max(1.0, self.d2)


@dataclass
class PointSequence:
    """Trace of the sequence at one sample point."""

    index: int
    point: Tuple[float, ...]
    coeffs: List[ConnectionCoeffs] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    consecutive: List[float] = field(default_factory=list)
    tol_abs: float = 0.0
    period: Optional[Tuple[int, int]] = None
    period_status: str = PERIOD_NONE
    trivial: bool = False
    omega_residual_initial: Optional[float] = None
    collapse: Optional[CollapseRecord] = None
    invariants: List[InvariantRecord] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def verdict(self) -> str:
        if self.error is not None:
            return VERDICT_FAILED
        if self.trivial:
            return VERDICT_TRIVIAL
        if self.period_status == PERIOD_CONFIRMED:
            return VERDICT_PERIODIC
        return VERDICT_NONTRIVIAL

    @property
    def invariants_ok(self) -> bool:
        return all(record.ok for record in self.invariants)


@dataclass
class SequenceReport:
    """Per-point traces in sample order plus worst-point aggregates."""

    points: List[PointSequence]
    config: SequenceConfig
    tier: str = TIER_AD
    g_jets: Optional[FieldJet] = None
    w_jets: Optional[FieldJet] = None

    def jets_at(self, index: int) -> Optional[Tuple[FieldJet, FieldJet]]:
        """Metric and two-form jets of sample point ``index``, when the batch was evaluated."""
        if self.g_jets is None or self.w_jets is None:
            return None
        return self.g_jets[index], self.w_jets[index]

    @property
    def completed(self) -> List[PointSequence]:
        return [p for p in self.points if p.error is None]

    @property
    def all_trivial(self) -> bool:
        return bool(self.points) and all(p.trivial for p in self.points)

    @property
    def num_failed(self) -> int:
        return sum(p.error is not None for p in self.points)

    @property
    def all_failed(self) -> bool:
        return bool(self.points) and self.num_failed == len(self.points)

    @property
    def worst_d1(self) -> Optional[float]:
        values = [p.distances[1] for p in self.completed if len(p.distances) > 1]
        return max(values) if values else None

    @property
    def worst_invariant_residuals(self) -> dict:
        worst: dict = {}
        for p in self.completed:
            for record in p.invariants:
                worst[record.rule] = max(worst.get(record.rule, 0.0), record.residual)
        return dict(sorted(worst.items()))

    @property
    def collapse_holds(self) -> bool:
        return all(p.collapse is None or p.collapse.holds for p in self.completed)


def step_pair(
    gamma_even: ConnectionCoeffs,
    g_jet: FieldJet,
    w_jet: FieldJet,
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> Tuple[ConnectionCoeffs, ConnectionCoeffs]:
    """
    One double step: the omega-preserving connection with the symmetric part
    of ``gamma_even``, then the metric connection with that one's torsion.

    Raises:
        SequenceInvariantError: ``gamma_even`` does not preserve ``g``.
    """
    residual = metric_preservation_residual(gamma_even, g_jet).max_abs
    if residual > tol.step_precondition:
        raise SequenceInvariantError("input connection does not preserve the metric", residual)
    odd = omega_connection_from_sym(symmetric_part(gamma_even), w_jet, tol)
    even = metric_connection_with_torsion(torsion(odd), g_jet, tol)
    return odd, even


def _confirmed(coeff_list: Sequence[ConnectionCoeffs], p: int, q: int, tol_abs: float) -> bool:
    return all(
        max_abs_distance(coeff_list[m + q], coeff_list[m]) <= tol_abs
        for m in range(p, len(coeff_list) - q)
    )


def detect_period(
    coeff_list: Sequence[ConnectionCoeffs], tol_abs: float
) -> Optional[Tuple[int, int]]:
    """
    Smallest ``(preperiod, period)`` in lexicographic order such that every
    entry from the preperiod on repeats after one period.

    The tail after the preperiod must span two full periods and give at least
    two comparisons.

    Raises:
        ParameterError: Empty list or negative tolerance.
    """
    if not coeff_list:
        raise ParameterError("cannot detect a period in an empty sequence")
    if tol_abs < 0:
        raise ParameterError(f"tolerance must be nonnegative, got {tol_abs}")
    length = len(coeff_list)
    for p in range(length):
        for q in range(1, (length - p) // 2 + 1):
            if length - p - q < 2:
                continue
            if _confirmed(coeff_list, p, q, tol_abs):
                return p, q
    return None


def _suggestive_period(
    coeff_list: Sequence[ConnectionCoeffs], tol_abs: float
) -> Optional[Tuple[int, int]]:
    last = len(coeff_list) - 1
    for q in range(1, last + 1):
        if max_abs_distance(coeff_list[last], coeff_list[last - q]) <= tol_abs:
            return last - q, q
    return None


def _initial_connection(
    g_jet: FieldJet, point, cfg: SequenceConfig
) -> ConnectionCoeffs:
    if cfg.seed_torsion is None:
        return levi_civita(g_jet, cfg.tolerances)
    return metric_connection_with_torsion(cfg.seed_torsion.evaluate(point), g_jet, cfg.tolerances)


def _record_pair(
    trace: PointSequence,
    even: ConnectionCoeffs,
    odd: ConnectionCoeffs,
    next_even: Optional[ConnectionCoeffs],
    g_jet: FieldJet,
    w_jet: FieldJet,
    tol: Tolerances,
) -> None:
    m = len(trace.coeffs) - (2 if next_even is not None else 1)
    scale = max(1.0, max_abs(even), max_abs(odd))
    trace.invariants.append(
        InvariantRecord(m, RULE_OMEGA, omega_preservation_residual(odd, w_jet).max_abs, tol.sequence_residual)
    )
    trace.invariants.append(
        InvariantRecord(
            m,
            RULE_SHARED_SYMMETRIC,
            max_abs_distance(symmetric_part(even), symmetric_part(odd)),
            tol.sequence_shared * scale,
        )
    )
    if next_even is None:
        return
    trace.invariants.append(
        InvariantRecord(
            m + 1,
            RULE_METRIC,
            metric_preservation_residual(next_even, g_jet).max_abs,
            tol.sequence_residual,
        )
    )
    trace.invariants.append(
        InvariantRecord(
            m + 1,
            RULE_SHARED_TORSION,
            max_abs_distance(torsion(odd), torsion(next_even)),
            tol.sequence_shared * max(scale, max_abs(next_even)),
        )
    )


def run_point(
    index: int,
    point,
    g_field: TensorFieldSpec,
    w_field: TensorFieldSpec,
    cfg: SequenceConfig,
    jets: Optional[Tuple[FieldJet, FieldJet]] = None,
) -> PointSequence:
    """
    Build and analyse the sequence at one point; errors are recorded, not raised.

    ``jets`` holds precomputed metric and two-form jets at ``point``; they are
    evaluated here when absent.
    """
    trace = PointSequence(index=index, point=tuple(float(v) for v in point))
    tol = cfg.tolerances
    try:
        if jets is None:
            jets = eval_jet(g_field, point), eval_jet(w_field, point)
        g_jet, w_jet = jets
        gamma0 = _initial_connection(g_jet, point, cfg)
        trace.coeffs.append(gamma0)
        trace.invariants.append(
            InvariantRecord(0, RULE_METRIC, metric_preservation_residual(gamma0, g_jet).max_abs, tol.sequence_residual)
        )
        scale = max(1.0, max_abs(gamma0))
        trace.tol_abs = cfg.period_tol * scale
        trace.omega_residual_initial = omega_preservation_residual(gamma0, w_jet).max_abs

        while len(trace.coeffs) <= cfg.max_steps:
            even = trace.coeffs[-1]
            odd, next_even = step_pair(even, g_jet, w_jet, tol)
            trace.coeffs.append(odd)
            if len(trace.coeffs) <= cfg.max_steps:
                trace.coeffs.append(next_even)
            else:
                next_even = None
            _record_pair(trace, even, odd, next_even, g_jet, w_jet, tol)
            if len(trace.coeffs) >= 3 and detect_period(trace.coeffs, trace.tol_abs) is not None:
                break
    except (KahlerSeqError, RuntimeError, ValueError, ArithmeticError) as e:
        trace.error = f"{type(e).__name__}: {e}"
        logger.debug("point %d failed: %s", index, trace.error)
        return trace

    _summarize(trace, cfg)
    return trace


def _summarize(trace: PointSequence, cfg: SequenceConfig) -> None:
    coeffs = trace.coeffs
    gamma0 = coeffs[0]
    trace.distances = [max_abs_distance(c, gamma0) for c in coeffs]
    trace.consecutive = [max_abs_distance(coeffs[m], coeffs[m - 1]) for m in range(1, len(coeffs))]
    trace.trivial = trace.distances[1] <= trace.tol_abs

    period = detect_period(coeffs, trace.tol_abs)
    if trace.trivial:
        period = (0, 1)
    if period is not None:
        trace.period, trace.period_status = period, PERIOD_CONFIRMED
    else:
        trace.period = _suggestive_period(coeffs, trace.tol_abs)
        trace.period_status = PERIOD_SUGGESTIVE if trace.period is not None else PERIOD_NONE

    if len(coeffs) >= 3:
        trace.collapse = CollapseRecord(trace.distances[1], trace.distances[2])
        trace.invariants.append(
            InvariantRecord(
                2,
                RULE_COLLAPSE,
                max(0.0, trace.collapse.d1 - trace.collapse.d2),
                COLLAPSE_SLACK * max(1.0, trace.collapse.d2),
            )
        )

    if cfg.seed_torsion is None:
        preserves = trace.omega_residual_initial <= cfg.tolerances.step_precondition * max(
            1.0, max_abs(gamma0)
        )
        if preserves != trace.trivial:
            logger.warning(
                "point %d: triviality %s disagrees with the two-form residual %.3e of G0",
                trace.index,
                trace.trivial,
                trace.omega_residual_initial,
            )
    for record in trace.invariants:
        if not record.ok:
            logger.warning(
                "point %d step %d: %s residual %.3e above %.1e",
                trace.index,
                record.step,
                record.rule,
                record.residual,
                record.tolerance,
            )


def _batch_jets(field_spec: TensorFieldSpec, domain: ChartDomain) -> Optional[FieldJet]:
    try:
        return eval_jets(field_spec, domain.sample_points)
    except (KahlerSeqError, RuntimeError, ValueError, ArithmeticError) as e:
        logger.debug("batched jets unavailable, evaluating per point: %s", e)
        return None


def run_sequence(
    g_field: TensorFieldSpec,
    w_field: TensorFieldSpec,
    domain: ChartDomain,
    cfg: SequenceConfig = SequenceConfig(),
    workers: Optional[int] = None,
) -> SequenceReport:
    """Run the sequence at every sample point of ``domain``, in sample order."""
    points = list(domain.sample_points)
    report = SequenceReport(points=[], config=cfg)
    report.g_jets = _batch_jets(g_field, domain)
    if report.g_jets is not None:
        report.w_jets = _batch_jets(w_field, domain)
    traces = map_points(
        lambda item: run_point(item[0], item[1], g_field, w_field, cfg, report.jets_at(item[0])),
        list(enumerate(points)),
        workers,
    )
    report.points = traces
    logger.info(
        "sequence: %d points, %d trivial, %d failed",
        len(traces),
        sum(p.trivial for p in traces),
        report.num_failed,
    )
    return report
