"""
Tests for the alternating connection sequence: the double step, period
detection, per-point traces and the report aggregates.
"""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import testing

from kahlerseq.config import DTYPE
from kahlerseq.connections import cyclic_torsion_form, levi_civita
from kahlerseq.errors import ParameterError, SequenceInvariantError
from kahlerseq.fields import ChartDomain, TorsionFieldSpec, eval_jet, exterior_derivative_from_jet
from kahlerseq.sequence import (
    PERIOD_CONFIRMED,
    PERIOD_NONE,
    RULE_COLLAPSE,
    RULE_METRIC,
    RULE_OMEGA,
    VERDICT_FAILED,
    VERDICT_TRIVIAL,
    CollapseRecord,
    PointSequence,
    SequenceConfig,
    _summarize,
    detect_period,
    run_point,
    run_sequence,
    step_pair,
)
from kahlerseq.tensors import as_connection, max_abs, max_abs_distance, torsion
from kahlerseq.zoo import builtin, catalog, perturbed
from tests.conftest import constant_jet, metric_field, random_connection, standard_twoform, twoform_field

TRIVIAL_ENTRIES = ["flat_standard", "flat_standard_4d", "fs_cp1", "fs_product_4d", "hyperbolic_area"]
NONTRIVIAL_ENTRIES = ["flat_varying_omega", "kodaira_thurston", "nonclosed_4d"]


def _constant(value, n=2):
    return as_connection(torch.full((n, n, n), float(value), dtype=DTYPE))


def _run(name, **config):
    spec = builtin(name).spec()
    return run_sequence(spec.metric, spec.omega, spec.domain, SequenceConfig(**config), workers=1)


class TestDetectPeriod:
    """
    Tests the search for the smallest (preperiod, period) pair.

    This suite verifies that:
    - Constant sequences have period 1 from the start.
    - Alternating sequences have period 2, after a preperiod if needed.
    - At least two comparisons are required before a period is accepted.
    - Entries within the tolerance count as equal.
    """

    @pytest.mark.parametrize(
        "values, expected",
        [
            ([0, 0, 0], (0, 1)),
            ([0, 1, 0, 1, 0], (0, 2)),
            ([2, 0, 1, 0, 1], (1, 2)),
            ([2, 0, 0, 0], (1, 1)),
            ([0, 1, 2, 3], None),
            ([0, 0], None),
            ([0], None),
            ([0, 1, 0, 1], (0, 2)),
        ],
    )
    def test_examples(self, values, expected):
        assert detect_period([_constant(v) for v in values], 0.0) == expected

    def test_tolerance(self):
        coeffs = [_constant(0.0), _constant(1e-9), _constant(-1e-9)]
        assert detect_period(coeffs, 1e-8) == (0, 1)
        assert detect_period(coeffs, 1e-10) is None

    def test_empty_sequence(self):
        with pytest.raises(ParameterError):
            detect_period([], 1e-8)

    def test_negative_tolerance(self):
        with pytest.raises(ParameterError):
            detect_period([_constant(0.0)], -1.0)


class TestStepPair:
    def test_flat_pair_stays_zero(self):
        g_jet = constant_jet(torch.eye(2, dtype=DTYPE))
        w_jet = constant_jet(standard_twoform(2), "antisymmetric")
        odd, even = step_pair(levi_civita(g_jet), g_jet, w_jet)
        assert max_abs(odd) <= 1e-15
        assert max_abs(even) <= 1e-15

    def test_kahler_point_is_fixed(self):
        spec = builtin("fs_cp1").spec()
        p = [0.3, -0.6]
        g_jet, w_jet = spec.metric_jet(p), spec.omega_jet(p)
        lc = levi_civita(g_jet)
        odd, even = step_pair(lc, g_jet, w_jet)
        assert max_abs_distance(odd, lc) <= 1e-12
        assert max_abs_distance(even, lc) <= 1e-12

    def test_shares_torsion(self):
        spec = builtin("kodaira_thurston").spec()
        p = spec.domain.sample_points[7]
        g_jet, w_jet = spec.metric_jet(p), spec.omega_jet(p)
        odd, even = step_pair(levi_civita(g_jet), g_jet, w_jet)
        assert max_abs_distance(torsion(odd), torsion(even)) <= 1e-10 * max(1.0, max_abs(odd))

    def test_requires_metric_connection(self, gen):
        g_jet = constant_jet(torch.eye(2, dtype=DTYPE))
        w_jet = constant_jet(standard_twoform(2), "antisymmetric")
        with pytest.raises(SequenceInvariantError) as excinfo:
            step_pair(random_connection(2, gen), g_jet, w_jet)
        assert excinfo.value.residual > 1e-8


class TestSequenceConfig:
    @pytest.mark.parametrize("kwargs", [{"max_steps": 1}, {"period_tol": 0.0}, {"period_tol": -1e-8}])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            SequenceConfig(**kwargs)


class TestRunSequence:
    """
    Tests complete sequence runs on built-in entries.

    This suite verifies that:
    - Kähler entries are trivial with a confirmed period of 1 after one double step.
    - The flat plane with a varying area form gives the hand-computed first connections.
    - The collapse inequality holds at every point.
    - Failing points are recorded without stopping the run.
    - Jets are evaluated once for the whole domain and shared with the points.
    - Results do not depend on the number of workers.
    """

    @pytest.mark.parametrize("name", TRIVIAL_ENTRIES)
    def test_trivial_entries(self, name):
        report = _run(name)
        assert report.all_trivial
        assert report.num_failed == 0
        for trace in report.points:
            assert trace.verdict == VERDICT_TRIVIAL
            assert trace.period == (0, 1)
            assert trace.period_status == PERIOD_CONFIRMED
            assert len(trace.coeffs) == 3
            assert trace.invariants_ok
            assert trace.collapse.holds
        assert report.worst_d1 <= 1e-8

    def test_flat_varying_omega_by_hand(self):
        report = _run("flat_varying_omega", max_steps=4)
        gamma1 = torch.zeros(2, 2, 2, dtype=DTYPE)
        gamma1[1, 0, 1] = 1.0
        gamma1[1, 1, 0] = -1.0
        gamma2 = torch.zeros(2, 2, 2, dtype=DTYPE)
        gamma2[1, 1, 0] = -2.0
        gamma2[0, 1, 1] = 2.0
        assert not report.all_trivial
        for trace in report.points:
            assert len(trace.coeffs) == 5
            assert max_abs(trace.coeffs[0]) == 0.0
            testing.assert_close(trace.coeffs[1].gamma, gamma1)
            testing.assert_close(trace.coeffs[2].gamma, gamma2)
            assert trace.distances[1] == pytest.approx(1.0)
            assert trace.distances[2] == pytest.approx(2.0)
            assert not trace.trivial
            assert trace.omega_residual_initial == pytest.approx(math.exp(trace.point[0]))
            assert trace.invariants_ok
        assert report.worst_d1 == pytest.approx(1.0)

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["kodaira_thurston", "nonclosed_4d"])
    def test_nontrivial_entries(self, name):
        report = _run(name, max_steps=6)
        assert report.num_failed == 0
        assert not report.all_trivial
        assert report.collapse_holds
        assert all(trace.distances[1] > trace.tol_abs for trace in report.points)

    def test_invariant_records(self):
        report = _run("flat_varying_omega", max_steps=4)
        trace = report.points[0]
        rules = [(record.step, record.rule) for record in trace.invariants]
        assert rules[0] == (0, RULE_METRIC)
        assert (1, RULE_OMEGA) in rules
        assert (2, RULE_COLLAPSE) in rules
        assert (2, RULE_METRIC) in rules
        assert set(report.worst_invariant_residuals) == {
            "collapse_inequality",
            "metric_preserved",
            "omega_preserved",
            "shared_symmetric_part",
            "shared_torsion",
        }

    def test_seed_torsion(self):
        spec = builtin("flat_standard").spec()
        seed = TorsionFieldSpec.from_strings(2, {"1,1,2": "0.5"})
        report = run_sequence(spec.metric, spec.omega, spec.domain, SequenceConfig(seed_torsion=seed, max_steps=4))
        for trace in report.points:
            assert trace.error is None
            testing.assert_close(torsion(trace.coeffs[0]).t, seed.evaluate(trace.point).t)
            assert trace.invariants[0].ok
            assert trace.collapse.holds

    def test_failed_point_is_recorded(self):
        g = metric_field(2, {"1,1": "sqrt(x1)", "2,2": "1"})
        w = twoform_field(2, {"1,2": "1"})
        domain = ChartDomain.from_points([[-1.0, 1.0], [-1.0, 1.0]], [[-1.0, 0.0], [1.0, 0.0]])
        report = run_sequence(g, w, domain, SequenceConfig(max_steps=4), workers=1)
        failed, ok = report.points
        assert failed.verdict == VERDICT_FAILED
        assert "EvalError" in failed.error
        assert ok.error is None
        assert report.num_failed == 1
        assert not report.all_failed
        assert len(report.completed) == 1
        assert report.completed[0] is ok
        assert report.g_jets is None
        assert report.jets_at(1) is None

    def test_all_points_failed(self):
        g = metric_field(2, {"1,1": "log(x1)", "2,2": "1"})
        w = twoform_field(2, {"1,2": "1"})
        domain = ChartDomain.from_points([[-1.0, 1.0], [-1.0, 1.0]], [[-1.0, 0.0], [0.0, 0.0]])
        report = run_sequence(g, w, domain, workers=1)
        assert report.all_failed
        assert report.worst_d1 is None

    def test_independent_of_worker_count(self):
        spec = builtin("flat_varying_omega").spec()
        cfg = SequenceConfig(max_steps=4)
        serial = run_sequence(spec.metric, spec.omega, spec.domain, cfg, workers=1)
        threaded = run_sequence(spec.metric, spec.omega, spec.domain, cfg, workers=3)
        assert [t.index for t in threaded.points] == list(range(spec.domain.num_points))
        for a, b in zip(serial.points, threaded.points):
            assert a.point == b.point
            assert a.distances == b.distances
            assert a.verdict == b.verdict

    def test_run_point_matches_report(self):
        spec = builtin("fs_cp1").spec()
        cfg = SequenceConfig()
        trace = run_point(3, spec.domain.sample_points[3], spec.metric, spec.omega, cfg)
        report = run_sequence(spec.metric, spec.omega, spec.domain, cfg, workers=1)
        assert trace.distances == report.points[3].distances

    def test_batched_jets(self):
        spec = builtin("fs_cp1").spec()
        report = run_sequence(spec.metric, spec.omega, spec.domain, SequenceConfig(max_steps=2), workers=1)
        assert report.g_jets.shape == (spec.domain.num_points,)
        assert report.w_jets.shape == (spec.domain.num_points,)
        g_jet, w_jet = report.jets_at(4)
        p = spec.domain.sample_points[4]
        testing.assert_close(g_jet.value, eval_jet(spec.metric, p).value)
        testing.assert_close(w_jet.partials, eval_jet(spec.omega, p).partials)

    def test_run_point_with_given_jets(self):
        spec = builtin("flat_varying_omega").spec()
        cfg = SequenceConfig(max_steps=4)
        report = run_sequence(spec.metric, spec.omega, spec.domain, cfg, workers=1)
        p = spec.domain.sample_points[2]
        trace = run_point(2, p, spec.metric, spec.omega, cfg, jets=report.jets_at(2))
        assert trace.distances == report.points[2].distances
        assert trace.distances == run_point(2, p, spec.metric, spec.omega, cfg).distances


class TestCollapse:
    @pytest.mark.parametrize(
        "d1, d2, holds",
        [(1.0, 2.0, True), (2.0, 2.0, True), (2.0 + 1e-13, 2.0, True), (2.1, 2.0, False), (1e-13, 0.0, True)],
    )
    def test_record(self, d1, d2, holds):
        assert CollapseRecord(d1, d2).holds is holds

    @pytest.mark.slow
    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1))
    def test_holds_on_perturbed_pairs(self, seed):
        spec = perturbed(seed).spec()
        report = run_sequence(spec.metric, spec.omega, spec.domain, SequenceConfig(max_steps=2), workers=1)
        assert report.num_failed == 0
        for trace in report.points:
            assert trace.collapse.d1 <= trace.collapse.d2 + 1e-12

    def test_holds_on_nonclosed_entry(self):
        spec = builtin("nonclosed_4d").spec()
        for p in spec.domain.sample_points[::10]:
            g_jet, w_jet = eval_jet(spec.metric, p), eval_jet(spec.omega, p)
            gamma0 = levi_civita(g_jet)
            odd, even = step_pair(gamma0, g_jet, w_jet)
            assert max_abs_distance(odd, gamma0) <= max_abs_distance(even, gamma0) + 1e-12

    def test_violation_is_a_failed_invariant(self):
        trace = PointSequence(
            index=0,
            point=(0.0, 0.0),
            coeffs=[_constant(0.0), _constant(2.0), _constant(1.0)],
            tol_abs=1e-8,
            omega_residual_initial=0.0,
        )
        _summarize(trace, SequenceConfig())
        assert not trace.collapse.holds
        record = next(r for r in trace.invariants if r.rule == RULE_COLLAPSE)
        assert (record.step, record.residual) == (2, 1.0)
        assert not record.ok
        assert not trace.invariants_ok
        assert trace.period_status == PERIOD_NONE

    @pytest.mark.parametrize("name", ["flat_standard", "flat_varying_omega"])
    def test_recorded_with_the_invariants(self, name):
        for trace in _run(name, max_steps=4).points:
            record = next(r for r in trace.invariants if r.rule == RULE_COLLAPSE)
            assert record.ok is trace.collapse.holds is True


class TestCatalogTraces:
    """
    Tests hand-derived values and identities on the traces of the built-in entries.

    This suite verifies that:
    - On nonclosed_4d the first connection has torsion of size 1 whose cyclic sum is d omega.
    - The first two distances of nonclosed_4d and of the x = 0 slice of kodaira_thurston are 1/2 and 1.
    - Trivial entries give a torsion-free first connection.
    - No entry is reported as alternating with period (0, 2) at a tight tolerance.
    """

    def test_nonclosed_first_steps(self):
        spec = builtin("nonclosed_4d").spec()
        for trace in _run("nonclosed_4d", max_steps=2).points:
            dw = exterior_derivative_from_jet(spec.omega_jet(trace.point))
            assert max_abs(dw) == pytest.approx(1.0)
            w_value = spec.omega_jet(trace.point).value
            assert max_abs_distance(cyclic_torsion_form(trace.coeffs[1], w_value), dw) <= 1e-9
            assert max_abs(torsion(trace.coeffs[1])) == pytest.approx(1.0, abs=1e-12)
            # flat metric: gamma1 has entries +-1/2 and +-x1/2, gamma2 is the contorsion with entries +-1
            assert trace.distances[1] == pytest.approx(0.5, abs=1e-12)
            assert trace.distances[2] == pytest.approx(1.0, abs=1e-12)
            assert not trace.trivial

    def test_kodaira_thurston_slice(self):
        report = _run("kodaira_thurston", max_steps=2)
        traces = [trace for trace in report.points if abs(trace.point[0]) < 1e-12]
        assert len(traces) == 27
        for trace in traces:
            assert trace.distances[1] == pytest.approx(0.5, abs=1e-12)
            assert trace.distances[2] == pytest.approx(1.0, abs=1e-12)
            assert max_abs(torsion(trace.coeffs[1])) == pytest.approx(1.0, abs=1e-12)
        assert not any(trace.trivial for trace in report.points)
        assert report.collapse_holds

    @pytest.mark.parametrize("name", TRIVIAL_ENTRIES)
    def test_trivial_first_step_is_torsion_free(self, name):
        for trace in _run(name, max_steps=2).points:
            assert max_abs(torsion(trace.coeffs[1])) <= 1e-9

    @pytest.mark.parametrize(
        "name",
        [
            name if builtin(name).spec().dim == 2 else pytest.param(name, marks=pytest.mark.slow)
            for name in catalog()
        ],
    )
    def test_no_alternation_at_tight_tolerance(self, name):
        report = _run(name, period_tol=1e-10)
        assert report.num_failed == 0
        assert all(trace.period != (0, 2) for trace in report.points)
