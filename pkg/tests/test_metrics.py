import pytest
import numpy as np
import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from errors import ArgumentError, ResourceLimitError
from metrics import (STATUS_PASS, STATUS_UNMET, bound_checks, collect_series, constraint_variation,
                     default_dual_cap, drift_check, dual_variation, dynamic_fit, dynamic_regret,
                     gap_bound, lambda_bound, minimizer_variation, optimality_gap, problem_constants,
                     queue_norms, regret_bound_rhs, restart_gap_bound, static_regret, trace_series)
from oco_core import RoundTrace, run_mosp
from oracles import AffineConstraint, FeasibleBox, GeneralConstraint, QuadraticLoss, StepsizePair


BOX = FeasibleBox([0.0], [10.0])


def _scalar(offsets):
    # f_t(x) = x^2, g_t(x) = b_t - x
    return [(QuadraticLoss([1.0]), AffineConstraint([[-1.0]], [b])) for b in offsets]


def _round(lam, lam_next, g):
    lam, lam_next, g = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (lam, lam_next, g))
    return RoundTrace(t=1, x=np.zeros(1), lam=lam, lam_next=lam_next, loss=0.0, constraint=g,
                      drift=0.5 * (lam_next @ lam_next - lam @ lam))


def test_dynamic_regret_is_cumulative():
    assert np.array_equal(dynamic_regret([3.0, 4.0], [1.0, 1.0]), [2.0, 5.0])
    with pytest.raises(ArgumentError):
        dynamic_regret([1.0], [1.0, 2.0])


def test_dynamic_fit():
    fit = dynamic_fit([[1.0, -1.0], [-2.0, 2.0], [-5.0, -5.0]])
    assert np.allclose(fit, [1.0, 1.0, 0.0])
    assert np.all(dynamic_fit([[-1.0], [-3.0]]) == 0.0)


def test_fit_rejects_changing_dimension():
    with pytest.raises(ArgumentError):
        dynamic_fit([[1.0], [1.0, 2.0]])


def test_queue_norms():
    assert np.allclose(queue_norms([[1.0], [-3.0], [2.0]]), [1.0, 0.0, 2.0])


def test_optimality_gap_identity():
    gap = optimality_gap([3.0, 4.0], [2.0, 2.0], [1.0, 2.5])
    assert gap.gap == 3.0
    assert gap.u1 == 3.5
    assert gap.u2 == -0.5
    assert gap.identity_error == 0.0


def test_optimality_gap_length_mismatch():
    with pytest.raises(ArgumentError):
        optimality_gap([1.0, 2.0], [1.0], [1.0, 2.0])


def test_collect_series():
    series = collect_series([2.0, 4.0, 6.0], [[1.0], [-2.0], [0.5]], [0.1, 0.2, 0.3], [1.0, 1.0, 1.0])
    assert series.T == 3
    assert np.allclose(series.avg_cost, [2.0, 3.0, 4.0])
    assert np.allclose(series.regret_d, [1.0, 4.0, 9.0])
    assert np.allclose(series.fit_d, [1.0, 0.0, 0.0])
    assert np.allclose(series.queue_norm, [1.0, 0.0, 0.5])


def test_trace_series_reports_next_multiplier():
    trace = run_mosp(_scalar([1.0, 2.0, 1.0]), BOX, StepsizePair(0.1, 1.0))
    series = trace_series(trace, [1.0, 4.0, 1.0])
    assert np.allclose(series.lambda_norm, [np.linalg.norm(r.lam_next) for r in trace])


def test_static_regret():
    assert static_regret([5.0, 5.0], _scalar([1.0, 2.0]), BOX) == pytest.approx(2.0, abs=1e-5)


def test_static_regret_undefined_when_no_fixed_point_fits():
    problems = [(QuadraticLoss([1.0]), AffineConstraint([[-1.0]], [3.0])),
                (QuadraticLoss([1.0]), AffineConstraint([[1.0]], [-1.0]))]
    assert static_regret([1.0, 1.0], problems, BOX) is None


def test_constraint_variation_shared_matrix():
    budget = constraint_variation(_scalar([1.0, 2.0, 1.0, 2.0]), BOX)
    assert np.array_equal(budget.v_g_per_slot, [1.0, 0.0, 1.0, 0.0])
    assert budget.v_g_max == 1.0
    assert budget.v_g_total == 2.0
    assert not budget.lower_bound


def test_constraint_variation_differing_matrix():
    box = FeasibleBox([0.0], [1.0])
    problems = [(QuadraticLoss([1.0]), AffineConstraint([[1.0]], [0.0])),
                (QuadraticLoss([1.0]), AffineConstraint([[2.0]], [0.0]))]
    budget = constraint_variation(problems, box)
    assert np.allclose(budget.v_g_per_slot, [1.0, 0.0])


def test_constraint_variation_general_is_a_lower_bound():
    problems = [(QuadraticLoss([1.0]), GeneralConstraint(lambda x: np.array([x[0] ** 2 - 1.0]))),
                (QuadraticLoss([1.0]), GeneralConstraint(lambda x: np.array([x[0] ** 2 - 0.5])))]
    budget = constraint_variation(problems, FeasibleBox([0.0], [1.0]))
    assert budget.lower_bound
    assert budget.v_g_per_slot[0] == pytest.approx(0.5)


def test_minimizer_variation():
    assert minimizer_variation([[0.0], [1.0], [3.0]]) == 3.0
    assert minimizer_variation([[2.0, 2.0]]) == 0.0


def test_dual_variation_identical_slots_is_zero():
    assert dual_variation(_scalar([1.5, 1.5, 1.5]), BOX, 4.0) == 0.0


def test_dual_variation_shift():
    # D_{t+1}(lam) - D_t(lam) = lam (b_{t+1} - b_t) while lam / 2 stays inside the box
    assert dual_variation(_scalar([1.0, 2.0]), BOX, 4.0) == pytest.approx(4.0)


def test_dual_grid_size_guard():
    box = FeasibleBox.from_caps(np.ones(4))
    problems = [(QuadraticLoss(np.ones(4)), AffineConstraint(np.eye(4), np.zeros(4)))]
    with pytest.raises(ResourceLimitError):
        dual_variation(problems, box, 1.0)


def test_gap_and_restart_bounds():
    assert gap_bound(1.0, 10, 0.5) == 11.0
    assert restart_gap_bound(2.0, 10, 4, 0.5) == 10.0
    with pytest.raises(ArgumentError):
        restart_gap_bound(2.0, 10, 0, 0.5)


def test_lambda_bound():
    steps = StepsizePair(0.5, 1.0)
    assert lambda_bound(1.0, 1.0, 1.0, 2.0, 1.0, steps) == pytest.approx(4.5)
    assert default_dual_cap(1.0, 1.0, 1.0, 2.0, 1.0, steps) == pytest.approx(9.0)
    assert lambda_bound(1.0, 1.0, 1.0, 1.0, 1.0, steps) is None
    assert default_dual_cap(1.0, 1.0, 1.0, 0.5, 1.0, steps) is None


def test_regret_bound_rhs():
    assert regret_bound_rhs(1.0, 1.0, 1.0, 2.0, 3.0, 4.0, 0.5, 1.0, 10) == pytest.approx(23.0)


def test_drift_check_flags_a_broken_update():
    assert drift_check([_round(0.0, 1.0, 1.0)], 1.0).all()
    assert not drift_check([_round(0.0, 2.0, 1.0)], 1.0).any()


def test_drift_check_slack_scales_with_multiplier():
    # at ||lam|| = 1e4 an excess of about 1e-6 is roundoff, not a broken update
    assert drift_check([_round(1e4, 1e4 + 1.0 + 1e-10, 1.0)], 1.0).all()
    assert not drift_check([_round(1e4, 1e4 + 1.01, 1.0)], 1.0).any()


def test_problem_constants():
    G, M, R = problem_constants(_scalar([1.0, 2.0]), BOX)
    assert G == pytest.approx(20.0)
    assert M == pytest.approx(9.0)
    assert R == 10.0


def test_bound_checks_pass_and_unmet():
    problems = _scalar([1.0, 2.0, 1.0, 2.0])
    steps = StepsizePair(0.1, 1.0)
    trace = run_mosp(problems, BOX, steps)
    G, M, R = problem_constants(problems, BOX)
    report = bound_checks(trace, G, M, R, 8.0, steps, 1.0)
    assert report.status == STATUS_PASS
    assert report.max_lambda_norm <= report.lambda_bar
    assert report.fit <= report.fit_dual_bound
    unmet = bound_checks(trace, G, M, R, 0.5, steps, 1.0)
    assert unmet.status == STATUS_UNMET
    assert unmet.passed
