import pytest
import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from validate_suite import (FAIL, PASS, SKIP, CheckResult, check_distributed, check_drift_mutation,
                            check_duality, check_gap_bound, check_gradients, check_growth_trend, check_incidence,
                            check_odg_oracle, check_odg_tradeoff, check_projection, check_queue_relaxation,
                            check_restart_equivalence, check_scenario_bytes, check_solver_oracles,
                            print_report, run_suite)


def test_mutated_dual_step_is_caught():
    assert check_drift_mutation().status == PASS


def test_gap_identity_and_bounds():
    results = check_gap_bound()
    assert [r.status for r in results] == [PASS] * 4
    assert results[2].name == "OptGap <= Reg_d + 2T V(D)"
    assert results[3].name.startswith("restarted OptGap")
    assert all(r.margin >= 0.0 for r in results[1:])


def test_solver_oracle_checks():
    assert all(r.status == PASS for r in check_solver_oracles())


def test_network_oracle_checks():
    assert check_odg_oracle(1).status == PASS
    assert check_gradients(1).status == PASS
    assert check_distributed(1).status == PASS


def test_restart_once_per_horizon_is_the_plain_run():
    result = check_restart_equivalence(1)
    assert result.status == PASS
    assert result.margin == 0.0


def test_queue_tracks_the_multiplier():
    assert [r.status for r in check_queue_relaxation()] == [PASS, PASS]


def test_projection_checks():
    assert [r.status for r in check_projection(1, pairs=200)] == [PASS, PASS]


def test_duality_checks():
    weak, strong = check_duality(1, samples=20)
    assert weak.status == PASS
    assert strong.status == PASS
    assert strong.margin > 0.0


def test_incidence_and_scenario_bytes():
    assert all(r.status == PASS for r in check_incidence(1))
    assert check_scenario_bytes(1).status == PASS


def test_report_exit_code(capsys):
    assert print_report([CheckResult("a", PASS), CheckResult("b", SKIP, detail="hypothesis unmet")]) == 0
    assert print_report([CheckResult("a", PASS, 0.5), CheckResult("b", FAIL)]) == 1
    out = capsys.readouterr().out
    assert "[PASS] a (margin 0.5)" in out
    assert "[SKIP] b - hypothesis unmet" in out


@pytest.mark.slow
def test_odg_step_tradeoff():
    assert [r.status for r in check_odg_tradeoff()] == [PASS, PASS]


@pytest.mark.slow
def test_growth_trend_is_never_a_failure():
    results = check_growth_trend()
    assert [r.name.split()[0] for r in results] == ["Reg_d", "Fit_d"]
    assert all(r.status in (PASS, SKIP) for r in results)
    assert all(r.detail for r in results)


@pytest.mark.slow
def test_full_suite_has_no_failures():
    results = run_suite(seed=1)
    assert [r.name for r in results if r.status == FAIL] == []
