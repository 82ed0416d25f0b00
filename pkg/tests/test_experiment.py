import io
import pytest
import numpy as np
import pandas as pd
import sys
import os
from dataclasses import replace

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from check_results import check_results
from compute_medians import medians_at, summarize, window_costs
from errors import ArgumentError, ConfigError
from experiment import (EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, FIT_SLOPE_LIMIT, GROWTH_BOUNDED, GROWTH_FAIL,
                        GROWTH_SUBLINEAR, GROWTH_UNMEASURED, REGRET_SLOPE_LIMIT, RESULT_COLUMNS,
                        ExperimentConfig, GrowthCheck, ResultRow, SweepReport, _loglog_slope, _print_summary,
                        emit_csv, fit_ratio_limit, growth_check, horizon_sweep, main, odg_name, parse_config,
                        read_results, regret_ratio_limit, rows_to_frame, run_experiment, run_seed)
from netalloc import export_scenario, gen_case1


SMALL = dict(J=2, K=3, T=12, seeds=(1, 2), mu_odg_list=(0.5,))


@pytest.fixture(scope="module")
def small_result():
    cfg = ExperimentConfig(benchmarks=("perslot", "offline", "static"), **SMALL)
    return cfg, run_experiment(cfg)


def _write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# --- configuration -----------------------------------------------------------

def test_empty_config_gives_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, ""))
    assert cfg == ExperimentConfig()
    assert cfg.seeds == tuple(range(1, 21))
    assert cfg.alpha_scale == 0.05 and cfg.mu_scale == 50.0
    assert cfg.mu_odg_list == (0.5, 1.0)
    assert parse_config() == ExperimentConfig()


def test_config_file_values(tmp_path):
    path = _write(tmp_path, "# small run\n\nJ = 3\nK=2\nT=40\nseeds=4,5\nbenchmarks=perslot,offline\n"
                            "restart_delta=10\nnoncausal_sdg=yes\n")
    cfg = parse_config(path)
    assert (cfg.J, cfg.K, cfg.T) == (3, 2, 40)
    assert cfg.seeds == (4, 5)
    assert cfg.benchmarks == ("perslot", "offline")
    assert cfg.restart_delta == 10
    assert cfg.noncausal_sdg is True
    assert cfg.x0_start == "lower"
    assert parse_config(_write(tmp_path, "x0_start = center\n", "start.cfg")).x0_start == "center"


def test_flags_override_file(tmp_path):
    cfg = parse_config(_write(tmp_path, "T=100\n"), {"T": "50", "case": None})
    assert cfg.T == 50
    assert cfg.case == "case1"


def test_zero_horizon_is_rejected_with_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config(_write(tmp_path, "J=2\nT=0\n"))
    assert info.value.key == "T"
    assert info.value.line == 2


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config(_write(tmp_path, "gamma=1\n"))
    assert info.value.key == "gamma"
    assert "unknown key" in str(info.value)
    assert info.value.line == 1


@pytest.mark.parametrize("text,key", [
    ("T=abc\n", "T"),
    ("noncausal_sdg=maybe\n", "noncausal_sdg"),
    ("T\n", "T"),
])
def test_malformed_lines(tmp_path, text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(_write(tmp_path, text))
    assert info.value.key == key


@pytest.mark.parametrize("kwargs,key", [
    (dict(T=10, restart_delta=11), "restart_delta"),
    (dict(benchmarks=("offline",)), "benchmarks"),
    (dict(benchmarks=("perslot", "hindsight")), "benchmarks"),
    (dict(beta=1.0), "beta"),
    (dict(mu_odg_list=(0.5, 0.0)), "mu_odg_list"),
    (dict(case="no/such/file.csv"), "case"),
    (dict(J=10, K=10, T=10_000, benchmarks=("perslot", "offline")), "benchmarks"),
    (dict(x0_start="middle"), "x0_start"),
])
def test_invalid_configs(kwargs, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(**kwargs)
    assert info.value.key == key


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "missing.cfg"))


# --- result rows -------------------------------------------------------------

def _row(seed=1, algorithm="mosp", t=1, regret=0.5):
    return ResultRow(seed=seed, algorithm=algorithm, t=t, cost=2.0, cost_perslot=1.5, cost_offline=None,
                     regret_d=regret, fit_d=0.0, lambda_norm=1.0, queue_norm=0.0, avg_cost=2.0)


def test_emit_csv_without_rows_writes_header_only(tmp_path):
    path = tmp_path / "out" / "results.csv"
    emit_csv([], str(path))
    assert path.read_text().splitlines() == [",".join(RESULT_COLUMNS)]


def test_emit_csv_keeps_column_order_and_precision(tmp_path):
    rows = [_row(t=1, regret=0.1), _row(t=2, regret=1.0 / 3.0)]
    path = str(tmp_path / "results.csv")
    emit_csv(rows, path)
    df = read_results(path)
    assert list(df.columns) == RESULT_COLUMNS
    assert df["regret_d"].tolist() == [0.1, 1.0 / 3.0]
    assert df["cost_offline"].isna().all()


def test_odg_name():
    assert odg_name(0.5) == "odg_0.5"
    assert odg_name(1.0) == "odg_1"


def test_summarize_takes_median_of_final_rows():
    rows = [_row(seed=s, t=t, regret=float(s * t)) for s in (1, 2, 3) for t in (1, 2)]
    summary = summarize(rows_to_frame(rows))
    assert summary.loc["mosp", "regret_d"] == 4.0
    assert summary.loc["mosp", "n_seeds"] == 3


def test_summarize_empty_frame():
    assert summarize(rows_to_frame([])).empty


def test_check_results_flags_gaps():
    rows = [_row(t=1), _row(t=3)]
    report = check_results(rows_to_frame(rows))
    assert any(status == "FAIL" and message.startswith("non-contiguous slots") for status, message in report)


def test_check_results_wrong_columns():
    report = check_results(pd.DataFrame({"seed": [1]}))
    assert report[0][0] == "FAIL"


# --- seeded runs ---------------------------------------------------------------

def test_small_run_rows(small_result):
    cfg, result = small_result
    assert result.failures == {}
    df = rows_to_frame(result.rows)
    counts = df.groupby("algorithm").size()
    for name in ("mosp", "odg_0.5", "perslot", "offline", "static"):
        assert counts[name] == len(cfg.seeds) * cfg.T
    assert not any(status == "FAIL" for status, _ in check_results(df, cfg.T))
    assert set(result.summary.index) == {"mosp", "odg_0.5", "perslot", "offline", "static"}
    assert (result.summary["n_seeds"] == 2).all()


def test_perslot_rows_have_zero_regret(small_result):
    _, result = small_result
    df = rows_to_frame(result.rows)
    perslot = df[df["algorithm"] == "perslot"]
    assert (perslot["regret_d"] == 0.0).all()
    assert np.allclose(perslot["cost"], perslot["cost_perslot"])


def test_offline_never_costs_more_than_perslot(small_result):
    _, result = small_result
    df = rows_to_frame(result.rows)
    mosp = df[df["algorithm"] == "mosp"]
    for _, group in mosp.groupby("seed"):
        perslot_total = group["cost_perslot"].sum()
        assert group["cost_offline"].sum() <= perslot_total * (1.0 + 1e-4)


def test_distributed_run_is_checked(small_result):
    _, result = small_result
    for seed_result in result.seeds:
        assert seed_result.distributed_deviation < 1e-9
        assert seed_result.epsilon > 0.0


def test_run_is_deterministic(small_result, tmp_path):
    cfg, first = small_result
    second = run_experiment(cfg)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    emit_csv(first.rows, a)
    emit_csv(second.rows, b)
    with open(a) as fa, open(b) as fb:
        assert fa.read() == fb.read()


def test_summary_reports_static_regret(small_result):
    _, result = small_result
    out = io.StringIO()
    _print_summary(result, out)
    assert "MOSP static regret: median" in out.getvalue()
    assert "over 2 seeds" in out.getvalue()


def test_medians_at_final_slot_match_summary(small_result):
    cfg, result = small_result
    at_end = medians_at(rows_to_frame(result.rows), cfg.T)
    for name in at_end.index:
        assert at_end.loc[name, "avg_cost"] == pytest.approx(result.summary.loc[name, "avg_cost"])
        assert at_end.loc[name, "fit_d"] == pytest.approx(result.summary.loc[name, "fit_d"])


def test_window_costs_split_the_horizon(small_result):
    _, result = small_result
    df = rows_to_frame(result.rows)
    windows = window_costs(df, [4])
    assert list(windows.columns) == ["1-4", "5-12"]
    perslot = df[df["algorithm"] == "perslot"]
    early = perslot[perslot["t"] <= 4].groupby("seed")["cost"].mean().median()
    late = perslot[perslot["t"] > 4].groupby("seed")["cost"].mean().median()
    assert windows.loc["perslot", "1-4"] == pytest.approx(early)
    assert windows.loc["perslot", "5-12"] == pytest.approx(late)


def test_center_start_changes_only_mosp():
    cfg = ExperimentConfig(**dict(SMALL, seeds=(1,)))
    lower = run_seed(cfg, 1)
    center = run_seed(replace(cfg, x0_start="center"), 1)
    assert center.error is None
    assert center.distributed_deviation < 1e-9

    def first_cost(result, algorithm):
        return next(r.cost for r in result.rows if r.algorithm == algorithm and r.t == 1)

    # slot 1 plays x0: the lower corner costs nothing, the midpoint does
    assert first_cost(lower, "mosp") == 0.0
    assert first_cost(center, "mosp") > 0.0
    odg_lower = [r.cost for r in lower.rows if r.algorithm == "odg_0.5"]
    odg_center = [r.cost for r in center.rows if r.algorithm == "odg_0.5"]
    assert odg_lower == odg_center


def test_custom_scenario_file(tmp_path):
    path = str(tmp_path / "scenario.csv")
    export_scenario(gen_case1(2, 3, 12, seed=5), path)
    cfg = ExperimentConfig(case=path, **dict(SMALL, T=10, seeds=(5,)))
    assert cfg.custom_scenario
    result = run_seed(cfg, 5)
    assert result.error is None
    assert max(r.t for r in result.rows) == 10


def test_short_scenario_file_is_a_seed_failure(tmp_path):
    path = str(tmp_path / "scenario.csv")
    export_scenario(gen_case1(2, 3, 5, seed=5), path)
    result = run_seed(ExperimentConfig(case=path, **dict(SMALL, seeds=(5,))), 5)
    assert result.rows == []
    assert result.error.startswith("ArgumentError")


# --- sweep ---------------------------------------------------------------------

HORIZONS = [250, 500, 1000]


def test_loglog_slope():
    assert _loglog_slope([1, 2, 4], [1.0, 2.0, 4.0]) == pytest.approx(1.0)
    assert _loglog_slope([1, 2], [1.0, -2.0]) is None
    assert _loglog_slope([1], [1.0]) is None


def test_ratio_limits():
    assert fit_ratio_limit(2.0) == pytest.approx(2.0 ** (2.0 / 3.0) * 1.25)
    assert regret_ratio_limit(2.0) == pytest.approx(1.9)


def test_growth_check_sublinear():
    check = growth_check("Fit_d", HORIZONS, [1.0, 1.5, 2.2], FIT_SLOPE_LIMIT, fit_ratio_limit)
    assert check.status == GROWTH_SUBLINEAR
    assert check.passed
    assert check.slope == pytest.approx(np.log(2.2) / np.log(4.0), abs=0.01)


def test_growth_check_linear_regret_fails():
    check = growth_check("Reg_d", HORIZONS, [1.0, 2.0, 4.0], REGRET_SLOPE_LIMIT, regret_ratio_limit)
    assert check.status == GROWTH_FAIL
    assert not check.passed
    assert "Reg_d(500)/Reg_d(250) = 2 > 1.9" in check.reason


@pytest.mark.parametrize("metric,values,slope_limit,ratio_limit", [
    ("Fit_d", [1.0, 2.5, 2.5], FIT_SLOPE_LIMIT, fit_ratio_limit),
    ("Reg_d", [1.0, 1.95], REGRET_SLOPE_LIMIT, regret_ratio_limit),
])
def test_growth_check_enforces_doubling_ratio(metric, values, slope_limit, ratio_limit):
    check = growth_check(metric, HORIZONS[:len(values)], values, slope_limit, ratio_limit)
    # the slope alone would pass
    assert check.slope <= slope_limit
    assert check.status == GROWTH_FAIL


def test_growth_check_reports_non_positive_medians_as_bounded():
    fit = growth_check("Fit_d", HORIZONS, [0.0, 0.0, 0.0], FIT_SLOPE_LIMIT, fit_ratio_limit)
    assert fit.status == GROWTH_BOUNDED
    assert fit.reason == "Fit_d zero at T=250, 500, 1000"
    reg = growth_check("Reg_d", HORIZONS, [1.49e6, -8.67e6, -2.08e7], REGRET_SLOPE_LIMIT, regret_ratio_limit)
    assert reg.status == GROWTH_BOUNDED
    assert reg.slope is None
    assert reg.reason == "Reg_d non-positive at T=500, 1000"
    assert fit.passed and reg.passed


@pytest.mark.parametrize("horizons,values", [
    ([250, 500], [-1.0, 2.0]),
    ([250], [1.0]),
    ([250, 500], [1.0, np.nan]),
])
def test_growth_check_unmeasured(horizons, values):
    check = growth_check("Reg_d", horizons, values, REGRET_SLOPE_LIMIT, regret_ratio_limit)
    assert check.status == GROWTH_UNMEASURED
    assert not check.passed
    assert check.reason


def test_sweep_report_needs_both_checks():
    bounded = GrowthCheck("Reg_d", GROWTH_BOUNDED, reason="Reg_d zero at T=8")
    assert SweepReport(pd.DataFrame(), bounded, GrowthCheck("Fit_d", GROWTH_SUBLINEAR, 0.5)).passed
    assert not SweepReport(pd.DataFrame(), bounded, GrowthCheck("Fit_d", GROWTH_UNMEASURED)).passed
    assert SweepReport(pd.DataFrame(), bounded, GrowthCheck("Fit_d", GROWTH_SUBLINEAR, 0.5)).slope_fit == 0.5


def test_sweep_needs_increasing_horizons():
    with pytest.raises(ArgumentError):
        horizon_sweep(ExperimentConfig(**SMALL), [50, 20])


def test_small_sweep_table():
    report = horizon_sweep(ExperimentConfig(**dict(SMALL, seeds=(1,))), [8, 16])
    assert report.table["T"].tolist() == [8, 16]
    assert report.failures == {}
    assert report.regret.metric == "Reg_d" and report.fit.metric == "Fit_d"
    assert report.regret.reason and report.fit.reason


# --- command line ----------------------------------------------------------------

def test_cli_config_error_exit_code(tmp_path):
    assert main(["run", "--T", "0"]) == EXIT_CONFIG
    assert main(["run", "--config", _write(tmp_path, "gamma=1\n")]) == EXIT_CONFIG


def test_cli_run_writes_results(tmp_path):
    out = str(tmp_path / "results")
    code = main(["run", "--J", "2", "--K", "3", "--T", "8", "--seeds", "1", "--mu-odg-list", "1",
                 "--output-dir", out])
    assert code == EXIT_OK
    df = read_results(os.path.join(out, "results.csv"))
    assert set(df["algorithm"]) == {"mosp", "odg_1", "perslot"}
    assert os.path.exists(os.path.join(out, "summary.txt"))


def test_cli_scenario_roundtrip(tmp_path, capsys):
    path = str(tmp_path / "scen.csv")
    assert main(["export-scenario", "--case", "case2", "--J", "2", "--K", "2", "--T", "10",
                 "--seed", "3", "--out", path]) == EXIT_OK
    assert main(["import-scenario", path]) == EXIT_OK
    assert "case=case2 seed=3 T=10 J=2 K=2" in capsys.readouterr().out

def test_cli_sweep_prints_growth_status(tmp_path, capsys):
    code = main(["sweep", "--J", "2", "--K", "2", "--seeds", "1", "--horizons", "8,16",
                 "--output-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_VALIDATION)
    assert "] Reg_d: " in out and "] Fit_d: " in out
    assert os.path.exists(os.path.join(str(tmp_path), "sweep.csv"))


# --- full-scale orderings ---------------------------------------------------------

@pytest.fixture(scope="module")
def case1_result():
    return run_experiment(ExperimentConfig(workers=-1))


@pytest.fixture(scope="module")
def case2_result():
    return run_experiment(ExperimentConfig(case="case2", workers=-1))


@pytest.mark.slow
def test_case1_cost_orderings(case1_result):
    summary = case1_result.summary
    assert summary.loc["mosp", "avg_cost"] < summary.loc["odg_1", "avg_cost"]
    # the smaller ODG step keeps a larger backlog unserved, which lowers its average cost to a tie
    assert abs(summary.loc["mosp", "avg_cost"] - summary.loc["odg_0.5", "avg_cost"]) \
        <= 1e-3 * summary.loc["odg_0.5", "avg_cost"]
    assert summary.loc["odg_1", "avg_cost"] >= summary.loc["odg_0.5", "avg_cost"]


@pytest.mark.slow
def test_case1_fit_orderings(case1_result):
    summary = case1_result.summary
    assert summary.loc["odg_1", "fit_d"] <= summary.loc["odg_0.5", "fit_d"]
    assert summary.loc["mosp", "fit_d"] <= 2.0 * summary.loc["odg_1", "fit_d"]


@pytest.mark.slow
def test_case2_cost_orderings(case2_result):
    summary = case2_result.summary
    assert summary.loc["mosp", "avg_cost"] < summary.loc["perslot", "avg_cost"]
    # ODG reacts to last slot's price in closed form and tracks the daily cycle
    for mu in (0.5, 1.0):
        assert summary.loc[odg_name(mu), "avg_cost"] < summary.loc["mosp", "avg_cost"]


@pytest.mark.slow
def test_case2_fit_flattens(case2_result):
    df = rows_to_frame(case2_result.rows)
    at_400 = medians_at(df, 400)
    at_500 = medians_at(df, 500)
    for name in ("mosp", "odg_0.5", "odg_1"):
        assert at_500.loc[name, "fit_d"] - at_400.loc[name, "fit_d"] <= 0.05 * at_400.loc[name, "fit_d"]


@pytest.mark.slow
def test_growth_on_case2_is_explicit():
    report = horizon_sweep(ExperimentConfig(case="case2", workers=-1), [250, 500, 1000])
    for check in (report.regret, report.fit):
        assert check.status in (GROWTH_SUBLINEAR, GROWTH_BOUNDED)
        assert check.reason
    assert report.passed
