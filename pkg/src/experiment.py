"""
Experiment harness: configuration, seeded MOSP / ODG / benchmark runs on the
cloud network, result rows, horizon sweeps and the command-line entry point.

    python src/experiment.py run --config exp.cfg --T 200 --seeds 1,2,3
    python src/experiment.py sweep --case case2 --horizons 250,500,1000
    python src/experiment.py validate
    python src/experiment.py export-scenario --case case2 --T 48 --seed 7 --out scen.csv
    python src/experiment.py import-scenario scen.csv
"""
import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import linregress

from baselines import run_odg
from compute_medians import summarize
from distributed_mosp import max_trace_deviation, run_distributed_mosp
from errors import ArgumentError, ConfigError, MospError
from metrics import collect_series, static_regret, trace_series
from netalloc import (GENERATORS, export_network, export_scenario, import_scenario,
                      network_problem_stream, sample_valid_instance)
from oco_core import horizon_stepsizes, run_mosp
from solvers import best_static, offline_optimum, per_slot_optimum

logger = logging.getLogger(__name__)

BENCHMARK_CHOICES = ("perslot", "offline", "static")
# where MOSP starts: the box lower corner or its midpoint
X0_STARTS = ("lower", "center")
DISTRIBUTED_TOL = 1e-9
FIT_SLOPE_LIMIT = 2.0 / 3.0 + 0.15
REGRET_SLOPE_LIMIT = 0.97

GROWTH_SUBLINEAR = "SUBLINEAR"
GROWTH_BOUNDED = "BOUNDED"
GROWTH_UNMEASURED = "UNMEASURED"
GROWTH_FAIL = "FAIL"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2


@dataclass(frozen=True)
class ExperimentConfig:
    J: int = 10
    K: int = 10
    T: int = 500
    case: str = "case1"
    seeds: tuple = tuple(range(1, 21))
    alpha_scale: float = 0.05
    mu_scale: float = 50.0
    beta: float = 1.0 / 3.0
    mu_odg_list: tuple = (0.5, 1.0)
    benchmarks: tuple = ("perslot",)
    restart_delta: Optional[int] = None
    output_dir: str = "results"
    workers: int = 1
    tol: float = 1e-6
    offline_limit: int = 1_000_000
    noncausal_sdg: bool = False
    x0_start: str = "lower"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T", f"horizon must be >= 1, got {self.T}")
        if self.J < 1 or self.K < 1:
            raise ConfigError("J" if self.J < 1 else "K", "network needs at least one node of each kind")
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if self.alpha_scale <= 0 or self.mu_scale <= 0:
            raise ConfigError("alpha_scale" if self.alpha_scale <= 0 else "mu_scale", "must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta", f"must lie in [0, 1), got {self.beta}")
        if any(mu <= 0 for mu in self.mu_odg_list):
            raise ConfigError("mu_odg_list", "ODG stepsizes must be positive")
        unknown = set(self.benchmarks) - set(BENCHMARK_CHOICES)
        if unknown:
            raise ConfigError("benchmarks", f"unknown benchmark(s) {sorted(unknown)}")
        if "perslot" not in self.benchmarks:
            raise ConfigError("benchmarks", "the per-slot benchmark is required for regret")
        if self.restart_delta is not None and not 1 <= self.restart_delta <= self.T:
            raise ConfigError("restart_delta", f"must lie in [1, T], got {self.restart_delta}")
        if self.workers == 0:
            raise ConfigError("workers", "must be non-zero")
        if self.tol <= 0:
            raise ConfigError("tol", "must be positive")
        if self.x0_start not in X0_STARTS:
            raise ConfigError("x0_start", f"must be one of {sorted(X0_STARTS)}, got {self.x0_start!r}")
        if self.case not in GENERATORS and not os.path.isfile(self.case):
            raise ConfigError("case", f"{self.case!r} is neither a generator nor a scenario file")
        if "offline" in self.benchmarks and self.T * (self.J * self.K + self.K) > self.offline_limit:
            raise ConfigError("benchmarks", f"offline benchmark too large: T*(JK+K) > {self.offline_limit}")

    @property
    def custom_scenario(self):
        return self.case not in GENERATORS


def _parse_bool(text):
    value = text.strip().lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text):
    text = text.strip()
    return None if text.lower() in ("", "none") else int(text)


def _split_list(text, convert):
    return tuple(convert(item) for item in text.split(",") if item.strip())


PARSERS = {
    "J": int, "K": int, "T": int,
    "case": str.strip,
    "seeds": lambda s: _split_list(s, int),
    "alpha_scale": float, "mu_scale": float, "beta": float,
    "mu_odg_list": lambda s: _split_list(s, float),
    "benchmarks": lambda s: _split_list(s, str.strip),
    "restart_delta": _parse_optional_int,
    "output_dir": str.strip,
    "workers": int, "tol": float, "offline_limit": int,
    "noncausal_sdg": _parse_bool,
    "x0_start": str.strip,
}


def _convert(key, raw, line=None):
    if key not in PARSERS:
        raise ConfigError(key, "unknown key", line)
    if not isinstance(raw, str):
        return raw
    try:
        return PARSERS[key](raw)
    except ValueError as exc:
        raise ConfigError(key, f"malformed value {raw!r} ({exc})", line) from None


def parse_config(path=None, overrides=None):
    """
    Build an ExperimentConfig from a key=value file and flag overrides
    (flags win). Lines may be blank or start with '#'. Unknown keys and
    malformed values raise ConfigError naming the key and line.
    """
    values, lines = {}, {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        for number, raw_line in enumerate(text, start=1):
            stripped = raw_line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(key, "expected key=value", number)
            values[key] = _convert(key, value, number)
            lines[key] = number
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _convert(key, value)
            lines.pop(key, None)
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        raise ConfigError(exc.key, exc.message, lines.get(exc.key)) from None


# ---------------------------------------------------------------------------
# Result rows
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    seed: int
    algorithm: str
    t: int
    cost: float
    cost_perslot: float
    cost_offline: Optional[float]
    regret_d: float
    fit_d: float
    lambda_norm: float
    queue_norm: float
    avg_cost: float


RESULT_COLUMNS = [f.name for f in fields(ResultRow)]


@dataclass
class SeedResult:
    seed: int
    rows: list = field(default_factory=list)
    error: Optional[str] = None
    epsilon: float = float("nan")
    distributed_deviation: float = float("nan")
    static_regret: Optional[float] = None


@dataclass
class ExperimentResult:
    rows: list
    summary: pd.DataFrame
    failures: dict
    seeds: list


def odg_name(mu):
    return f"odg_{mu:g}"


def _rows(seed, algorithm, costs, series, perslot_costs, offline_costs):
    rows = []
    for i in range(len(costs)):
        rows.append(ResultRow(
            seed=seed, algorithm=algorithm, t=i + 1,
            cost=float(costs[i]),
            cost_perslot=float(perslot_costs[i]),
            cost_offline=None if offline_costs is None else float(offline_costs[i]),
            regret_d=float(series.regret_d[i]),
            fit_d=float(series.fit_d[i]),
            lambda_norm=float(series.lambda_norm[i]),
            queue_norm=float(series.queue_norm[i]),
            avg_cost=float(series.avg_cost[i]),
        ))
    return rows


def load_stream(cfg, seed):
    if cfg.custom_scenario:
        stream = import_scenario(cfg.case)
        if stream.T < cfg.T:
            raise ArgumentError(f"{cfg.case} holds {stream.T} slots, T={cfg.T} requested")
        return stream.truncated(cfg.T)
    return GENERATORS[cfg.case](cfg.J, cfg.K, cfg.T, seed)


def start_point(box, x0_start):
    if x0_start == "center":
        return 0.5 * (box.lower + box.upper)
    return box.lower.copy()


def run_seed(cfg, seed):
    """One seed end-to-end. Module errors become a recorded failure."""
    try:
        return _run_seed(cfg, seed)
    except MospError as exc:
        logger.warning("seed %d failed: %s", seed, exc)
        return SeedResult(seed, error=f"{type(exc).__name__}: {exc}")


def _run_seed(cfg, seed):
    logger.info("seed %d: start (case=%s, J=%d, K=%d, T=%d)", seed, cfg.case, cfg.J, cfg.K, cfg.T)
    stream = load_stream(cfg, seed)
    net, stream, eps, _ = sample_valid_instance(stream.J, stream.K, cfg.T, seed, stream=stream)
    problems = network_problem_stream(net, stream)
    box = net.box
    steps = horizon_stepsizes(cfg.T, cfg.beta, cfg.alpha_scale, cfg.mu_scale)
    x0 = start_point(box, cfg.x0_start)

    trace = run_distributed_mosp(net, stream, steps, x0=x0, restart_period=cfg.restart_delta)
    central = run_mosp(problems, box, steps, x0=x0, restart_period=cfg.restart_delta)
    deviation = max_trace_deviation(trace, central)
    if deviation >= DISTRIBUTED_TOL:
        raise MospError(f"distributed and centralized MOSP differ by {deviation:.3g}")

    # the Slater witness certifies every slot, so phase-I is skipped
    perslot = [per_slot_optimum(f, g, box, cfg.tol, assume_feasible=True) for f, g in problems]
    perslot_costs = np.array([f.value(r.solution) for (f, _), r in zip(problems, perslot)])

    offline_costs = None
    offline_x = offline_lam = None
    if "offline" in cfg.benchmarks:
        offline_x, report = offline_optimum(problems, box, cfg.tol, cfg.offline_limit)
        offline_lam = report.multiplier
        offline_costs = np.array([f.value(x) for (f, _), x in zip(problems, offline_x)])

    result = SeedResult(seed, epsilon=eps, distributed_deviation=deviation)
    rows = result.rows
    rows += _rows(seed, "mosp", [r.loss for r in trace], trace_series(trace, perslot_costs),
                  perslot_costs, offline_costs)
    result.static_regret = static_regret([r.loss for r in trace], problems, box, cfg.tol) \
        if "static" in cfg.benchmarks else None

    odg_runs = [(odg_name(mu), mu, False) for mu in cfg.mu_odg_list]
    if cfg.noncausal_sdg:
        odg_runs += [(f"sdg_{mu:g}", mu, True) for mu in cfg.mu_odg_list]
    for name, mu, noncausal in odg_runs:
        odg = run_odg(stream, net, mu, cfg.T, noncausal=noncausal)
        rows += _rows(seed, name, [r.loss for r in odg], trace_series(odg, perslot_costs),
                      perslot_costs, offline_costs)

    rows += _rows(seed, "perslot", perslot_costs,
                  collect_series(perslot_costs, [g.value(r.solution) for (_, g), r in zip(problems, perslot)],
                                 [np.linalg.norm(r.multiplier) for r in perslot], perslot_costs),
                  perslot_costs, offline_costs)
    if offline_x is not None:
        lam_norm = float(np.linalg.norm(offline_lam))
        rows += _rows(seed, "offline", offline_costs,
                      collect_series(offline_costs, [g.value(x) for (_, g), x in zip(problems, offline_x)],
                                     np.full(cfg.T, lam_norm), perslot_costs),
                      perslot_costs, offline_costs)
    if "static" in cfg.benchmarks and result.static_regret is not None:
        fixed = best_static(problems, box, cfg.tol)
        static_costs = np.array([f.value(fixed.solution) for f, _ in problems])
        rows += _rows(seed, "static", static_costs,
                      collect_series(static_costs, [g.value(fixed.solution) for _, g in problems],
                                     np.full(cfg.T, float(np.linalg.norm(fixed.multiplier))), perslot_costs),
                      perslot_costs, offline_costs)
    logger.info("seed %d: done (eps=%.4g, %d rows)", seed, eps, len(rows))
    return result


def run_experiment(cfg):
    """Fan seeds out to joblib workers; rows are merged in seed order."""
    results = Parallel(n_jobs=cfg.workers)(delayed(run_seed)(cfg, seed) for seed in cfg.seeds)
    rows = [row for r in results for row in r.rows]
    failures = {r.seed: r.error for r in results if r.error is not None}
    frame = rows_to_frame(rows)
    summary = summarize(frame)
    return ExperimentResult(rows, summary, failures, list(results))


def rows_to_frame(rows):
    return pd.DataFrame([asdict(r) for r in rows], columns=RESULT_COLUMNS)


def emit_csv(rows, path):
    """Header plus one line per ResultRow, in field order, full-precision floats."""
    frame = rows if isinstance(rows, pd.DataFrame) else rows_to_frame(rows)
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        frame[RESULT_COLUMNS].to_csv(path, index=False)
    except OSError as exc:
        raise MospError(f"cannot write results to {path}: {exc}") from None
    return path


def read_results(path):
    return pd.read_csv(path, float_precision="round_trip")


# ---------------------------------------------------------------------------
# Horizon sweep
# ---------------------------------------------------------------------------

def fit_ratio_limit(factor):
    """Largest Fit_d(T2) / Fit_d(T1) accepted when T2 = factor * T1."""
    return factor ** (2.0 / 3.0) * 1.25


def regret_ratio_limit(factor):
    return 0.95 * factor


@dataclass
class GrowthCheck:
    metric: str
    status: str
    slope: Optional[float] = None
    reason: str = ""

    @property
    def passed(self):
        return self.status in (GROWTH_SUBLINEAR, GROWTH_BOUNDED)


@dataclass
class SweepReport:
    table: pd.DataFrame
    regret: GrowthCheck
    fit: GrowthCheck
    failures: dict = field(default_factory=dict)

    @property
    def slope_regret(self):
        return self.regret.slope

    @property
    def slope_fit(self):
        return self.fit.slope

    @property
    def passed(self):
        return self.regret.passed and self.fit.passed


def _loglog_slope(horizons, values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2 or np.any(values <= 0) or not np.all(np.isfinite(values)):
        return None
    return float(linregress(np.log(horizons), np.log(values)).slope)


def growth_check(metric, horizons, values, slope_limit, ratio_limit):
    """
    Classify how a median metric grows with the horizon.

    Every consecutive pair (T1, T2) with a positive value at T1 must satisfy
    value(T2) <= ratio_limit(T2 / T1) * value(T1). When all values are
    positive the log-log slope must also stay within slope_limit. Values at
    or below zero mean the metric did not grow: the result is BOUNDED with
    the horizons named. A metric that turns positive after a non-positive
    value cannot be measured and is reported as UNMEASURED.
    """
    horizons = np.asarray(horizons, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return GrowthCheck(metric, GROWTH_UNMEASURED, reason="needs at least two horizons")
    if not np.all(np.isfinite(values)):
        missing = ", ".join(f"{T:g}" for T, v in zip(horizons, values) if not np.isfinite(v))
        return GrowthCheck(metric, GROWTH_UNMEASURED, reason=f"no median at T={missing}")

    violations, unmeasured = [], None
    for (t1, v1), (t2, v2) in zip(zip(horizons, values), zip(horizons[1:], values[1:])):
        if v1 > 0:
            limit = ratio_limit(t2 / t1)
            if v2 > limit * v1:
                violations.append(f"{metric}({t2:g})/{metric}({t1:g}) = {v2 / v1:.3g} > {limit:.3g}")
        elif v2 > 0 and unmeasured is None:
            unmeasured = f"{metric} turns positive between T={t1:g} and T={t2:g}"
    slope = _loglog_slope(horizons, values)
    if slope is not None and slope > slope_limit:
        violations.append(f"log-log slope {slope:.3f} > {slope_limit:.3f}")

    if violations:
        return GrowthCheck(metric, GROWTH_FAIL, slope, "; ".join(violations))
    if unmeasured is not None:
        return GrowthCheck(metric, GROWTH_UNMEASURED, slope, unmeasured)
    if slope is None:
        flat = values <= 0
        kind = "zero" if np.all(values[flat] == 0.0) else "non-positive"
        where = ", ".join(f"{T:g}" for T in horizons[flat])
        return GrowthCheck(metric, GROWTH_BOUNDED, None, f"{metric} {kind} at T={where}")
    return GrowthCheck(metric, GROWTH_SUBLINEAR, slope, f"log-log slope {slope:.3f} <= {slope_limit:.3f}")


def horizon_sweep(cfg, horizons):
    """
    Median final Reg_d and Fit_d of MOSP per horizon, stepsizes recomputed for
    each T, with log-log slopes when more than one horizon is given.
    """
    horizons = [int(T) for T in horizons]
    if not horizons or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ArgumentError(f"horizons must be increasing, got {horizons}")
    records, failures = [], {}
    for T in horizons:
        logger.info("sweep: T=%d", T)
        sub = replace(cfg, T=T, mu_odg_list=(), benchmarks=("perslot",), restart_delta=None)
        result = run_experiment(sub)
        failures.update({(T, seed): err for seed, err in result.failures.items()})
        mosp = result.summary.loc["mosp"] if "mosp" in result.summary.index else None
        records.append({"T": T,
                        "regret_d": np.nan if mosp is None else float(mosp["regret_d"]),
                        "fit_d": np.nan if mosp is None else float(mosp["fit_d"])})
    table = pd.DataFrame(records, columns=["T", "regret_d", "fit_d"])
    regret = growth_check("Reg_d", horizons, table["regret_d"], REGRET_SLOPE_LIMIT, regret_ratio_limit)
    fit = growth_check("Fit_d", horizons, table["fit_d"], FIT_SLOPE_LIMIT, fit_ratio_limit)
    return SweepReport(table, regret, fit, failures)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--J", type=str)
    parser.add_argument("--K", type=str)
    parser.add_argument("--T", type=str)
    parser.add_argument("--case", help="case1, case2, constant or a scenario file")
    parser.add_argument("--seeds", help="comma-separated seeds")
    parser.add_argument("--alpha-scale", dest="alpha_scale")
    parser.add_argument("--mu-scale", dest="mu_scale")
    parser.add_argument("--beta")
    parser.add_argument("--mu-odg-list", dest="mu_odg_list")
    parser.add_argument("--benchmarks", help="comma-separated subset of perslot,offline,static")
    parser.add_argument("--restart-delta", dest="restart_delta")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--workers")
    parser.add_argument("--tol")
    parser.add_argument("--offline-limit", dest="offline_limit")
    parser.add_argument("--noncausal-sdg", dest="noncausal_sdg", action="store_const", const="true")
    parser.add_argument("--x0-start", dest="x0_start", help="MOSP start point: lower or center")


def _config_from_args(args):
    overrides = {name: getattr(args, name) for name in PARSERS if getattr(args, name, None) is not None}
    return parse_config(args.config, overrides)


def build_parser():
    parser = argparse.ArgumentParser(description="Online saddle-point experiments on a cloud network")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write results.csv")
    _add_config_flags(run)

    sweep = sub.add_parser("sweep", help="horizon sweep with log-log growth slopes")
    _add_config_flags(sweep)
    sweep.add_argument("--horizons", default="250,500,1000")

    validate = sub.add_parser("validate", help="run the invariant validation suite")
    validate.add_argument("--seed", type=int, default=1)

    export = sub.add_parser("export-scenario", help="write a generated scenario (and network) to disk")
    export.add_argument("--case", default="case1", choices=sorted(GENERATORS))
    export.add_argument("--J", type=int, default=10)
    export.add_argument("--K", type=int, default=10)
    export.add_argument("--T", type=int, default=500)
    export.add_argument("--seed", type=int, default=1)
    export.add_argument("--out", required=True)
    export.add_argument("--network-out")

    load = sub.add_parser("import-scenario", help="load a scenario file and report its shape")
    load.add_argument("path")
    return parser


def _print_summary(result, out):
    print("\nMedian final values over seeds:", file=out)
    print(result.summary.to_string(float_format=lambda v: f"{v:.6g}"), file=out)
    static = [r.static_regret for r in result.seeds if r.static_regret is not None]
    if static:
        print(f"\nMOSP static regret: median {np.median(static):.6g} over {len(static)} seeds", file=out)
    if result.failures:
        print(f"\nFailed seeds ({len(result.failures)}):", file=out)
        for seed, err in sorted(result.failures.items()):
            print(f"  seed {seed}: {err}", file=out)


def cmd_run(args):
    cfg = _config_from_args(args)
    result = run_experiment(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = emit_csv(result.rows, os.path.join(cfg.output_dir, "results.csv"))
    with open(os.path.join(cfg.output_dir, "summary.txt"), "w") as fh:
        _print_summary(result, fh)
    _print_summary(result, sys.stdout)
    print(f"\nSaved {len(result.rows)} rows to {csv_path}")
    return EXIT_OK if len(result.failures) < len(cfg.seeds) else EXIT_VALIDATION


def cmd_sweep(args):
    cfg = _config_from_args(args)
    horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    report = horizon_sweep(cfg, horizons)
    os.makedirs(cfg.output_dir, exist_ok=True)
    report.table.to_csv(os.path.join(cfg.output_dir, "sweep.csv"), index=False)
    print(report.table.to_string(index=False))
    print()
    for check in (report.regret, report.fit):
        print(f"[{check.status}] {check.metric}: {check.reason}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_validate(args):
    from validate_suite import print_report, run_suite
    results = run_suite(seed=args.seed)
    return print_report(results)


def cmd_export(args):
    stream = GENERATORS[args.case](args.J, args.K, args.T, args.seed)
    export_scenario(stream, args.out)
    print(f"Saved {args.case} scenario ({stream.T} slots) to {args.out}")
    if args.network_out:
        net, _, eps, _ = sample_valid_instance(args.J, args.K, args.T, args.seed, stream=stream)
        export_network(net, args.network_out)
        print(f"Saved network (Slater margin {eps:.4g}) to {args.network_out}")
    return EXIT_OK


def cmd_import(args):
    stream = import_scenario(args.path)
    print(f"{args.path}: case={stream.case} seed={stream.seed} T={stream.T} J={stream.J} K={stream.K}")
    print(f"  prices in [{stream.prices.min():.4g}, {stream.prices.max():.4g}]")
    print(f"  loads  in [{stream.loads.min():.4g}, {stream.loads.max():.4g}]")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate,
            "export-scenario": cmd_export, "import-scenario": cmd_import}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MospError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
