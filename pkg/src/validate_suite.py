"""
Invariant validation suite. Checks run on small instances (J, K <= 3,
T <= 50) except the ODG step tradeoff, which uses the full 10 x 10 network,
and the growth trend, which sweeps a few short horizons. Each check reports
PASS / FAIL / SKIP with the measured margin.

    python src/validate_suite.py --seed 1
"""
import argparse
import logging
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from baselines import odg_primal, run_odg
from check_results import check_results
from distributed_mosp import max_trace_deviation, run_distributed_mosp
from experiment import (FIT_SLOPE_LIMIT, GROWTH_BOUNDED, GROWTH_SUBLINEAR, GROWTH_UNMEASURED,
                        REGRET_SLOPE_LIMIT, ExperimentConfig, horizon_sweep, rows_to_frame, run_experiment)
from metrics import (STATUS_FAIL, STATUS_UNMET, bound_checks, constraint_variation, default_dual_cap,
                     drift_check, dual_variation, dynamic_fit, dynamic_regret, gap_bound,
                     minimizer_variation, optimality_gap, problem_constants, regret_bound_rhs,
                     restart_gap_bound, static_regret)
from netalloc import (build_incidence, export_scenario, gen_case1, gen_case2, gen_constant, gen_network,
                      network_constants, network_constraint, network_cost, network_cost_gradient,
                      network_problem_stream, sample_valid_instance)
from oco_core import LearnerState, horizon_stepsizes, mosp_primal_step, restart_schedule, run_mosp
from oracles import AffineConstraint, FeasibleBox, GeneralConstraint, QuadraticLoss, StepsizePair
from solvers import (DEFAULT_TOL, best_static, dual_function_value, offline_optimum, per_slot_optimum,
                     project_box)

logger = logging.getLogger(__name__)

PASS, FAIL, SKIP = "PASS", "FAIL", "SKIP"
SMALL_T = 50


@dataclass
class CheckResult:
    name: str
    status: str
    margin: float = math.nan
    detail: str = ""


def _status(ok):
    return PASS if ok else FAIL


def _network_run(case, J, K, T, seed):
    gen = gen_constant if case == "constant" else gen_case1
    stream = gen(J, K, T, seed)
    net, stream, eps, _ = sample_valid_instance(J, K, T, seed, stream=stream)
    problems = network_problem_stream(net, stream)
    steps = horizon_stepsizes(T, 1.0 / 3.0, 0.05, 50.0)
    trace = run_mosp(problems, net.box, steps)
    return net, stream, eps, problems, steps, trace


def _scalar_problems(offsets):
    """f_t(x) = x^2, g_t(x) = b_t - x on [0, 10]."""
    return [(QuadraticLoss([1.0]), AffineConstraint([[-1.0]], [b])) for b in offsets]


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def check_drift(seed):
    results = []
    for case in ("case1", "constant"):
        _, _, _, _, steps, trace = _network_run(case, 2, 3, SMALL_T, seed)
        ok = drift_check(trace, steps.mu)
        margin = min(steps.mu * float(r.lam @ r.constraint) + 0.5 * steps.mu ** 2 * float(r.constraint @ r.constraint)
                     - 0.5 * (float(r.lam_next @ r.lam_next) - float(r.lam @ r.lam)) for r in trace)
        results.append(CheckResult(f"dual drift inequality ({case})", _status(ok.all()), margin,
                                   f"{int(ok.sum())}/{len(ok)} slots"))
    return results


def check_drift_mutation():
    """A sign-flipped dual step must be caught by drift_check."""
    problems = _scalar_problems([1.0] * 10)
    box = FeasibleBox([0.0], [10.0])
    steps = StepsizePair(alpha=0.1, mu=1.0)

    def flipped(state, g, mu):
        return np.maximum(state.lam - mu * g, 0.0)

    honest = drift_check(run_mosp(problems, box, steps, x0=[10.0]), steps.mu)
    mutated = drift_check(run_mosp(problems, box, steps, x0=[10.0], dual_update=flipped), steps.mu)
    ok = honest.all() and not mutated.all()
    return CheckResult("drift check catches a sign-flipped dual step", _status(ok), math.nan,
                       f"honest {int(honest.sum())}/{len(honest)}, mutated {int(mutated.sum())}/{len(mutated)}")


def check_bounds(seed):
    results = []
    for case in ("constant", "case1"):
        net, stream, eps, problems, steps, trace = _network_run(case, 2, 3, SMALL_T, seed)
        G, M, R = network_constants(net, stream)
        v_g = constraint_variation(problems, net.box)
        report = bound_checks(trace, G, M, R, eps, steps, v_g.v_g_max)
        fit = report.fit
        dual = report.fit_dual_bound
        results.append(CheckResult(f"fit <= |lam_T+1|/mu ({case})", _status(fit <= dual + 1e-12),
                                   dual - fit))
        status = {STATUS_FAIL: FAIL, STATUS_UNMET: SKIP}.get(report.status, PASS)
        detail = report.status if report.status == STATUS_UNMET else \
            f"max |lam|={report.max_lambda_norm:.4g}, bound={report.lambda_bar:.4g}"
        results.append(CheckResult(f"multiplier bound ({case}, eps={eps:.3g}, Vg={v_g.v_g_max:.3g})",
                                   status, report.margins.get("lambda", math.nan), detail))
        if report.status == STATUS_UNMET:
            continue

        perslot = [per_slot_optimum(f, g, net.box, assume_feasible=True) for f, g in problems]
        bench = np.array([f.value(r.solution) for (f, _), r in zip(problems, perslot)])
        regret = float(dynamic_regret([r.loss for r in trace], bench)[-1])
        rhs = regret_bound_rhs(R, G, M, report.lambda_bar, minimizer_variation([r.solution for r in perslot]),
                           v_g.v_g_total, steps.alpha, steps.mu, len(trace))
        slack = 1.01 * rhs + len(trace) * 1e-6
        results.append(CheckResult(f"dynamic regret bound ({case})", _status(regret <= slack), slack - regret,
                                   f"Reg={regret:.4g}"))

        static = static_regret([r.loss for r in trace], problems, net.box)
        if static is None:
            results.append(CheckResult(f"static <= dynamic regret ({case})", SKIP, detail="static infeasible"))
        else:
            results.append(CheckResult(f"static <= dynamic regret ({case})",
                                       _status(static <= regret + 2e-6 * len(trace)), regret - static))
    return results


def check_distributed(seed):
    stream = gen_case1(3, 3, SMALL_T, seed)
    net, stream, _, _ = sample_valid_instance(3, 3, SMALL_T, seed, stream=stream)
    steps = horizon_stepsizes(SMALL_T, 1.0 / 3.0, 0.05, 50.0)
    central = run_mosp(network_problem_stream(net, stream), net.box, steps)
    dev = max_trace_deviation(run_distributed_mosp(net, stream, steps), central)
    return CheckResult("distributed == centralized MOSP", _status(dev < 1e-9), 1e-9 - dev, f"max dev {dev:.3g}")


def _grid_min(values, feasible):
    return float(np.min(np.where(feasible, values, np.inf)))


def check_solver_oracles():
    results = []
    axis = np.linspace(0.0, 1.0, 1001)
    X1, X2 = np.meshgrid(axis, axis, indexing="ij")
    grid_value = _grid_min(X1 ** 2 + X2 ** 2, 1.0 - X1 - X2 <= 1e-9)
    box = FeasibleBox([0.0, 0.0], [1.0, 1.0])
    loss = QuadraticLoss([1.0, 1.0])
    affine = AffineConstraint([[-1.0, -1.0]], [1.0])
    general = GeneralConstraint(lambda x: np.array([1.0 - x[0] - x[1]]),
                                lambda x: np.array([[-1.0, -1.0]]))
    for name, g in (("affine", affine), ("general", general)):
        value = loss.value(per_slot_optimum(loss, g, box).solution)
        err = abs(value - grid_value)
        results.append(CheckResult(f"per-slot solver vs grid ({name})", _status(err <= 1e-4), 1e-4 - err))

    problems = _scalar_problems([1.0, 2.0])
    box1 = FeasibleBox([0.0], [10.0])
    axis = np.linspace(0.0, 10.0, 1001)
    X1, X2 = np.meshgrid(axis, axis, indexing="ij")
    grid_off = _grid_min(X1 ** 2 + X2 ** 2, 3.0 - X1 - X2 <= 1e-9)
    xs, _ = offline_optimum(problems, box1)
    err = abs(sum(float(x[0] ** 2) for x in xs) - grid_off)
    results.append(CheckResult("offline solver vs grid", _status(err <= 1e-4), 1e-4 - err))

    grid_static = _grid_min(2.0 * axis ** 2, (1.0 - axis <= 1e-9) & (2.0 - axis <= 1e-9))
    static = best_static(problems, box1).solution
    err = abs(2.0 * float(static[0] ** 2) - grid_static)
    results.append(CheckResult("static solver vs grid", _status(err <= 1e-4), 1e-4 - err))
    return results


def check_odg_oracle(seed):
    stream = gen_case1(2, 3, 2, seed)
    net, stream, _, _ = sample_valid_instance(2, 3, 2, seed, stream=stream)
    lam = np.random.default_rng(seed).uniform(0.0, 50.0, size=net.I)
    prices, b = stream.prices[0], stream.b(1)
    x = odg_primal(lam, prices, b, net)
    weights = net.cost_weights(prices)
    shift = net.incidence.T @ lam
    grid_value = 0.0
    for i, cap in enumerate(net.box.upper):
        axis = np.arange(0.0, cap + 1e-3, 1e-3)
        axis = axis[axis <= cap]
        grid_value += float(np.min(weights[i] * axis ** 2 + shift[i] * axis))
    closed = float(weights @ (x * x) + shift @ x)
    err = abs(closed - grid_value)
    return CheckResult("ODG closed-form primal vs grid", _status(err <= 1e-3), 1e-3 - err)


def check_prox_paths(seed):
    stream = gen_case1(2, 3, 2, seed)
    net, stream, _, _ = sample_valid_instance(2, 3, 2, seed, stream=stream)
    rng = np.random.default_rng(seed)
    box = net.box
    A, b = net.incidence, stream.b(1)
    state = LearnerState(x_prev=rng.uniform(box.lower, box.upper), lam=rng.uniform(0.0, 5.0, size=net.I),
                         t=2, steps=StepsizePair(alpha=0.05, mu=1.0))
    loss = QuadraticLoss(net.cost_weights(stream.prices[0]))
    closed = mosp_primal_step(state, loss, AffineConstraint(A, b), box)
    general = GeneralConstraint(lambda x: A @ x + b, lambda x: A)
    iterative = mosp_primal_step(state, loss, general, box)
    err = float(np.max(np.abs(closed - iterative)))
    return CheckResult("general prox vs affine closed form", _status(err <= 1e-6), 1e-6 - err)


def check_gradients(seed):
    stream = gen_case1(2, 3, 1, seed)
    net, stream, _, _ = sample_valid_instance(2, 3, 1, seed, stream=stream)
    x = np.random.default_rng(seed).uniform(net.box.lower, net.box.upper)
    theta = stream.prices[0]
    analytic = network_cost_gradient(x, theta, net)
    h = 1e-3
    numeric = np.array([(network_cost(x + h * e, theta, net) - network_cost(x - h * e, theta, net)) / (2 * h)
                        for e in np.eye(x.size)])
    err = float(np.max(np.abs(analytic - numeric)))
    return CheckResult("cost gradient vs central differences", _status(err <= 1e-6), 1e-6 - err)


def check_gap_bound():
    problems = _scalar_problems([1.0, 2.0, 1.0, 2.0])
    T = len(problems)
    box = FeasibleBox([0.0], [10.0])
    steps = StepsizePair(alpha=0.1, mu=1.0)
    trace = run_mosp(problems, box, steps)
    perslot = [per_slot_optimum(f, g, box) for f, g in problems]
    bench = np.array([f.value(r.solution) for (f, _), r in zip(problems, perslot)])
    xs, _ = offline_optimum(problems, box)
    offline = [f.value(x) for (f, _), x in zip(problems, xs)]
    gap = optimality_gap([r.loss for r in trace], offline, bench)
    results = [CheckResult("OptGap = U1 + U2", _status(gap.identity_error <= 1e-9), 1e-9 - gap.identity_error,
                           f"gap={gap.gap:.6g}, U1={gap.u1:.6g}, U2={gap.u2:.6g}")]

    G, M, R = problem_constants(problems, box)
    v_g = constraint_variation(problems, box)
    eps = 8.0  # x = 10 leaves slack 10 - max_t b_t
    cap = default_dual_cap(G, M, R, eps, v_g.v_g_max, steps)
    v_dual = dual_variation(problems, box, cap)
    rhs = 2.0 * T * v_dual
    results.append(CheckResult("U2 <= 2T V(D)", _status(gap.u2 <= rhs + 1e-6), rhs - gap.u2,
                               f"lam cap {cap:.4g}"))
    bound = gap_bound(gap.u1, T, v_dual)
    results.append(CheckResult("OptGap <= Reg_d + 2T V(D)", _status(gap.gap <= bound + 1e-6), bound - gap.gap))

    delta = 2
    restarted = run_mosp(problems, box, steps, restart_period=delta)
    losses = np.array([r.loss for r in restarted])
    restarted_gap = optimality_gap(losses, offline, bench)
    block_regret = max(float(np.sum(losses[s - 1:s - 1 + delta] - bench[s - 1:s - 1 + delta]))
                       for s in restart_schedule(T, delta))
    bound = restart_gap_bound(block_regret, T, delta, v_dual)
    results.append(CheckResult(f"restarted OptGap <= ceil(T/D) Reg_D + 2D V(D) (D={delta})",
                               _status(restarted_gap.gap <= bound + 1e-6), bound - restarted_gap.gap,
                               f"gap={restarted_gap.gap:.6g}, max block Reg={block_regret:.6g}"))
    return results


def check_restart_equivalence(seed):
    """Restarting once per horizon is the plain run."""
    net, _, _, problems, steps, trace = _network_run("case1", 2, 3, SMALL_T, seed)
    restarted = run_mosp(problems, net.box, steps, restart_period=SMALL_T)
    dev = max_trace_deviation(trace, restarted)
    return CheckResult("restart period T == no restart", _status(dev == 0.0), 0.0 - dev, f"max dev {dev:.3g}")


def check_queue_relaxation():
    """
    With a backlog that never clears (f = x^2, g = 5 - x on [0, 1]) the
    virtual queue dominates the running constraint sum and mu q_{t+1} equals
    lam_{t+1}.
    """
    problems = [(QuadraticLoss([1.0]), AffineConstraint([[-1.0]], [5.0])) for _ in range(40)]
    mu = 0.3
    trace = run_mosp(problems, FeasibleBox([0.0], [1.0]), StepsizePair(alpha=0.1, mu=mu))
    running = np.cumsum([r.constraint for r in trace], axis=0)
    queues = np.array([r.queue for r in trace])
    relax = float(np.min(queues - running))
    results = [CheckResult("queue >= running constraint sum", _status(relax >= -1e-9), relax)]
    worst = max(float(np.max(np.abs(mu * r.queue - r.lam_next))) / max(1.0, float(np.max(r.lam_next)))
                for r in trace)
    results.append(CheckResult("mu q_{t+1} = lam_{t+1}", _status(worst <= 1e-9), 1e-9 - worst))
    return results


def check_projection(seed, pairs=1000):
    stream = gen_case1(2, 3, 1, seed)
    net, _, _, _ = sample_valid_instance(2, 3, 1, seed, stream=stream)
    box = net.box
    span = box.upper - box.lower
    rng = np.random.default_rng(seed)
    xs = rng.uniform(box.lower - span, box.upper + span, size=(pairs, box.dim))
    ys = rng.uniform(box.lower - span, box.upper + span, size=(pairs, box.dim))
    px, py = project_box(xs, box), project_box(ys, box)
    idempotence = float(np.max(np.abs(project_box(px, box) - px)))
    expansion = float(np.max(np.linalg.norm(px - py, axis=1) - np.linalg.norm(xs - ys, axis=1)))
    return [CheckResult("projection is idempotent", _status(idempotence == 0.0), 0.0 - idempotence),
            CheckResult("projection is non-expansive", _status(expansion <= 1e-12), 0.0 - expansion,
                        f"{pairs} random pairs")]


def check_duality(seed, samples=200):
    stream = gen_case1(2, 3, 1, seed)
    net, stream, _, _ = sample_valid_instance(2, 3, 1, seed, stream=stream)
    f, g = network_problem_stream(net, stream)[0]
    x_star = project_box(per_slot_optimum(f, g, net.box, assume_feasible=True).solution, net.box)
    upper = f.value(x_star)
    violation = np.maximum(g.value(x_star), 0.0)
    lams = np.random.default_rng(seed).uniform(0.0, 50.0, size=(samples, net.I))
    weak = min(upper + float(lam @ violation) - dual_function_value(f, g, lam, net.box).value
               - 1e-9 * max(1.0, abs(upper)) for lam in lams)
    results = [CheckResult("weak duality D(lam) <= f(x*) + lam^T [g(x*)]^+", _status(weak >= 0.0), weak,
                           f"{samples} random lam")]

    # f = x^2, g = 2 - x on [0, 10]: p* = D(4) = 4
    scalar_f, scalar_g = _scalar_problems([2.0])[0]
    box = FeasibleBox([0.0], [10.0])
    p_star = scalar_f.value(per_slot_optimum(scalar_f, scalar_g, box).solution)
    d_star = max(dual_function_value(scalar_f, scalar_g, [lam], box).value for lam in np.linspace(0.0, 20.0, 2001))
    tol = 10.0 * DEFAULT_TOL
    gap = abs(p_star - d_star)
    results.append(CheckResult("strong duality on a scalar slot", _status(gap <= tol), tol - gap,
                               f"p*={p_star:.8g}, max D={d_star:.8g}"))
    return results


def check_incidence(seed):
    J, K = 3, 2
    A = build_incidence(J, K)
    ok = A.shape == (J + K, J * K + K)
    for j in range(J):
        for k in range(K):
            column = np.zeros(J + K)
            column[j], column[J + k] = -1.0, 1.0
            ok &= np.array_equal(A[:, j * K + k], column)
    for k in range(K):
        column = np.zeros(J + K)
        column[J + k] = -1.0
        ok &= np.array_equal(A[:, J * K + k], column)
    results = [CheckResult("incidence columns: link j->k, server k", _status(ok))]

    stream = gen_case1(J, K, 1, seed)
    net = gen_network(J, K, seed)
    x = np.random.default_rng(seed).uniform(net.box.lower, net.box.upper)
    flows, service = net.split(x)
    g = network_constraint(x, stream.b(1), net.incidence)
    expected = np.concatenate([stream.loads[0] - flows.sum(axis=1), flows.sum(axis=0) - service])
    err = float(np.max(np.abs(g - expected)))
    results.append(CheckResult("A x + b = (b^j - sum_k x^jk, sum_j x^jk - y^k)", _status(err <= 1e-9),
                               1e-9 - err))
    return results


def check_scenario_bytes(seed):
    with tempfile.TemporaryDirectory() as tmp:
        blobs = []
        for name in ("first.csv", "second.csv"):
            path = os.path.join(tmp, name)
            export_scenario(gen_case2(2, 3, 48, seed), path)
            with open(path, "rb") as fh:
                blobs.append(fh.read())
    return CheckResult("same seed exports byte-identical scenarios", _status(blobs[0] == blobs[1]),
                       detail=f"{len(blobs[0])} bytes")


def check_odg_tradeoff(seeds=range(1, 21), J=10, K=10, T=500):
    """A larger ODG step serves more of the backlog: higher cost, lower fit."""
    costs = {0.5: [], 1.0: []}
    fits = {0.5: [], 1.0: []}
    for seed in seeds:
        net, stream = gen_network(J, K, seed), gen_case1(J, K, T, seed)
        for mu in costs:
            trace = run_odg(stream, net, mu)
            costs[mu].append(sum(r.loss for r in trace))
            fits[mu].append(float(dynamic_fit([r.constraint for r in trace])[-1]))
    cost_margin = float(np.median(costs[1.0]) - np.median(costs[0.5]))
    fit_margin = float(np.median(fits[0.5]) - np.median(fits[1.0]))
    return [CheckResult("ODG(1) costs at least ODG(0.5)", _status(cost_margin >= 0.0), cost_margin),
            CheckResult("ODG(1) fit at most ODG(0.5)", _status(fit_margin >= 0.0), fit_margin)]


def check_growth_trend(horizons=(50, 100, 200), seeds=(1, 2, 3)):
    cfg = ExperimentConfig(J=2, K=2, case="constant", seeds=tuple(seeds), mu_odg_list=())
    report = horizon_sweep(cfg, list(horizons))
    status = {GROWTH_SUBLINEAR: PASS, GROWTH_BOUNDED: PASS, GROWTH_UNMEASURED: SKIP}
    results = []
    for check, limit in ((report.regret, REGRET_SLOPE_LIMIT), (report.fit, FIT_SLOPE_LIMIT)):
        margin = math.nan if check.slope is None else limit - check.slope
        results.append(CheckResult(f"{check.metric} growth over T={', '.join(map(str, horizons))}",
                                   status.get(check.status, FAIL), margin, f"{check.status}: {check.reason}"))
    return results


def check_experiment_rows(seed):
    cfg = ExperimentConfig(J=2, K=3, T=24, seeds=(seed, seed + 1, seed + 2),
                           benchmarks=("perslot", "offline", "static"))
    first = run_experiment(cfg)
    second = run_experiment(cfg)
    frame = rows_to_frame(first.rows)
    results = [CheckResult("identical config gives identical CSV",
                           _status(frame.to_csv(index=False) == rows_to_frame(second.rows).to_csv(index=False)))]
    if first.failures:
        results.append(CheckResult("tiny experiment runs every seed", FAIL, detail=str(first.failures)))
        return results
    for status, message in check_results(frame, cfg.T):
        if status != "INFO":
            results.append(CheckResult(f"results table: {message}", status))

    worst = 0.0
    for _, group in frame.groupby("seed"):
        mosp = group[group["algorithm"] == "mosp"]
        gap = optimality_gap(mosp["cost"], mosp["cost_offline"], mosp["cost_perslot"])
        worst = max(worst, gap.identity_error)
    results.append(CheckResult("OptGap = U1 + U2 on network runs", _status(worst <= 1e-9), 1e-9 - worst))
    return results


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run_suite(seed=1):
    results = []
    results += check_drift(seed)
    results.append(check_drift_mutation())
    results += check_bounds(seed)
    results.append(check_distributed(seed))
    results += check_solver_oracles()
    results.append(check_odg_oracle(seed))
    results.append(check_prox_paths(seed))
    results.append(check_gradients(seed))
    results += check_gap_bound()
    results.append(check_restart_equivalence(seed))
    results += check_queue_relaxation()
    results += check_projection(seed)
    results += check_duality(seed)
    results += check_incidence(seed)
    results.append(check_scenario_bytes(seed))
    results += check_odg_tradeoff()
    results += check_growth_trend()
    results += check_experiment_rows(seed)
    return results


def print_report(results):
    """Print one line per check; returns the process exit code."""
    print("Validation suite")
    for r in results:
        margin = "" if math.isnan(r.margin) else f" (margin {r.margin:.3g})"
        detail = f" - {r.detail}" if r.detail else ""
        print(f"   [{r.status}] {r.name}{margin}{detail}")
    failed = sum(r.status == FAIL for r in results)
    print(f"\n{len(results) - failed}/{len(results)} checks without failure")
    return 1 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(description="Run the invariant validation suite")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    return print_report(run_suite(args.seed))


if __name__ == "__main__":
    raise SystemExit(main())
