"""
Performance and feasibility functionals for online runs: regrets, fit,
optimality gap, environment variation measures and the runtime bound checks.
All functions are pure.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import ArgumentError, InfeasibleProblemError, ResourceLimitError
from oracles import MAX_VERTEX_DIM, QuadraticLoss
from solvers import DEFAULT_TOL, best_static, dual_function_value

logger = logging.getLogger(__name__)

DRIFT_SLACK = 1e-9
IDENTITY_TOL = 1e-9
DUAL_GRID_POINTS = 41
DUAL_GRID_LIMIT = 200_000
CONSTRAINT_SAMPLES = 512

STATUS_PASS = "pass"
STATUS_FAIL = "fail"
STATUS_UNMET = "hypothesis unmet"


@dataclass
class MetricSeries:
    """Per-slot cumulative quantities of one run, all of length T."""
    regret_d: np.ndarray
    fit_d: np.ndarray
    avg_cost: np.ndarray
    lambda_norm: np.ndarray
    queue_norm: Optional[np.ndarray] = None
    static_regret: Optional[float] = None

    @property
    def T(self):
        return len(self.regret_d)


@dataclass
class VariationBudget:
    v_g_per_slot: np.ndarray
    v_g_max: float
    v_g_total: float
    v_xstar_total: float = 0.0
    v_dual_total: float = 0.0
    lower_bound: bool = False  # True when V(g_t) came from sampling


@dataclass
class GapDecomposition:
    gap: float
    u1: float
    u2: float

    @property
    def identity_error(self):
        return abs(self.gap - (self.u1 + self.u2))


@dataclass
class BoundReport:
    status: str
    lambda_bar: float = math.nan
    max_lambda_norm: float = math.nan
    fit: float = math.nan
    fit_dual_bound: float = math.nan
    margins: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status != STATUS_FAIL


def _series(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ArgumentError(f"{name} must be a 1-d series")
    return arr


def _same_length(a, b, what):
    if len(a) != len(b):
        raise ArgumentError(f"{what}: length mismatch ({len(a)} vs {len(b)})")


# ---------------------------------------------------------------------------
# Regret, fit, optimality gap
# ---------------------------------------------------------------------------

def dynamic_regret(losses_online, losses_benchmark):
    """Cumulative sum_t f_t(x_t) - f_t(x_t*)."""
    online = _series(losses_online, "losses_online")
    bench = _series(losses_benchmark, "losses_benchmark")
    _same_length(online, bench, "dynamic_regret")
    return np.cumsum(online - bench)


def static_regret(losses_online, problems, box, tol=DEFAULT_TOL):
    """
    sum_t f_t(x_t) - sum_t f_t(x*) against the best fixed feasible x*.
    Returns None when no single x satisfies every slot's constraint.
    """
    online = _series(losses_online, "losses_online")
    problems = list(problems)
    _same_length(online, problems, "static_regret")
    try:
        report = best_static(problems, box, tol)
    except InfeasibleProblemError as exc:
        logger.info("static benchmark infeasible (slack %.3g); static regret undefined", exc.slack)
        return None
    fixed = np.array([f.value(report.solution) for f, _ in problems])
    return float(online.sum() - fixed.sum())


def dynamic_fit(g_values):
    """At each T', || [sum_{t<=T'} g_t(x_t)]^+ ||."""
    rows = [np.atleast_1d(np.asarray(g, dtype=float)) for g in g_values]
    if not rows:
        return np.zeros(0)
    m = rows[0].shape
    if any(r.shape != m for r in rows):
        raise ArgumentError("constraint values change dimension across slots")
    running = np.cumsum(np.vstack(rows), axis=0)
    return np.linalg.norm(np.maximum(running, 0.0), axis=1)


def optimality_gap(losses_online, losses_offline, losses_perslot):
    """
    OptGap = sum f_t(x_t) - sum f_t(x_t^off), split as U1 (dynamic regret
    total) plus U2 = sum f_t(x_t*) - sum f_t(x_t^off).
    """
    online = _series(losses_online, "losses_online")
    offline = _series(losses_offline, "losses_offline")
    perslot = _series(losses_perslot, "losses_perslot")
    _same_length(online, offline, "optimality_gap")
    _same_length(online, perslot, "optimality_gap")
    gap = math.fsum(online) - math.fsum(offline)
    u1 = math.fsum(online - perslot)
    u2 = math.fsum(perslot) - math.fsum(offline)
    result = GapDecomposition(gap, u1, u2)
    scale = max(1.0, math.fsum(np.abs(online)))
    if result.identity_error > IDENTITY_TOL * scale:
        logger.warning("OptGap identity off by %.3g", result.identity_error)
    return result


def queue_norms(g_values):
    """||q_t|| for the virtual queue q_{t+1} = [q_t + g_t]^+ started at 0."""
    norms = []
    q = None
    for g in g_values:
        g = np.atleast_1d(np.asarray(g, dtype=float))
        q = np.maximum((np.zeros_like(g) if q is None else q) + g, 0.0)
        norms.append(float(np.linalg.norm(q)))
    return np.array(norms)


def collect_series(losses, g_values, lam_norms, losses_benchmark):
    """MetricSeries for one run (online or benchmark) against the per-slot benchmark."""
    losses = _series(losses, "losses")
    g_values = list(g_values)
    T = len(losses)
    return MetricSeries(
        regret_d=dynamic_regret(losses, losses_benchmark),
        fit_d=dynamic_fit(g_values),
        avg_cost=np.cumsum(losses) / np.arange(1, T + 1),
        lambda_norm=_series(lam_norms, "lam_norms"),
        queue_norm=queue_norms(g_values),
    )


def trace_series(trace, losses_benchmark):
    """collect_series for a RoundTrace run; lambda_norm reports ||lam_{t+1}||."""
    return collect_series([r.loss for r in trace], [r.constraint for r in trace],
                          [np.linalg.norm(r.lam_next) for r in trace], losses_benchmark)


# ---------------------------------------------------------------------------
# Variation measures
# ---------------------------------------------------------------------------

def _sample_points(box, samples, seed):
    points = []
    if box.dim <= MAX_VERTEX_DIM:
        points.extend(box.vertices())
    rng = np.random.default_rng(seed)
    points.extend(rng.uniform(box.lower, box.upper, size=(samples, box.dim)))
    return points


def constraint_variation(problems, box, samples=CONSTRAINT_SAMPLES, seed=0):
    """
    V(g_t) = max over the box of ||[g_{t+1}(x) - g_t(x)]^+|| for t = 1..T.
    The last slot has no successor and contributes 0.

    Shared A: the difference is the constant b_{t+1} - b_t. Differing A: the
    norm of an affine positive part is convex, so its max sits at a vertex.
    General constraints: max over box vertices (n <= 16) and uniform samples,
    reported as a lower bound.
    """
    constraints = [p[1] for p in problems]
    T = len(constraints)
    if T == 0:
        raise ArgumentError("constraint_variation needs at least one slot")
    per_slot = np.zeros(T)
    lower_bound = False
    points = None
    for t in range(T - 1):
        g, g_next = constraints[t], constraints[t + 1]
        if g.kind == "affine" and g_next.kind == "affine":
            if g.A.shape == g_next.A.shape and np.array_equal(g.A, g_next.A):
                per_slot[t] = np.linalg.norm(np.maximum(g_next.b - g.b, 0.0))
                continue
            dA, db = g_next.A - g.A, g_next.b - g.b
            per_slot[t] = max(float(np.linalg.norm(np.maximum(dA @ v + db, 0.0)))
                              for v in box.vertices())
            continue
        if points is None:
            points = _sample_points(box, samples, seed)
        lower_bound = True
        per_slot[t] = max(float(np.linalg.norm(np.maximum(g_next.value(x) - g.value(x), 0.0)))
                          for x in points)
    return VariationBudget(per_slot, float(per_slot.max()), float(per_slot.sum()),
                           lower_bound=lower_bound)


def minimizer_variation(benchmark):
    """sum_t ||x_t* - x_{t-1}*|| with x_0* = x_1*."""
    xs = [np.asarray(x, dtype=float) for x in benchmark]
    if not xs:
        raise ArgumentError("minimizer_variation needs a non-empty benchmark")
    return float(sum(np.linalg.norm(b - a) for a, b in zip(xs, xs[1:])))


def _lambda_grid(m, cap, points):
    if points ** m > DUAL_GRID_LIMIT:
        raise ResourceLimitError(f"dual grid of {points}^{m} points exceeds {DUAL_GRID_LIMIT}")
    axis = np.linspace(0.0, cap, points)
    mesh = np.meshgrid(*([axis] * m), indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def _dual_values_on_grid(loss, g, grid, box):
    if isinstance(loss, QuadraticLoss) and g.kind == "affine":
        shift = grid @ g.A + loss.linear
        x = np.clip(-shift / (2.0 * loss.weights), box.lower, box.upper)
        return np.sum(loss.weights * x * x + shift * x, axis=1) + grid @ g.b
    return np.array([dual_function_value(loss, g, lam, box).value for lam in grid])


def dual_variation(problems, box, lambda_grid_cap, points=DUAL_GRID_POINTS):
    """
    V({D_t}) = sum_t max over lam in [0, cap]^m of |D_{t+1}(lam) - D_t(lam)|,
    evaluated on a uniform grid of `points` values per axis (endpoints
    included). Being a grid maximum it is a lower bound on the true value.
    """
    problems = list(problems)
    if not problems:
        raise ArgumentError("dual_variation needs at least one slot")
    if lambda_grid_cap <= 0:
        raise ArgumentError(f"dual grid cap must be positive, got {lambda_grid_cap}")
    m = problems[0][1].value(box.lower).size
    grid = _lambda_grid(m, lambda_grid_cap, points)
    values = [_dual_values_on_grid(f, g, grid, box) for f, g in problems]
    total = sum(float(np.max(np.abs(b - a))) for a, b in zip(values, values[1:]))
    logger.debug("dual variation %.6g on a %d-point grid (cap %.4g)", total, len(grid), lambda_grid_cap)
    return total


def gap_bound(regret_total, T, v_dual):
    """OptGap <= Reg_d + 2 T V({D_t})."""
    return regret_total + 2.0 * T * v_dual


def restart_gap_bound(reg_subhorizon, T, delta_T, v_dual):
    """Gap bound with the dual iterate restarted every delta_T slots."""
    if delta_T <= 0:
        raise ArgumentError(f"restart period must be positive, got {delta_T}")
    return math.ceil(T / delta_T) * reg_subhorizon + 2.0 * delta_T * v_dual


# ---------------------------------------------------------------------------
# Runtime bound checks
# ---------------------------------------------------------------------------

def drift_check(trace, mu):
    """
    Per slot: (||lam_{t+1}||^2 - ||lam_t||^2) / 2
              <= rhs = mu lam_t^T g_t(x_t) + mu^2 ||g_t(x_t)||^2 / 2
    up to 1e-9 max(1, |rhs|); roundoff on both sides scales with ||lam||^2.
    """
    ok = np.zeros(len(trace), dtype=bool)
    for i, r in enumerate(trace):
        lhs = 0.5 * (float(r.lam_next @ r.lam_next) - float(r.lam @ r.lam))
        rhs = mu * float(r.lam @ r.constraint) + 0.5 * mu * mu * float(r.constraint @ r.constraint)
        ok[i] = lhs <= rhs + DRIFT_SLACK * max(1.0, abs(rhs))
    return ok


def problem_constants(problems, box):
    """
    Measured (G, M, R). G bounds ||grad f_t|| over the box, M bounds
    ||g_t(x)|| over the box and R = ||upper - lower||. Vertex enumeration is
    exact for affine g when n <= 16; larger affine problems use a row-wise
    interval bound.
    """
    G = 0.0
    M = 0.0
    small = box.dim <= MAX_VERTEX_DIM
    for loss, g in problems:
        if isinstance(loss, QuadraticLoss):
            G = max(G, loss.grad_norm_bound(box))
        elif loss.grad_bound is not None:
            G = max(G, float(loss.grad_bound))
        elif small:
            G = max(G, max(float(np.linalg.norm(loss.gradient(v))) for v in box.vertices()))
        else:
            raise ArgumentError("cannot bound the gradient of a general loss in high dimension")

        if small:
            M = max(M, max(float(np.linalg.norm(g.value(v))) for v in box.vertices()))
        elif g.kind == "affine":
            hi = np.maximum(g.A, 0.0) @ box.upper + np.minimum(g.A, 0.0) @ box.lower + g.b
            lo = np.minimum(g.A, 0.0) @ box.upper + np.maximum(g.A, 0.0) @ box.lower + g.b
            M = max(M, float(np.linalg.norm(np.maximum(np.abs(hi), np.abs(lo)))))
        else:
            raise ArgumentError("cannot bound a general constraint in high dimension")
    return G, M, box.radius


def lambda_bound(G, M, R, epsilon, v_g_max, steps):
    """
    mu M + (2 G R + R^2 / (2 alpha) + mu M^2 / 2) / (epsilon - V_bar(g)),
    or None when epsilon <= V_bar(g).
    """
    headroom = epsilon - v_g_max
    if headroom <= 0:
        return None
    alpha, mu = steps.alpha, steps.mu
    return mu * M + (2.0 * G * R + R * R / (2.0 * alpha) + mu * M * M / 2.0) / headroom


def default_dual_cap(G, M, R, epsilon, v_g_max, steps):
    """Grid cap for dual_variation: twice the multiplier bound, None if not computable."""
    bound = lambda_bound(G, M, R, epsilon, v_g_max, steps)
    return None if bound is None else 2.0 * bound


def regret_bound_rhs(R, G, M, lambda_bar, v_xstar, v_g, alpha, mu, T):
    """Dynamic regret bound assembled from measured constants."""
    return (R * v_xstar / alpha + lambda_bar * v_g + R * R / (2.0 * alpha)
            + alpha * G * G * T / 2.0 + mu * M * M * (T + 1) / 2.0)


def bound_checks(trace, G, M, R, epsilon, steps, v_g_max):
    """
    Fit_T <= ||lam_{T+1}|| / mu holds on every run. When epsilon > V_bar(g)
    every ||lam_t|| must also stay below the multiplier bound, and Fit_T below
    that bound over mu; otherwise the report carries "hypothesis unmet".
    """
    fit = float(dynamic_fit([r.constraint for r in trace])[-1])
    lam_last = float(np.linalg.norm(trace[-1].lam_next))
    fit_dual_bound = lam_last / steps.mu
    margins = {"fit_vs_dual": fit_dual_bound - fit}
    fit_ok = fit <= fit_dual_bound * (1.0 + 1e-12) + 1e-12

    norms = [float(np.linalg.norm(r.lam)) for r in trace] + [lam_last]
    max_norm = max(norms)
    bar = lambda_bound(G, M, R, epsilon, v_g_max, steps)
    if bar is None:
        status = STATUS_UNMET if fit_ok else STATUS_FAIL
        return BoundReport(status, math.nan, max_norm, fit, fit_dual_bound, margins)

    margins["lambda"] = bar - max_norm
    margins["fit_vs_bar"] = bar / steps.mu - fit
    ok = fit_ok and max_norm <= bar and fit <= bar / steps.mu
    return BoundReport(STATUS_PASS if ok else STATUS_FAIL, bar, max_norm, fit, fit_dual_bound, margins)
