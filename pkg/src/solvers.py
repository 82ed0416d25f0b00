"""
Numerical subroutines: box projection, the MOSP prox step for general
constraints, and the benchmark solvers for the per-slot optimum, the offline
optimum, the best static solution and the per-slot dual function.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from errors import (ArgumentError, InfeasibleProblemError, ResourceLimitError,
                    SolverFailureError)
from oracles import (AffineConstraint, CallableLoss, FeasibleBox, QuadraticLoss,
                     StackedConstraint, check_finite)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
PROX_TOL = 1e-8
PROX_MAX_ITER = 10_000
OFFLINE_SIZE_LIMIT = 1_000_000


@dataclass
class SaddleSolveReport:
    solution: np.ndarray
    multiplier: np.ndarray
    kkt_residual: float
    iterations: int


@dataclass
class DualFunctionValue:
    value: float
    minimizer: np.ndarray


def project_box(x, box):
    """Euclidean projection onto the box (componentwise clamp)."""
    return np.clip(np.asarray(x, dtype=float), box.lower, box.upper)


# ---------------------------------------------------------------------------
# MOSP prox step, general constraints
# ---------------------------------------------------------------------------

def solve_prox_general(grad, g, lam, x_prev, alpha, box, tol=PROX_TOL, max_iter=PROX_MAX_ITER):
    """
    Minimize  grad^T (x - x_prev) + lam^T g(x) + ||x - x_prev||^2 / (2 alpha)  over the box.

    Projected gradient with backtracking; the objective is (1/alpha)-strongly
    convex so the iterates contract. Stops once the step-to-step displacement
    drops below tol.
    """
    grad = np.asarray(grad, dtype=float)
    lam = np.asarray(lam, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)

    def objective(x):
        d = x - x_prev
        return float(grad @ d + lam @ g.value(x) + d @ d / (2.0 * alpha))

    def gradient(x):
        return grad + g.jacobian(x).T @ lam + (x - x_prev) / alpha

    x = project_box(x_prev, box)
    step = alpha
    displacement = np.inf
    for it in range(1, max_iter + 1):
        gx = check_finite(gradient(x), "prox gradient")
        fx = objective(x)
        while True:
            x_new = project_box(x - step * gx, box)
            d = x_new - x
            if objective(x_new) <= fx + gx @ d + d @ d / (2.0 * step) + 1e-15 * abs(fx):
                break
            step *= 0.5
            if step < 1e-16:
                raise SolverFailureError("prox line search stalled", float(np.linalg.norm(d)), it)
        displacement = float(np.linalg.norm(x_new - x))
        x = x_new
        if displacement < tol:
            return x
        # let the step grow back after a backtrack
        step = min(step * 1.5, alpha)
    raise SolverFailureError("prox solver hit its iteration cap", displacement, max_iter)


# ---------------------------------------------------------------------------
# KKT diagnostics and feasibility phase
# ---------------------------------------------------------------------------

def kkt_residual(loss, g, x, lam, box):
    """
    max of: primal infeasibility max_i [g_i(x)]^+, projected stationarity
    ||x - P(x - grad_x L)||_inf, and scaled complementarity max_i |lam_i g_i| / (1 + lam_i).
    """
    gx = g.value(x)
    lagr_grad = loss.gradient(x) + g.jacobian(x).T @ lam
    primal = float(np.max(np.maximum(gx, 0.0), initial=0.0))
    station = float(np.max(np.abs(x - project_box(x - lagr_grad, box)), initial=0.0))
    comp = float(np.max(np.abs(lam * gx) / (1.0 + lam), initial=0.0))
    return max(primal, station, comp)


def feasibility_slack(g, box):
    """
    Phase-I: the smallest achievable max_i g_i(x) over the box (affine case), or
    the largest violation left after minimizing ||[g(x)]^+||^2 (general case).
    Returns (slack, witness).
    """
    if g.kind == "affine":
        n = box.dim
        m = g.A.shape[0]
        c = np.zeros(n + 1)
        c[-1] = 1.0
        A_ub = np.hstack([g.A, -np.ones((m, 1))])
        bounds = box.bounds() + [(None, None)]
        res = linprog(c, A_ub=A_ub, b_ub=-g.b, bounds=bounds, method="highs")
        if res.status != 0:
            raise SolverFailureError(f"phase-I LP failed: {res.message}")
        return float(res.x[-1]), res.x[:n]

    def penalty(x):
        v = np.maximum(g.value(x), 0.0)
        return float(v @ v), 2.0 * g.jacobian(x).T @ v

    x0 = 0.5 * (box.lower + box.upper)
    res = minimize(penalty, x0, jac=True, method="L-BFGS-B", bounds=box.bounds(),
                   options={"ftol": 1e-20, "gtol": 1e-14, "maxiter": 10_000})
    x = project_box(res.x, box)
    return float(np.max(np.maximum(g.value(x), 0.0), initial=0.0)), x


def require_feasible(g, box, tol):
    slack, _ = feasibility_slack(g, box)
    if slack > tol:
        raise InfeasibleProblemError("constraint set has no point inside the box", slack)
    return slack


# ---------------------------------------------------------------------------
# Separable-quadratic + affine fast path: exact dual ascent
# ---------------------------------------------------------------------------

class SeparableDual:
    """
    Dual function of  min sum_t [w_t^T x_t^2 + h_t^T x_t]  s.t.  sum_t (A x_t + b_t) <= 0,
    x_t in box.  Each inner minimization is a per-coordinate clamp, so the dual is
    a concave piecewise quadratic in lambda. T = 1 gives the per-slot dual.
    """

    def __init__(self, weights, linear, A, b_sum, box):
        self.weights = np.atleast_2d(weights)
        self.linear = np.atleast_2d(linear)
        self.A = A
        self.b_sum = b_sum
        self.box = box

    def primal(self, lam):
        shift = self.A.T @ lam
        raw = -(self.linear + shift) / (2.0 * self.weights)
        X = np.clip(raw, self.box.lower, self.box.upper)
        free = (raw > self.box.lower) & (raw < self.box.upper)
        return X, free

    def evaluate(self, lam):
        X, free = self.primal(lam)
        cost = float(np.sum(self.weights * X * X + self.linear * X))
        grad = self.A @ X.sum(axis=0) + self.b_sum
        value = cost + float(lam @ grad)
        curvature = np.sum(free / (2.0 * self.weights), axis=0)
        return value, grad, curvature, X

    def projected_grad_norm(self, lam, grad):
        pg = np.where(lam > 0.0, grad, np.maximum(grad, 0.0))
        return float(np.max(np.abs(pg), initial=0.0))

    def maximize(self, tol, max_iter=5000, lam0=None):
        m = self.A.shape[0]
        lam = np.zeros(m) if lam0 is None else np.maximum(np.asarray(lam0, dtype=float), 0.0)

        def neg(l):
            value, grad, _, _ = self.evaluate(l)
            return -value, -grad

        res = minimize(neg, lam, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * m,
                       options={"maxiter": max_iter, "ftol": 1e-16, "gtol": tol * 1e-3,
                                "maxcor": 30})
        lam = np.maximum(res.x, 0.0)
        iterations = int(res.nit)
        lam, polish_its = self._newton_polish(lam, tol)
        return lam, iterations + polish_its

    def _newton_polish(self, lam, tol, max_iter=100):
        """Projected Newton on the quadratic piece selected by the current clamp pattern."""
        value, grad, curvature, _ = self.evaluate(lam)
        it = 0
        for it in range(1, max_iter + 1):
            if self.projected_grad_norm(lam, grad) <= tol * 1e-2:
                break
            pinned = (lam <= 1e-14 * (1.0 + np.max(lam, initial=0.0))) & (grad < 0.0)
            S = ~pinned
            if not np.any(S):
                break
            H = (self.A[S] * curvature) @ self.A[S].T
            d = np.zeros_like(lam)
            d[S] = np.linalg.lstsq(H, grad[S], rcond=None)[0]
            step = 1.0
            improved = False
            for _ in range(40):
                cand = np.maximum(lam + step * d, 0.0)
                c_value, c_grad, c_curv, _ = self.evaluate(cand)
                if c_value >= value - 1e-15 * abs(value):
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
            moved = float(np.max(np.abs(cand - lam), initial=0.0))
            lam, value, grad, curvature = cand, c_value, c_grad, c_curv
            if moved == 0.0:
                break
        return lam, it


def _is_separable_affine(losses, constraints):
    if not all(isinstance(f, QuadraticLoss) for f in losses):
        return False
    if not all(g.kind == "affine" for g in constraints):
        return False
    A0 = constraints[0].A
    return all(g.A.shape == A0.shape and np.array_equal(g.A, A0) for g in constraints)


# ---------------------------------------------------------------------------
# General path: method of multipliers with L-BFGS-B inner solves
# ---------------------------------------------------------------------------

def _augmented_lagrangian(stacked_value, stacked_grad, coupled_value, coupled_jac_t,
                          x0, bounds, m, tol, residual_fn, max_outer=200):
    lam = np.zeros(m)
    rho = 10.0
    x = np.asarray(x0, dtype=float)
    last_violation = np.inf
    residual = np.inf
    for outer in range(1, max_outer + 1):
        def phi(z, lam=lam, rho=rho):
            c = coupled_value(z)
            shifted = np.maximum(lam + rho * c, 0.0)
            val = stacked_value(z) + (shifted @ shifted - lam @ lam) / (2.0 * rho)
            grad = stacked_grad(z) + coupled_jac_t(z, shifted)
            return val, grad

        res = minimize(phi, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 20_000, "ftol": 1e-20, "gtol": 1e-13, "maxcor": 30})
        x = np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
        c = coupled_value(x)
        lam = np.maximum(lam + rho * c, 0.0)
        residual = residual_fn(x, lam)
        logger.debug("augmented Lagrangian outer %d: rho=%.1e residual=%.3e", outer, rho, residual)
        if residual <= tol:
            return x, lam, residual, outer
        violation = float(np.max(np.maximum(c, 0.0), initial=0.0))
        if violation > 0.25 * last_violation:
            rho = min(rho * 10.0, 1e10)
        last_violation = violation
    raise SolverFailureError("augmented Lagrangian did not reach the KKT tolerance", residual, max_outer)


def _solve_single(loss, g, box, tol):
    """Dispatch for one problem min f(x) s.t. g(x) <= 0, x in box (feasibility assumed)."""
    if isinstance(loss, QuadraticLoss) and g.kind == "affine":
        dual = SeparableDual(loss.weights, loss.linear, g.A, g.b, box)
        lam, iterations = dual.maximize(tol)
        x = dual.primal(lam)[0][0]
        residual = kkt_residual(loss, g, x, lam, box)
        if residual > tol:
            raise SolverFailureError("dual ascent did not reach the KKT tolerance", residual, iterations)
        return SaddleSolveReport(x, lam, residual, iterations)

    x0 = 0.5 * (box.lower + box.upper)
    m = g.value(x0).size
    x, lam, residual, iterations = _augmented_lagrangian(
        loss.value, loss.gradient, g.value, lambda z, w: g.jacobian(z).T @ w,
        x0, box.bounds(), m, tol, lambda z, l: kkt_residual(loss, g, z, l, box))
    return SaddleSolveReport(x, lam, residual, iterations)


def per_slot_optimum(f, g, box, tol=DEFAULT_TOL, assume_feasible=False):
    """
    x_t* = argmin f_t(x) s.t. g_t(x) <= 0, x in box, with its multiplier.

    Unless assume_feasible is set (the caller already holds a Slater witness),
    a phase-I solve certifies feasibility first and raises InfeasibleProblemError.
    """
    if not assume_feasible:
        require_feasible(g, box, tol)
    return _solve_single(f, g, box, tol)


def offline_optimum(problems, box, tol=DEFAULT_TOL, size_limit=OFFLINE_SIZE_LIMIT):
    """
    Full-information solution of  min sum_t f_t(x_t)  s.t.  sum_t g_t(x_t) <= 0,
    sharing one multiplier for the coupled constraint. Returns a list of x_t^off
    and the report of the coupled solve.
    """
    problems = list(problems)
    T = len(problems)
    if T == 0:
        raise ArgumentError("offline_optimum needs at least one slot")
    if T * box.dim > size_limit:
        raise ResourceLimitError(f"offline problem of size T*n={T * box.dim} exceeds {size_limit}")
    losses = [p[0] for p in problems]
    constraints = [p[1] for p in problems]

    if _is_separable_affine(losses, constraints):
        A = constraints[0].A
        b_sum = np.sum([g.b for g in constraints], axis=0)
        # sum_t x_t ranges over T * box, so phase-I runs on the scaled box
        scaled = FeasibleBox(T * box.lower, T * box.upper)
        require_feasible(AffineConstraint(A, b_sum), scaled, tol)
        dual = SeparableDual(np.vstack([f.weights for f in losses]),
                             np.vstack([f.linear for f in losses]), A, b_sum, box)
        lam, iterations = dual.maximize(tol)
        X = dual.primal(lam)[0]
        residual = _offline_residual(losses, constraints, X, lam, box)
        if residual > tol:
            raise SolverFailureError("offline dual ascent did not reach the KKT tolerance",
                                     residual, iterations)
        return [X[t].copy() for t in range(T)], SaddleSolveReport(X, lam, residual, iterations)

    n = box.dim

    def split(z):
        return z.reshape(T, n)

    def total_loss(z):
        Z = split(z)
        return sum(f.value(Z[t]) for t, f in enumerate(losses))

    def total_grad(z):
        Z = split(z)
        return np.concatenate([f.gradient(Z[t]) for t, f in enumerate(losses)])

    def coupled(z):
        Z = split(z)
        return np.sum([g.value(Z[t]) for t, g in enumerate(constraints)], axis=0)

    def coupled_jac_t(z, w):
        Z = split(z)
        return np.concatenate([g.jacobian(Z[t]).T @ w for t, g in enumerate(constraints)])

    x0 = np.tile(0.5 * (box.lower + box.upper), T)
    m = constraints[0].value(x0[:n]).size
    z, lam, residual, iterations = _augmented_lagrangian(
        total_loss, total_grad, coupled, coupled_jac_t, x0, box.bounds() * T, m, tol,
        lambda zz, ll: _offline_residual(losses, constraints, split(zz), ll, box))
    X = split(z)
    return [X[t].copy() for t in range(T)], SaddleSolveReport(X, lam, residual, iterations)


def _offline_residual(losses, constraints, X, lam, box):
    coupled = np.sum([g.value(X[t]) for t, g in enumerate(constraints)], axis=0)
    primal = float(np.max(np.maximum(coupled, 0.0), initial=0.0))
    station = 0.0
    for t, (f, g) in enumerate(zip(losses, constraints)):
        lagr_grad = f.gradient(X[t]) + g.jacobian(X[t]).T @ lam
        station = max(station, float(np.max(np.abs(X[t] - project_box(X[t] - lagr_grad, box)))))
    comp = float(np.max(np.abs(lam * coupled) / (1.0 + lam), initial=0.0))
    return max(primal, station, comp)


def best_static(problems, box, tol=DEFAULT_TOL):
    """Single x minimizing sum_t f_t(x) subject to every slot's constraint."""
    problems = list(problems)
    if not problems:
        raise ArgumentError("best_static needs at least one slot")
    losses = [p[0] for p in problems]
    constraints = [p[1] for p in problems]
    if _is_separable_affine(losses, constraints):
        # shared A: every row binds hardest at the largest offset
        loss = QuadraticLoss.sum_of(losses)
        g = AffineConstraint(constraints[0].A, np.max([c.b for c in constraints], axis=0))
    else:
        loss = CallableLoss(lambda x: sum(f.value(x) for f in losses),
                            lambda x: np.sum([f.gradient(x) for f in losses], axis=0))
        g = StackedConstraint(constraints)
    return per_slot_optimum(loss, g, box, tol)


def dual_function_value(f, g, lam, box):
    """D(lam) = min over the box of f(x) + lam^T g(x)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ArgumentError("dual function is only defined for lam >= 0")
    if isinstance(f, QuadraticLoss) and g.kind == "affine":
        x = f.minimize_coordinatewise(g.A.T @ lam, box)
        return DualFunctionValue(f.value(x) + float(lam @ g.value(x)), x)

    def lagrangian(x):
        return f.value(x) + float(lam @ g.value(x)), f.gradient(x) + g.jacobian(x).T @ lam

    res = minimize(lagrangian, 0.5 * (box.lower + box.upper), jac=True, method="L-BFGS-B",
                   bounds=box.bounds(), options={"ftol": 1e-20, "gtol": 1e-12, "maxiter": 20_000})
    if not res.success:
        pg = res.x - project_box(res.x - res.jac, box)
        raise SolverFailureError(f"dual function minimization failed: {res.message}",
                                 float(np.max(np.abs(pg))), int(res.nit))
    x = project_box(res.x, box)
    return DualFunctionValue(f.value(x) + float(lam @ g.value(x)), x)
