"""
Modified online saddle-point (MOSP) learner for online convex optimization
with long-term, time-varying constraints.

Per slot t the learner commits x_t before seeing (f_t, g_t):

    x_t      = argmin_{x in X} grad f_{t-1}(x_{t-1})^T (x - x_{t-1})
                               + lam_t^T g_{t-1}(x) + ||x - x_{t-1}||^2 / (2 alpha)
    lam_{t+1} = [lam_t + mu g_t(x_t)]^+

Slot 1 has no previous data: f_0 = 0 and g_0 = 0, so x_1 = x_0.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from errors import ArgumentError
from oracles import StepsizePair, as_vector, check_finite
from solvers import project_box, solve_prox_general

logger = logging.getLogger(__name__)


@dataclass
class LearnerState:
    x_prev: np.ndarray
    lam: np.ndarray
    t: int
    steps: StepsizePair
    restart_period: Optional[int] = None


@dataclass
class RoundTrace:
    """What happened in slot t."""
    t: int
    x: np.ndarray
    lam: np.ndarray
    lam_next: np.ndarray
    loss: float
    constraint: np.ndarray
    drift: float
    queue: np.ndarray = field(default=None)


def mosp_primal_step(state, prev_loss, prev_constraint, box):
    """
    Primal update. prev_loss / prev_constraint are f_{t-1}, g_{t-1}; pass None
    for slot 1, which returns x_prev. Affine constraints use the closed form
    P_X(x_prev - alpha grad - alpha A^T lam); anything else goes through the
    iterative prox solver.
    """
    x_prev = state.x_prev
    alpha = state.steps.alpha
    if prev_loss is None and prev_constraint is None:
        return x_prev.copy()

    grad = np.zeros_like(x_prev) if prev_loss is None else check_finite(
        prev_loss.gradient(x_prev), "loss gradient")

    if prev_constraint is None or not np.any(state.lam):
        return project_box(x_prev - alpha * grad, box)
    if prev_constraint.kind == "affine":
        return project_box(x_prev - alpha * grad - alpha * (prev_constraint.A.T @ state.lam), box)
    return solve_prox_general(grad, prev_constraint, state.lam, x_prev, alpha, box)


def mosp_dual_step(state, observed_g_at_x, mu):
    """lam_{t+1} = [lam_t + mu g_t(x_t)]^+."""
    g = check_finite(observed_g_at_x, "constraint value")
    return np.maximum(state.lam + mu * g, 0.0)


def stepsize_for_horizon(T, beta, scale):
    """alpha = mu = scale * T^((beta - 1) / 2); beta = 1/3 gives the T^(-1/3) schedule."""
    if T < 1:
        raise ArgumentError(f"horizon must be >= 1, got {T}")
    if not 0.0 <= beta < 1.0:
        raise ArgumentError(f"beta must lie in [0, 1), got {beta}")
    if scale <= 0:
        raise ArgumentError(f"stepsize scale must be positive, got {scale}")
    step = scale * float(T) ** ((beta - 1.0) / 2.0)
    return StepsizePair(alpha=step, mu=step)


def horizon_stepsizes(T, beta, alpha_scale, mu_scale):
    """Primal and dual steps on the same horizon schedule with separate scales."""
    return StepsizePair(alpha=stepsize_for_horizon(T, beta, alpha_scale).alpha,
                        mu=stepsize_for_horizon(T, beta, mu_scale).mu)


def restart_schedule(T, delta_T):
    """Slots {1, delta+1, 2 delta+1, ...} at which the dual iterate is reset."""
    if delta_T <= 0:
        raise ArgumentError(f"restart period must be positive, got {delta_T}")
    if delta_T > T:
        raise ArgumentError(f"restart period {delta_T} exceeds horizon {T}")
    return list(range(1, T + 1, delta_T))


def run_mosp(problem_stream, box, steps, x0=None, horizon=None, restart_period=None,
             dual_update=mosp_dual_step):
    """
    Run MOSP over the stream of (loss, constraint) pairs and return one
    RoundTrace per slot. lam_1 = 0. With restart_period, lam is reset to 0 at
    every slot of restart_schedule.
    """
    problems = list(problem_stream)
    T = len(problems) if horizon is None else int(horizon)
    if T < 1 or T > len(problems):
        raise ArgumentError(f"horizon {T} incompatible with a stream of {len(problems)} slots")
    x0 = box.lower.copy() if x0 is None else as_vector(x0, "x0")
    if not box.contains(x0):
        raise ArgumentError("x0 lies outside the feasible box")

    m = problems[0][1].value(x0).size
    restarts = set(restart_schedule(T, restart_period)) if restart_period else {1}
    state = LearnerState(x_prev=x0.copy(), lam=np.zeros(m), t=1, steps=steps,
                         restart_period=restart_period)
    queue = np.zeros(m)
    prev_loss = prev_constraint = None
    trace = []
    for t in range(1, T + 1):
        if t in restarts and t > 1:
            state = replace(state, lam=np.zeros(m))
        x = mosp_primal_step(state, prev_loss, prev_constraint, box)
        loss_t, constraint_t = problems[t - 1]
        g = check_finite(constraint_t.value(x), "constraint value")
        lam_next = dual_update(state, g, steps.mu)
        drift = 0.5 * (float(lam_next @ lam_next) - float(state.lam @ state.lam))
        queue = np.maximum(queue + g, 0.0)
        trace.append(RoundTrace(t=t, x=x, lam=state.lam.copy(), lam_next=lam_next,
                                loss=float(loss_t.value(x)), constraint=g, drift=drift,
                                queue=queue.copy()))
        state = replace(state, x_prev=x, lam=lam_next, t=t + 1)
        prev_loss, prev_constraint = loss_t, constraint_t
    logger.debug("MOSP finished %d slots, final |lam|=%.4g", T, float(np.linalg.norm(state.lam)))
    return trace
