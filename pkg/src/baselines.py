"""
Online dual gradient (ODG): the stochastic dual gradient recursion run causally.
The primal at slot t minimizes the Lagrangian with slot t-1 prices; the dual
step uses the true slot-t workload, revealed after acting.
"""
import logging
from dataclasses import dataclass

import numpy as np

from errors import ArgumentError
from oco_core import RoundTrace

logger = logging.getLogger(__name__)


@dataclass
class OdgState:
    lam: np.ndarray
    mu_odg: float

    def __post_init__(self):
        if self.mu_odg <= 0:
            raise ArgumentError(f"ODG stepsize must be positive, got {self.mu_odg}")


def odg_primal(lam, theta_used, b_used, net):
    """
    Exact minimizer of f(x) + lam^T (A x + b) for the quadratic network cost:
      x^{jk} = clip((lam^j - lam^k) / (2 c^{jk}), 0, x_bar^{jk})
      y^k    = clip(lam^k / (2 p^k), 0, y_bar^k)
    b only shifts the objective, so b_used does not change the argmin.
    """
    lam = np.asarray(lam, dtype=float)
    prices = np.asarray(theta_used, dtype=float)
    lam_map, lam_dc = lam[: net.J], lam[net.J:]
    flows = np.clip((lam_map[:, None] - lam_dc[None, :]) / (2.0 * net.link_costs), 0.0, net.link_caps)
    service = np.clip(lam_dc / (2.0 * prices), 0.0, net.dc_caps)
    return np.concatenate([flows.ravel(), service])


def odg_dual(state, x_t, b_t, A, mu_odg):
    """[lam + mu_ODG (A x_t + b_t)]^+ with the true slot-t data."""
    return np.maximum(state.lam + mu_odg * (A @ np.asarray(x_t, dtype=float) + b_t), 0.0)


def run_odg(stream, net, mu_odg, T=None, noncausal=False):
    """
    ODG over the stream. Slot 1 acts on lam_1 = 0 alone, which gives x_1 = 0
    whatever the prices. With noncausal=True the primal uses slot-t prices
    (plain SDG); that variant is for diagnostics only.
    """
    T = stream.T if T is None else int(T)
    A = net.incidence
    state = OdgState(np.zeros(net.I), mu_odg)
    queue = np.zeros(net.I)
    trace = []
    for t in range(1, T + 1):
        if t == 1 and not noncausal:
            x = net.box.lower.copy()
        else:
            used = t if noncausal else t - 1
            x = odg_primal(state.lam, stream.prices[used - 1], stream.b(used), net)
        b_t = stream.b(t)
        g = A @ x + b_t
        lam_next = odg_dual(state, x, b_t, A, mu_odg)
        queue = np.maximum(queue + g, 0.0)
        loss = float(np.sum(net.cost_weights(stream.prices[t - 1]) * x * x))
        trace.append(RoundTrace(t=t, x=x, lam=state.lam.copy(), lam_next=lam_next, loss=loss,
                                constraint=g,
                                drift=0.5 * (float(lam_next @ lam_next) - float(state.lam @ state.lam)),
                                queue=queue.copy()))
        state = OdgState(lam_next, mu_odg)
    logger.debug("ODG(mu=%g) finished %d slots", mu_odg, T)
    return trace
