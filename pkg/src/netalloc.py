"""
Cloud-network workload routing and allocation.

J mapping nodes forward workload x^{jk} to K data centers, which serve y^k on a
virtual edge (k,*). The decision vector is ordered [x^{11}, ..., x^{JK}, y^1, ..., y^K]
and the per-slot constraint is A x + b_t <= 0 with A the node-incidence matrix
and b_t = [b_t^1, ..., b_t^J, 0, ..., 0].
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import ArgumentError, MospError
from oracles import AffineConstraint, FeasibleBox, QuadraticLoss, as_vector

logger = logging.getLogger(__name__)

# One independent Philox substream per parameter family.
STREAM_FAMILIES = {"link_caps": 0, "dc_caps": 1, "prices": 2, "loads": 3}

SLATER_ITERATIONS = 20_000
MAX_INSTANCE_ATTEMPTS = 100


def make_rng(seed, family, attempt=0):
    """Counter-based generator for one parameter family; draws are prefix-stable in T."""
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                 spawn_key=(STREAM_FAMILIES[family], int(attempt)))
    return np.random.Generator(np.random.Philox(seq))


def build_incidence(J, K):
    """I x E node-incidence matrix: +1 where an edge enters a node, -1 where it leaves."""
    if J < 1 or K < 1:
        raise ArgumentError(f"need J >= 1 and K >= 1, got J={J}, K={K}")
    A = np.zeros((J + K, J * K + K))
    for j in range(J):
        for k in range(K):
            e = j * K + k
            A[j, e] = -1.0
            A[J + k, e] = 1.0
    for k in range(K):
        A[J + k, J * K + k] = -1.0
    return A


@dataclass
class CloudNetwork:
    J: int
    K: int
    link_caps: np.ndarray   # (J, K) bandwidth limits x_bar^{jk}
    dc_caps: np.ndarray     # (K,) data-center capacities y_bar^k
    link_costs: np.ndarray  # (J, K) bandwidth cost coefficients c^{jk}
    seed: int = 0
    incidence: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.link_caps = np.asarray(self.link_caps, dtype=float).reshape(self.J, self.K)
        self.dc_caps = as_vector(self.dc_caps, "dc_caps")
        self.link_costs = np.asarray(self.link_costs, dtype=float).reshape(self.J, self.K)
        if self.dc_caps.size != self.K:
            raise ArgumentError(f"expected {self.K} data-center capacities, got {self.dc_caps.size}")
        for name, arr in (("link_caps", self.link_caps), ("dc_caps", self.dc_caps),
                          ("link_costs", self.link_costs)):
            if np.any(arr <= 0):
                raise ArgumentError(f"{name} must be strictly positive")
        self.incidence = build_incidence(self.J, self.K)

    @property
    def I(self):
        return self.J + self.K

    @property
    def E(self):
        return self.J * self.K + self.K

    @property
    def box(self):
        return FeasibleBox.from_caps(np.concatenate([self.link_caps.ravel(), self.dc_caps]))

    def split(self, x):
        """x -> (flows (J, K), service (K,))."""
        x = np.asarray(x, dtype=float)
        return x[: self.J * self.K].reshape(self.J, self.K), x[self.J * self.K:]

    def cost_weights(self, prices):
        return np.concatenate([self.link_costs.ravel(), as_vector(prices, "prices")])


@dataclass
class ScenarioStream:
    prices: np.ndarray  # (T, K) p_t^k
    loads: np.ndarray   # (T, J) b_t^j
    seed: int = 0
    case: str = "custom"

    def __post_init__(self):
        self.prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        self.loads = np.atleast_2d(np.asarray(self.loads, dtype=float))
        if self.prices.shape[0] != self.loads.shape[0]:
            raise ArgumentError("prices and loads cover different horizons")
        if np.any(self.prices <= 0):
            raise ArgumentError("prices must be strictly positive")
        if np.any(self.loads < 0):
            raise ArgumentError("loads must be non-negative")

    @property
    def T(self):
        return self.prices.shape[0]

    @property
    def J(self):
        return self.loads.shape[1]

    @property
    def K(self):
        return self.prices.shape[1]

    def b(self, t):
        """b_t for slot t (1-based), padded with zeros on the data-center rows."""
        return np.concatenate([self.loads[t - 1], np.zeros(self.K)])

    def b_matrix(self):
        return np.hstack([self.loads, np.zeros((self.T, self.K))])

    def truncated(self, T):
        return ScenarioStream(self.prices[:T], self.loads[:T], self.seed, self.case)


# ---------------------------------------------------------------------------
# Cost and constraint
# ---------------------------------------------------------------------------

def network_cost(x, theta, net):
    """sum_k p^k (y^k)^2 + sum_{j,k} c^{jk} (x^{jk})^2."""
    flows, service = net.split(x)
    prices = as_vector(theta, "prices")
    return float(np.sum(prices * service ** 2) + np.sum(net.link_costs * flows ** 2))


def network_cost_gradient(x, theta, net):
    flows, service = net.split(x)
    prices = as_vector(theta, "prices")
    return np.concatenate([(2.0 * net.link_costs * flows).ravel(), 2.0 * prices * service])


def network_loss(theta, net):
    """QuadraticLoss equal to network_cost for the slot parameters theta = p_t."""
    return QuadraticLoss(net.cost_weights(theta))


def network_constraint(x, b_t, A):
    x = np.asarray(x, dtype=float)
    b_t = np.asarray(b_t, dtype=float)
    if A.shape[1] != x.size or A.shape[0] != b_t.size:
        raise ArgumentError(f"incidence {A.shape} incompatible with x ({x.size}) and b ({b_t.size})")
    return A @ x + b_t


def queue_update(q, x, b_t, A):
    """q_{t+1} = [q_t + A x_t + b_t]^+."""
    return np.maximum(np.asarray(q, dtype=float) + network_constraint(x, b_t, A), 0.0)


def network_problem_stream(net, stream):
    """Per-slot (loss, constraint) oracles for the OCO learner."""
    if stream.J != net.J or stream.K != net.K:
        raise ArgumentError(f"stream is for J={stream.J}, K={stream.K}; network has J={net.J}, K={net.K}")
    A = net.incidence
    return [(network_loss(stream.prices[t - 1], net), AffineConstraint(A, stream.b(t)))
            for t in range(1, stream.T + 1)]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_network(J, K, seed, attempt=0):
    """Caps ~ U[10,100], capacities ~ U[100,200], c^{jk} = 40 / x_bar^{jk}."""
    if J < 1 or K < 1:
        raise ArgumentError(f"need J >= 1 and K >= 1, got J={J}, K={K}")
    link_caps = make_rng(seed, "link_caps", attempt).uniform(10.0, 100.0, size=(J, K))
    dc_caps = make_rng(seed, "dc_caps", attempt).uniform(100.0, 200.0, size=K)
    return CloudNetwork(J, K, link_caps, dc_caps, 40.0 / link_caps, seed=seed)


def _check_horizon(T):
    if T < 1:
        raise ArgumentError(f"horizon must be >= 1, got {T}")


def gen_case1(J, K, T, seed):
    """i.i.d. prices p ~ U[1,3] and loads b ~ U[50,150]."""
    _check_horizon(T)
    prices = make_rng(seed, "prices").uniform(1.0, 3.0, size=(T, K))
    loads = make_rng(seed, "loads").uniform(50.0, 150.0, size=(T, J))
    return ScenarioStream(prices, loads, seed, "case1")


def gen_case2(J, K, T, seed):
    """p = sin(pi t / 12) + U[1,3], b = 50 sin(pi t / 12) + U[99,101] (period 24 slots)."""
    _check_horizon(T)
    wave = np.sin(np.pi * np.arange(1, T + 1) / 12.0)[:, None]
    prices = wave + make_rng(seed, "prices").uniform(1.0, 3.0, size=(T, K))
    loads = 50.0 * wave + make_rng(seed, "loads").uniform(99.0, 101.0, size=(T, J))
    return ScenarioStream(prices, loads, seed, "case2")


def gen_constant(J, K, T, seed):
    """Stationary stream: p = 2, b^j = 100 + U[-10,10] drawn once per node."""
    _check_horizon(T)
    level = 100.0 + make_rng(seed, "loads").uniform(-10.0, 10.0, size=J)
    return ScenarioStream(np.full((T, K), 2.0), np.tile(level, (T, 1)), seed, "constant")


GENERATORS = {"case1": gen_case1, "case2": gen_case2, "constant": gen_constant}


# ---------------------------------------------------------------------------
# Slater margin and instance sampling
# ---------------------------------------------------------------------------

def slater_margin(net, stream, horizon=None, iterations=SLATER_ITERATIONS):
    """
    Largest delta with A x + b_t <= -delta for every slot and some x in the box.
    Since A is shared, only b_max (componentwise max over t) matters. Solved by
    projected subgradient ascent on min_i -(A x + b_max)_i; returns the best
    margin found (clipped at 0) and its witness.
    """
    T = stream.T if horizon is None else int(horizon)
    b_max = stream.b_matrix()[:T].max(axis=0)
    A = net.incidence
    box = net.box
    scale = box.radius / 10.0

    def slack(x):
        return -(A @ x + b_max)

    x = 0.5 * (box.lower + box.upper)
    s = slack(x)
    best, witness = float(s.min()), x.copy()
    for k in range(1, iterations + 1):
        i = int(np.argmin(s))
        direction = -A[i]
        x = np.clip(x + (scale / np.sqrt(k)) * direction / np.linalg.norm(direction),
                    box.lower, box.upper)
        s = slack(x)
        if s.min() > best:
            best, witness = float(s.min()), x.copy()
    logger.debug("Slater margin %.6g after %d subgradient steps", best, iterations)
    return max(best, 0.0), witness


def sample_valid_instance(J, K, T, seed, case="case1", stream=None, max_attempts=MAX_INSTANCE_ATTEMPTS):
    """
    Draw (network, stream) for a seed; the network is re-drawn with a fresh
    attempt counter until its Slater margin is positive. Returns
    (net, stream, epsilon, witness).
    """
    if stream is None:
        if case not in GENERATORS:
            raise ArgumentError(f"unknown scenario case {case!r}")
        stream = GENERATORS[case](J, K, T, seed)
    for attempt in range(max_attempts):
        net = gen_network(J, K, seed, attempt)
        eps, witness = slater_margin(net, stream)
        if eps > 0.0:
            if attempt:
                logger.info("seed %d: network accepted after %d re-draws (eps=%.4g)", seed, attempt, eps)
            return net, stream, eps, witness
    raise MospError(f"seed {seed}: no strictly feasible network in {max_attempts} attempts")


def network_constants(net, stream):
    """
    Measured G, M, R for the bound checks: G uses the largest price in the
    stream, M bounds ||A x + b_t|| row by row over the box, R = ||x_bar||.
    """
    box = net.box
    loss = QuadraticLoss(net.cost_weights(stream.prices.max(axis=0)))
    G = loss.grad_norm_bound(box)
    A = net.incidence
    row_hi = np.maximum(A, 0.0) @ box.upper
    row_lo = np.minimum(A, 0.0) @ box.upper
    B = stream.b_matrix()
    per_row = np.maximum(np.abs(row_hi + B), np.abs(row_lo + B)).max(axis=0)
    M = float(np.linalg.norm(per_row))
    return G, M, box.radius


# ---------------------------------------------------------------------------
# Scenario / network text formats
# ---------------------------------------------------------------------------

def export_scenario(stream, path):
    """One slot per line: t, p_1..p_K, b_1..b_J (round-trip float formatting)."""
    frame = pd.DataFrame({"t": np.arange(1, stream.T + 1)})
    for k in range(stream.K):
        frame[f"p_{k + 1}"] = stream.prices[:, k]
    for j in range(stream.J):
        frame[f"b_{j + 1}"] = stream.loads[:, j]
    with open(path, "w", newline="") as fh:
        fh.write(f"# case={stream.case} seed={stream.seed} J={stream.J} K={stream.K}\n")
        frame.to_csv(fh, index=False)


def _read_header(fh):
    meta = {}
    first = fh.readline()
    for token in first.lstrip("#").split():
        key, _, value = token.partition("=")
        meta[key] = value
    return meta


def import_scenario(path):
    with open(path) as fh:
        meta = _read_header(fh)
        frame = pd.read_csv(fh, float_precision="round_trip")
    price_cols = [c for c in frame.columns if c.startswith("p_")]
    load_cols = [c for c in frame.columns if c.startswith("b_")]
    if not price_cols or not load_cols:
        raise ArgumentError(f"{path}: scenario file needs p_* and b_* columns")
    if not np.array_equal(frame["t"].to_numpy(), np.arange(1, len(frame) + 1)):
        raise ArgumentError(f"{path}: slot column must run 1..T")
    return ScenarioStream(frame[price_cols].to_numpy(), frame[load_cols].to_numpy(),
                          int(meta.get("seed", 0)), meta.get("case", "custom"))


def export_network(net, path):
    """Header lines J=, K=, then one row per edge: kind, j, k, cap, cost."""
    rows = [{"kind": "link", "j": j + 1, "k": k + 1,
             "cap": net.link_caps[j, k], "cost": net.link_costs[j, k]}
            for j in range(net.J) for k in range(net.K)]
    rows += [{"kind": "dc", "j": 0, "k": k + 1, "cap": net.dc_caps[k], "cost": 0.0}
             for k in range(net.K)]
    with open(path, "w", newline="") as fh:
        fh.write(f"J={net.J}\nK={net.K}\n")
        pd.DataFrame(rows).to_csv(fh, index=False)


def import_network(path):
    with open(path) as fh:
        J = int(fh.readline().split("=")[1])
        K = int(fh.readline().split("=")[1])
        frame = pd.read_csv(fh, float_precision="round_trip")
    links = frame[frame["kind"] == "link"].sort_values(["j", "k"])
    dcs = frame[frame["kind"] == "dc"].sort_values("k")
    return CloudNetwork(J, K, links["cap"].to_numpy().reshape(J, K), dcs["cap"].to_numpy(),
                        links["cost"].to_numpy().reshape(J, K))
