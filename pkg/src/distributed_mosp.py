"""
Distributed MOSP for the cloud network: every mapping node and data center
updates only the variables on its outgoing edges plus its own multiplier. Data
centers send lam^k to their one-hop mapping nodes once per slot; mapping nodes
only ship workload, since y^k steps on lam^k alone.

Rounds are synchronous. A round runs: deliver last round's multipliers ->
primal step -> workload ships over the links -> local observation -> dual step
-> data centers send multipliers.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import ProtocolError
from oco_core import RoundTrace, restart_schedule

logger = logging.getLogger(__name__)


def mapping_id(j):
    return f"map{j + 1}"


def datacenter_id(k):
    return f"dc{k + 1}"


@dataclass
class NodeMessage:
    sender: str
    recipient: str
    slot: int
    multiplier: Optional[float] = None
    flow: Optional[float] = None


@dataclass
class SlotData:
    """What nodes observe locally at the end of slot t."""
    t: int
    prices: np.ndarray  # p_t^k, seen by data center k
    loads: np.ndarray   # b_t^j, seen by mapping node j


class Mailbox:
    """In-process message store, drained once per round boundary."""

    def __init__(self):
        self._pending = []

    def post(self, message):
        self._pending.append(message)

    def drain(self):
        by_recipient = defaultdict(list)
        for message in self._pending:
            by_recipient[message.recipient].append(message)
        self._pending = []
        return by_recipient


def _collect(inbox, node_id, expected_senders, slot):
    """Map sender -> message for one node, failing on any missing sender."""
    received = {m.sender: m for m in inbox.get(node_id, []) if m.slot == slot}
    for sender in expected_senders:
        if sender not in received:
            raise ProtocolError(sender, slot)
    return received


@dataclass
class MappingNode:
    j: int
    caps: np.ndarray      # x_bar^{jk}, k = 1..K
    costs: np.ndarray     # c^{jk}
    flows: np.ndarray     # x^{jk}
    lam: float = 0.0
    neighbour_lams: np.ndarray = field(default=None)  # lam^k of each data center
    started: bool = False

    @property
    def node_id(self):
        return mapping_id(self.j)

    def primal_step(self, alpha):
        if self.started:
            grad = 2.0 * self.costs * self.flows
            self.flows = np.clip(self.flows - alpha * grad - alpha * (self.neighbour_lams - self.lam),
                                 0.0, self.caps)
        self.started = True
        return self.flows

    def dual_step(self, load, mu):
        self.lam = max(self.lam + mu * (load - float(np.sum(self.flows))), 0.0)
        return self.lam


@dataclass
class DataCenter:
    k: int
    cap: float
    service: float
    lam: float = 0.0
    prev_price: Optional[float] = None
    arrivals: float = 0.0

    @property
    def node_id(self):
        return datacenter_id(self.k)

    def primal_step(self, alpha):
        if self.prev_price is not None:
            grad = 2.0 * self.prev_price * self.service
            # the virtual edge (k,*) leaves node k, so its A^T lam entry is -lam^k
            self.service = min(max(self.service - alpha * grad - alpha * (-self.lam), 0.0), self.cap)
        return self.service

    def observe(self, price, arrivals):
        self.prev_price = float(price)
        self.arrivals = float(arrivals)

    def dual_step(self, mu):
        self.lam = max(self.lam + mu * (self.arrivals - self.service), 0.0)
        return self.lam


@dataclass
class NetworkNodes:
    mapping: list
    datacenters: list

    @classmethod
    def initial(cls, net, x0=None):
        x0 = net.box.lower if x0 is None else np.asarray(x0, dtype=float)
        flows, service = net.split(x0)
        mapping = [MappingNode(j, net.link_caps[j].copy(), net.link_costs[j].copy(),
                               flows[j].copy(), neighbour_lams=np.zeros(net.K))
                   for j in range(net.J)]
        datacenters = [DataCenter(k, float(net.dc_caps[k]), float(service[k])) for k in range(net.K)]
        return cls(mapping, datacenters)

    def assemble_x(self):
        flows = np.concatenate([node.flows for node in self.mapping])
        return np.concatenate([flows, [dc.service for dc in self.datacenters]])

    def assemble_lam(self):
        return np.array([node.lam for node in self.mapping] + [dc.lam for dc in self.datacenters])


def distributed_mosp_round(nodes, incoming, slot, steps, reset=False):
    """
    One synchronous slot. `incoming` maps recipient -> messages sent at the end
    of slot t-1 (empty at t = 1). With reset every node zeroes its own and its
    neighbours' multipliers before acting. Returns (nodes, outgoing messages, x_t).
    """
    t = slot.t
    J, K = len(nodes.mapping), len(nodes.datacenters)
    if t > 1:
        dc_ids = [datacenter_id(k) for k in range(K)]
        for node in nodes.mapping:
            got = _collect(incoming, node.node_id, dc_ids, t - 1)
            node.neighbour_lams = np.array([got[s].multiplier for s in dc_ids])
    if reset:
        for node in nodes.mapping:
            node.lam = 0.0
            node.neighbour_lams = np.zeros(K)
        for dc in nodes.datacenters:
            dc.lam = 0.0

    for node in nodes.mapping:
        node.primal_step(steps.alpha)
    for dc in nodes.datacenters:
        dc.primal_step(steps.alpha)
    x_t = nodes.assemble_x()

    # workload physically arrives over each link within the slot
    shipments = Mailbox()
    for node in nodes.mapping:
        for k in range(K):
            shipments.post(NodeMessage(node.node_id, datacenter_id(k), t, flow=float(node.flows[k])))
    delivered = shipments.drain()
    for dc in nodes.datacenters:
        got = _collect(delivered, dc.node_id, [mapping_id(j) for j in range(J)], t)
        dc.observe(slot.prices[dc.k], sum(got[mapping_id(j)].flow for j in range(J)))

    for node in nodes.mapping:
        node.dual_step(float(slot.loads[node.j]), steps.mu)
    for dc in nodes.datacenters:
        dc.dual_step(steps.mu)

    outgoing = Mailbox()
    for dc in nodes.datacenters:
        for j in range(J):
            outgoing.post(NodeMessage(dc.node_id, mapping_id(j), t, dc.lam))
    return nodes, outgoing.drain(), x_t


def run_distributed_mosp(net, stream, steps, x0=None, horizon=None, restart_period=None):
    """Distributed run over the stream; emits the same RoundTrace schema as run_mosp."""
    T = stream.T if horizon is None else int(horizon)
    restarts = set(restart_schedule(T, restart_period)) if restart_period else {1}
    nodes = NetworkNodes.initial(net, x0)
    A = net.incidence
    inbox = {}
    lam = nodes.assemble_lam()
    queue = np.zeros(net.I)
    trace = []
    for t in range(1, T + 1):
        slot = SlotData(t, stream.prices[t - 1], stream.loads[t - 1])
        reset = t in restarts and t > 1
        if reset:
            lam = np.zeros(net.I)
        nodes, inbox, x = distributed_mosp_round(nodes, inbox, slot, steps, reset=reset)
        lam_next = nodes.assemble_lam()
        g = A @ x + stream.b(t)
        queue = np.maximum(queue + g, 0.0)
        loss = float(np.sum(net.cost_weights(slot.prices) * x * x))
        trace.append(RoundTrace(t=t, x=x, lam=lam, lam_next=lam_next, loss=loss, constraint=g,
                                drift=0.5 * (float(lam_next @ lam_next) - float(lam @ lam)),
                                queue=queue.copy()))
        lam = lam_next
    return trace


def max_trace_deviation(trace_a, trace_b):
    """Largest absolute difference in x_t or lam_{t+1} over all slots."""
    if len(trace_a) != len(trace_b):
        return float("inf")
    dev = 0.0
    for a, b in zip(trace_a, trace_b):
        dev = max(dev, float(np.max(np.abs(a.x - b.x))), float(np.max(np.abs(a.lam_next - b.lam_next))))
    return dev
