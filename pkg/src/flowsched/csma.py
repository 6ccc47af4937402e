"""Distributed scheduling: basic CSMA (Glauber dynamics) and Q-CSMA.

Schedules are link bitmasks. The Q-CSMA control slot is split into a
Request-To-Decide and a Clear-To-Decide mini-slot. Carrier-sense memories
(``NS``/``NR``) remember whether a node heard a data or ACK transmission
during the previous data slot; the data schedule consults only those
memories and the link's own previous state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConflictViolation
from .network import Network
from .weights import WeightFn, link_weights_from_g


def activation_probability(w: float) -> float:
    """Logistic ``e^w / (1 + e^w)``, evaluated without overflow."""
    if w >= 0:
        return 1.0 / (1.0 + math.exp(-w))
    e = math.exp(w)
    return e / (1.0 + e)


def g_star(weight_fn: WeightFn, q_max: float, epsilon: float, n_nodes: int) -> float:
    return epsilon / (4.0 * n_nodes ** 3) * weight_fn(q_max)


@dataclass
class ModifiedWeights:
    g_star: float
    w: list[float]
    dstar: list[int]
    tied: list[bool]


def modified_weights_from_g(network: Network, gq, gstar: float, rng=None) -> ModifiedWeights:
    floored = [[v if v > gstar else gstar for v in row] for row in gq]
    w, dstar, tied = link_weights_from_g(network, floored, rng)
    return ModifiedWeights(gstar, w, dstar, tied)


def modified_weights(weight_fn: WeightFn, queues, epsilon: float, network: Network, rng=None) -> ModifiedWeights:
    """Link weights with every queue's g-value floored at ``g*``.

    ``g* = epsilon / (4 N^3) * g(q_max)`` uses the global maximum MAC queue.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    gq = [[weight_fn(float(v)) for v in row] for row in queues]
    q_max = max(max(row) for row in queues)
    return modified_weights_from_g(network, gq, g_star(weight_fn, q_max, epsilon, network.node_count), rng)


def basic_csma_step(rng, x: int, w_mod, adjacency, n_links: int) -> tuple[int, int]:
    """One Glauber update: pick a link uniformly and re-randomize it if unblocked.

    Returns ``(new_schedule, chosen_link)``.
    """
    l = int(rng.random() * n_links)
    bit = 1 << l
    if adjacency[l] & x:
        return x & ~bit, l
    if rng.random() < activation_probability(w_mod[l]):
        return x | bit, l
    return x & ~bit, l


@dataclass
class CsmaNodeState:
    """Per-node Q-CSMA memories."""

    beta: list[float]
    AS: list[int] = field(default_factory=list)
    AR: list[int] = field(default_factory=list)
    ID: list[int] = field(default_factory=list)
    NS: list[int] = field(default_factory=list)
    NR: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.beta)
        for name in ("AS", "AR", "NS", "NR"):
            if not getattr(self, name):
                setattr(self, name, [0] * n)
        if not self.ID:
            self.ID = [-1] * n

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("beta", "AS", "AR", "ID", "NS", "NR")}

    @classmethod
    def from_dict(cls, d: dict) -> "CsmaNodeState":
        return cls(**{k: list(v) for k, v in d.items()})


def draw_rtd_targets(rng, network: Network, beta) -> dict[int, int]:
    """First mini-slot draws: which nodes send a RTD, and to whom."""
    targets: dict[int, int] = {}
    for i in range(network.node_count):
        outs = network.out_neighbors[i]
        if rng.random() < beta[i] and outs:
            targets[i] = outs[int(rng.random() * len(outs))]
    return targets


def resolve_decisions(network: Network, targets: dict[int, int], order=None):
    """Resolve RTD/CTD collisions into a decision schedule.

    Returns ``(links, receivers)`` where ``links`` is the sorted list of link
    indices in the decision schedule and ``receivers`` maps each node that
    got a RTD to the sender it answered. The result does not depend on
    ``order``, which only permutes the processing sequence.
    """
    nodes = list(order) if order is not None else list(range(network.node_count))
    senders = set(targets)
    nbrs = network.neighbors
    receivers: dict[int, int] = {}
    for j in nodes:
        if j in senders:
            continue
        heard = [i for i in nbrs[j] if i in senders]
        if len(heard) == 1 and targets[heard[0]] == j:
            receivers[j] = heard[0]
    links = []
    for i in nodes:
        if i not in senders:
            continue
        j = targets[i]
        if receivers.get(j) != i:
            continue
        ctd_heard = [k for k in nbrs[i] if k in receivers]
        if ctd_heard == [j]:
            links.append(network.link_index[(i, j)])
    return sorted(links), receivers


def decision_schedule(rng, network: Network, state: CsmaNodeState) -> list[int]:
    """Run the control slot; updates ``AS/AR/ID`` and returns the decision links."""
    n = network.node_count
    targets = draw_rtd_targets(rng, network, state.beta)
    links, receivers = resolve_decisions(network, targets)
    state.AS = [0] * n
    state.AR = [0] * n
    state.ID = [-1] * n
    for j, i in receivers.items():
        state.AR[j] = 1
        state.ID[j] = i
    for l in links:
        i, j = network.links[l]
        state.AS[i] = 1
        state.ID[i] = j
    mask = 0
    for l in links:
        mask |= 1 << l
    if not network.conflict_graph.is_independent(mask):
        raise ConflictViolation(f"decision schedule {links} is not conflict-free")
    return links


def data_schedule(rng, network: Network, decision, x_prev: int, state: CsmaNodeState, w_mod) -> int:
    """Update the links in the decision schedule using carrier-sense memories only."""
    x = x_prev
    NR, NS = state.NR, state.NS
    for l in decision:
        i, j = network.links[l]
        bit = 1 << l
        if x_prev & bit or (NR[i] == 0 and NS[j] == 0):
            if rng.random() < activation_probability(w_mod[l]):
                x |= bit
            else:
                x &= ~bit
        else:
            x &= ~bit
    if not network.conflict_graph.is_independent(x):
        raise ConflictViolation(f"data schedule {bin(x)} is not conflict-free")
    return x


def carrier_sense_update(network: Network, x: int, state: CsmaNodeState | None = None):
    """Memories after a data slot with active links ``x``.

    ``NS_n = 1`` when a sender in ``n``'s neighbourhood (or ``n`` itself)
    was transmitting data; ``NR_n = 1`` likewise for receivers sending ACKs.
    """
    n = network.node_count
    NS = [0] * n
    NR = [0] * n
    m = x
    while m:
        low = m & -m
        a, b = network.links[low.bit_length() - 1]
        NS[a] = 1
        for v in network.neighbors[a]:
            NS[v] = 1
        NR[b] = 1
        for v in network.neighbors[b]:
            NR[v] = 1
        m ^= low
    if state is not None:
        state.NS, state.NR = NS, NR
    return NS, NR


class CsmaScheduler:
    """Shared machinery of the two CSMA variants: persistent schedule ``x``."""

    kind = "csma"

    def __init__(self, network: Network, weight_fn: WeightFn, epsilon: float = 0.1):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.network = network
        self.weight_fn = weight_fn
        self.epsilon = epsilon
        self.x = 0

    def _assign(self, x: int, mw: ModifiedWeights) -> tuple[tuple[int, ...], list[int]]:
        links = []
        m = x
        while m:
            low = m & -m
            links.append(low.bit_length() - 1)
            m ^= low
        return tuple(links), [mw.dstar[l] for l in links]

    def state_dict(self) -> dict:
        return {"x": self.x}

    def load_state(self, d: dict) -> None:
        self.x = int(d["x"])


class BasicCsmaScheduler(CsmaScheduler):
    kind = "basic_csma"

    def decide(self, gq, q_max: int, rng):
        gstar = g_star(self.weight_fn, q_max, self.epsilon, self.network.node_count)
        mw = modified_weights_from_g(self.network, gq, gstar, rng)
        g = self.network.conflict_graph
        self.x, _ = basic_csma_step(rng, self.x, mw.w, g.adjacency, g.n_links)
        links, dests = self._assign(self.x, mw)
        return links, dests, mw

    def after_transmission(self, x: int) -> None:
        pass


class QCsmaScheduler(CsmaScheduler):
    kind = "qcsma"

    def __init__(self, network: Network, weight_fn: WeightFn, epsilon: float = 0.1, beta=0.5):
        super().__init__(network, weight_fn, epsilon)
        n = network.node_count
        if isinstance(beta, (int, float)):
            betas = [float(beta)] * n
        else:
            betas = [float(beta.get(i, 0.5)) for i in range(n)] if isinstance(beta, dict) else list(beta)
        if len(betas) != n or any(not (0.0 <= b <= 1.0) for b in betas):
            raise ValueError("beta must give one probability in [0, 1] per node")
        self.nodes = CsmaNodeState(betas)

    def decide(self, gq, q_max: int, rng):
        gstar = g_star(self.weight_fn, q_max, self.epsilon, self.network.node_count)
        decision = decision_schedule(rng, self.network, self.nodes)
        mw = modified_weights_from_g(self.network, gq, gstar, rng)
        self.x = data_schedule(rng, self.network, decision, self.x, self.nodes, mw.w)
        links, dests = self._assign(self.x, mw)
        return links, dests, mw

    def after_transmission(self, x: int) -> None:
        carrier_sense_update(self.network, x, self.nodes)

    def state_dict(self) -> dict:
        return {"x": self.x, "nodes": self.nodes.to_dict()}

    def load_state(self, d: dict) -> None:
        self.x = int(d["x"])
        self.nodes = CsmaNodeState.from_dict(d["nodes"])
