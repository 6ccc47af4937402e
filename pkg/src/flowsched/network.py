"""Wireless network topology, fixed routing, interference and capacity points.

Nodes are the integers ``0 .. N-1``. Links are ordered node pairs and get a
deterministic index (their position in the sorted link list). Every routing
table maps a non-destination node to its next hop toward one destination.

Interference follows the synchronized data/ACK conflict-set rule. A node's
neighbourhood ``C(i)`` is the set of nodes it shares a link with in either
direction, i.e. nodes within transmission range.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    CyclicRoute,
    DanglingRoute,
    EmptyScheduleSet,
    InfeasibleSplit,
    NegativeLoad,
    NetworkError,
    NoRoute,
    TooLarge,
    UnknownLink,
    UnusedLink,
)

Link = tuple[int, int]

DEFAULT_ENUMERATION_CAP = 24


@dataclass
class NetworkSpec:
    """Raw description of a network, before validation."""

    node_count: int
    links: list[Link]
    sources: dict[int, int]
    routes: dict[int, dict[int, int]]


class Network:
    """Validated, immutable network. Build it with :func:`build_network`."""

    def __init__(self, spec: NetworkSpec):
        n = spec.node_count
        if not isinstance(n, int) or n < 1:
            raise NetworkError(f"node_count must be a positive integer, got {n!r}")
        links = sorted({(int(a), int(b)) for a, b in spec.links})
        if len(links) != len(spec.links):
            raise NetworkError("duplicate links in link list")
        for a, b in links:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise NetworkError(f"invalid link {(a, b)} for {n} nodes")
        self.node_count = n
        self.links: tuple[Link, ...] = tuple(links)
        self.link_index: dict[Link, int] = {l: k for k, l in enumerate(links)}

        out: list[list[int]] = [[] for _ in range(n)]
        nbrs: list[set[int]] = [set() for _ in range(n)]
        for a, b in links:
            out[a].append(b)
            nbrs[a].add(b)
            nbrs[b].add(a)
        self.out_neighbors: tuple[tuple[int, ...], ...] = tuple(tuple(sorted(o)) for o in out)
        self.neighbors: tuple[frozenset[int], ...] = tuple(frozenset(s) for s in nbrs)

        self.sources: dict[int, int] = {int(u): int(d) for u, d in sorted(spec.sources.items())}
        if not self.sources:
            raise NetworkError("at least one source is required")
        for u, d in self.sources.items():
            if not (0 <= u < n and 0 <= d < n):
                raise NetworkError(f"source {u} -> {d} out of range")
            if u == d:
                raise NetworkError(f"source {u} cannot be its own destination")
        self.destinations: tuple[int, ...] = tuple(sorted(set(self.sources.values())))
        self.dest_index: dict[int, int] = {d: k for k, d in enumerate(self.destinations)}

        routes = {int(d): {int(a): int(b) for a, b in table.items()} for d, table in spec.routes.items()}
        for d in routes:
            if d not in self.dest_index:
                raise NetworkError(f"routing table given for node {d}, which is no source's destination")
        for d in self.destinations:
            if d not in routes:
                raise NoRoute(f"no routing table for destination {d}")

        D = len(self.destinations)
        # next_hop[k][i] = next node toward destinations[k], or -1
        self.next_hop: list[list[int]] = [[-1] * n for _ in range(D)]
        self.routing: np.ndarray = np.zeros((D, n, n), dtype=np.int64)
        for d, table in routes.items():
            k = self.dest_index[d]
            for a, b in table.items():
                if not (0 <= a < n):
                    raise NetworkError(f"route entry for unknown node {a}")
                if a == d:
                    raise CyclicRoute(f"destination {d} has a next hop in its own routing table")
                if (a, b) not in self.link_index:
                    raise DanglingRoute(f"route {a}->{b} for destination {d} uses a missing link")
                self.next_hop[k][a] = b
                self.routing[k, a, b] = 1

        for k, d in enumerate(self.destinations):
            power = np.eye(n, dtype=np.int64)
            r = self.routing[k]
            for _ in range(n):
                power = np.minimum(power @ r, 1)
            if power.any():
                raise CyclicRoute(f"routing toward {d} contains a cycle")
            for a in range(n):
                if self.next_hop[k][a] >= 0:
                    node = a
                    while self.next_hop[k][node] >= 0:
                        node = self.next_hop[k][node]
                    if node != d:
                        raise NoRoute(f"route from {a} toward {d} dead-ends at {node}")
        for u, d in self.sources.items():
            if self.next_hop[self.dest_index[d]][u] < 0:
                raise NoRoute(f"source {u} has no route to {d}")

        carried: list[list[int]] = [[] for _ in links]
        for k in range(D):
            for a in range(n):
                b = self.next_hop[k][a]
                if b >= 0:
                    carried[self.link_index[(a, b)]].append(k)
        for l, ks in enumerate(carried):
            if not ks:
                raise UnusedLink(f"link {links[l]} carries no destination")
        self.carried: tuple[tuple[int, ...], ...] = tuple(tuple(ks) for ks in carried)

        self.conflict_graph = ConflictGraph.from_network(self)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_dest(self) -> int:
        return len(self.destinations)

    def dest_of(self, source: int) -> int:
        return self.sources[source]

    def path(self, source: int) -> list[int]:
        """Node sequence from ``source`` to its destination."""
        k = self.dest_index[self.sources[source]]
        nodes = [source]
        while self.next_hop[k][nodes[-1]] >= 0:
            nodes.append(self.next_hop[k][nodes[-1]])
        return nodes

    def __repr__(self) -> str:
        return f"Network(N={self.node_count}, links={list(self.links)}, sources={self.sources})"


def build_network(spec: NetworkSpec) -> Network:
    return Network(spec)


def conflict_set(network: Network, link: Link) -> frozenset[Link]:
    """Links that must be silent for a data/ACK exchange on ``link`` to succeed.

    The returned set contains ``link`` itself; the conflict graph drops that
    self-pair.
    """
    if link not in network.link_index:
        raise UnknownLink(link)
    i, j = link
    ci, cj = network.neighbors[i], network.neighbors[j]
    ends = (i, j)
    return frozenset(
        (a, b) for a, b in network.links if a in cj or b in ci or a in ends or b in ends
    )


@dataclass(frozen=True)
class ConflictGraph:
    """Conflict graph over link indices, stored as neighbour bitmasks."""

    n_links: int
    adjacency: tuple[int, ...]

    @classmethod
    def from_network(cls, network: Network) -> "ConflictGraph":
        adj = [0] * network.n_links
        for l, link in enumerate(network.links):
            for other in conflict_set(network, link):
                m = network.link_index[other]
                if m != l:
                    adj[l] |= 1 << m
        return cls(network.n_links, tuple(adj))

    @classmethod
    def from_edges(cls, n_links: int, edges: Iterable[tuple[int, int]]) -> "ConflictGraph":
        adj = [0] * n_links
        for a, b in edges:
            if a == b:
                continue
            adj[a] |= 1 << b
            adj[b] |= 1 << a
        return cls(n_links, tuple(adj))

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {
            (a, b)
            for a in range(self.n_links)
            for b in range(a + 1, self.n_links)
            if self.adjacency[a] >> b & 1
        }

    def neighbors_of(self, l: int) -> list[int]:
        mask = self.adjacency[l]
        return [m for m in range(self.n_links) if mask >> m & 1]

    def is_independent(self, mask: int) -> bool:
        m = mask
        while m:
            low = m & -m
            l = low.bit_length() - 1
            if self.adjacency[l] & mask:
                return False
            m ^= low
        return True


@dataclass(frozen=True)
class ScheduleSet:
    """All independent sets of a conflict graph, as bitmasks in ascending order."""

    n_links: int
    masks: tuple[int, ...]
    members: tuple[tuple[int, ...], ...] = field(repr=False)
    index: Mapping[int, int] = field(repr=False)

    @property
    def r(self) -> int:
        return len(self.masks)

    def __len__(self) -> int:
        return len(self.masks)

    def vectors(self) -> np.ndarray:
        out = np.zeros((len(self.masks), self.n_links), dtype=np.int8)
        for k, mem in enumerate(self.members):
            out[k, list(mem)] = 1
        return out


def _mask_members(mask: int) -> tuple[int, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def enumerate_schedules(graph: ConflictGraph, cap: int = DEFAULT_ENUMERATION_CAP) -> ScheduleSet:
    """Enumerate every independent set of ``graph`` (the empty set included)."""
    L = graph.n_links
    if L > cap:
        raise TooLarge(f"{L} links exceeds the enumeration cap of {cap}")
    found: list[int] = []

    def extend(start: int, mask: int, blocked: int) -> None:
        found.append(mask)
        for l in range(start, L):
            if not blocked >> l & 1:
                extend(l + 1, mask | 1 << l, blocked | graph.adjacency[l] | 1 << l)

    extend(0, 0, 0)
    masks = tuple(sorted(found))
    return ScheduleSet(
        n_links=L,
        masks=masks,
        members=tuple(_mask_members(m) for m in masks),
        index={m: k for k, m in enumerate(masks)},
    )


@dataclass
class CapacityPoint:
    """A load vector built from a convex mix of schedules and conserving flows."""

    mix: dict[int, float]
    mu: np.ndarray
    mu_d: np.ndarray
    rho: dict[int, float]
    theta: float
    slack: float

    def total_load(self) -> float:
        return float(sum(self.rho.values()))


def _as_mask(network: Network, schedule) -> int:
    if isinstance(schedule, int):
        return schedule
    mask = 0
    for link in schedule:
        link = tuple(link)
        if link not in network.link_index:
            raise UnknownLink(link)
        mask |= 1 << network.link_index[link]
    return mask


def net_outflow(network: Network, mu_d: np.ndarray) -> np.ndarray:
    """``out - in`` of destination-``k`` flow at every node, shape ``(D, N)``."""
    D, N = network.n_dest, network.node_count
    net = np.zeros((D, N))
    for l, (a, b) in enumerate(network.links):
        for k in range(D):
            net[k, a] += mu_d[k, l]
            net[k, b] -= mu_d[k, l]
    return net


def make_capacity_point(
    network: Network,
    schedule_mix,
    per_destination_split: Mapping[Link, Mapping[int, float]] | None = None,
    theta: float = 1.0,
) -> CapacityPoint:
    """Build source loads supportable by ``schedule_mix`` and scale them by ``theta``.

    ``schedule_mix`` is a mapping (or list of pairs) from a schedule, given as
    an iterable of links or a bitmask, to its time share. The split assigns
    each link's rate to destinations; links carrying a single destination
    default to giving it the whole rate.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    items = schedule_mix.items() if isinstance(schedule_mix, Mapping) else schedule_mix
    graph = network.conflict_graph
    mix: dict[int, float] = {}
    for sched, weight in items:
        mask = _as_mask(network, sched)
        if weight < 0:
            raise ValueError("schedule mix weights must be nonnegative")
        if not graph.is_independent(mask):
            raise ValueError(f"schedule {_mask_members(mask)} is not conflict-free")
        mix[mask] = mix.get(mask, 0.0) + float(weight)
    if not math.isclose(math.fsum(mix.values()), 1.0, abs_tol=1e-12):
        raise ValueError("schedule mix weights must sum to 1")

    L, D = network.n_links, network.n_dest
    mu = np.zeros(L)
    for mask, weight in mix.items():
        for l in _mask_members(mask):
            mu[l] += weight

    split = {tuple(k): dict(v) for k, v in (per_destination_split or {}).items()}
    mu_d = np.zeros((D, L))
    for l, link in enumerate(network.links):
        carried = network.carried[l]
        if link in split:
            fractions = split[link]
        elif len(carried) == 1:
            fractions = {network.destinations[carried[0]]: 1.0}
        else:
            raise InfeasibleSplit(f"link {link} carries several destinations and needs a split")
        if any(f < 0 for f in fractions.values()):
            raise InfeasibleSplit(f"negative split on link {link}")
        if sum(fractions.values()) > 1.0 + 1e-12:
            raise InfeasibleSplit(f"split on link {link} exceeds the link rate")
        for d, f in fractions.items():
            if d not in network.dest_index or network.dest_index[d] not in carried:
                raise InfeasibleSplit(f"link {link} does not carry destination {d}")
            mu_d[network.dest_index[d], l] = mu[l] * f

    net = net_outflow(network, mu_d)
    rho: dict[int, float] = {}
    for u, d in network.sources.items():
        k = network.dest_index[d]
        if net[k, u] < -1e-12:
            raise NegativeLoad(f"source {u} receives more {d}-flow than it sends")
        rho[u] = theta * max(float(net[k, u]), 0.0)
    for k, d in enumerate(network.destinations):
        for n in range(network.node_count):
            if n == d or network.sources.get(n) == d:
                continue
            if net[k, n] < -1e-12:
                raise NegativeLoad(f"flow toward {d} is not conserved at relay {n}")

    point = CapacityPoint(mix=mix, mu=mu, mu_d=mu_d, rho=rho, theta=theta, slack=0.0)
    point.slack = capacity_slack(network, point.rho, mu_d, mu)
    return point


def capacity_slack(network: Network, rho: Mapping[int, float], mu_d: np.ndarray, mu: np.ndarray) -> float:
    """Smallest slack over the three capacity inequality families (negative = violated)."""
    slacks = [float(mu_d.min()) if mu_d.size else 0.0]
    net = net_outflow(network, mu_d)
    for k, d in enumerate(network.destinations):
        for n in range(network.node_count):
            if n == d:
                continue
            load = rho.get(n, 0.0) if network.sources.get(n) == d else 0.0
            slacks.append(float(net[k, n] - load))
    slacks.extend((mu - mu_d.sum(axis=0)).tolist())
    return min(slacks)


def random_network(rng: np.random.Generator, n_nodes: int, n_sources: int, max_links: int = 12) -> Network:
    """Random connected topology with shortest-path routing, used by tests and checks.

    Only links actually used by some route are kept, so the result always
    passes validation.
    """
    while True:
        pairs = [(a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes)]
        rng.shuffle(pairs)
        # random spanning tree plus a few extra edges
        order = rng.permutation(n_nodes).tolist()
        undirected = set()
        for idx in range(1, n_nodes):
            a, b = order[idx], order[int(rng.integers(0, idx))]
            undirected.add((min(a, b), max(a, b)))
        for a, b in pairs[: int(rng.integers(0, n_nodes))]:
            undirected.add((a, b))
        adj = {v: set() for v in range(n_nodes)}
        for a, b in undirected:
            adj[a].add(b)
            adj[b].add(a)
        nodes = list(range(n_nodes))
        srcs = rng.choice(nodes, size=min(n_sources, n_nodes - 1), replace=False).tolist()
        sources = {}
        for u in srcs:
            d = int(rng.choice([v for v in nodes if v != u]))
            sources[int(u)] = d
        routes: dict[int, dict[int, int]] = {}
        used: set[Link] = set()
        for d in set(sources.values()):
            parent = {d: None}
            frontier = [d]
            while frontier:
                nxt = []
                for v in frontier:
                    for w in sorted(adj[v]):
                        if w not in parent:
                            parent[w] = v
                            nxt.append(w)
                frontier = nxt
            table = {}
            for u, dd in sources.items():
                if dd != d:
                    continue
                v = u
                while v != d:
                    table[v] = parent[v]
                    used.add((v, parent[v]))
                    v = parent[v]
            routes[d] = table
        if len(used) > max_links:
            continue
        return build_network(NetworkSpec(n_nodes, sorted(used), sources, routes))


def line_network(n_nodes: int, sources: Mapping[int, int] | None = None) -> Network:
    """Line ``0 - 1 - ... - n-1`` with shortest-path routes for the given sources."""
    sources = dict(sources or {0: n_nodes - 1})
    routes: dict[int, dict[int, int]] = {}
    used: set[Link] = set()
    for u, d in sources.items():
        step = 1 if d > u else -1
        table = routes.setdefault(d, {})
        for v in range(u, d, step):
            table[v] = v + step
            used.add((v, v + step))
    return build_network(NetworkSpec(n_nodes, sorted(used), sources, routes))


def all_subsets_independent(graph: ConflictGraph) -> list[int]:
    """Naive enumeration used as a cross-check: filter every subset of links."""
    out = []
    for r in range(graph.n_links + 1):
        for combo in itertools.combinations(range(graph.n_links), r):
            mask = sum(1 << l for l in combo)
            if all(not (graph.adjacency[a] >> b & 1) for a, b in itertools.combinations(combo, 2)):
                out.append(mask)
    return sorted(out)


def require_nonempty(schedules: ScheduleSet) -> None:
    if not schedules.masks:
        raise EmptyScheduleSet("schedule set is empty")
