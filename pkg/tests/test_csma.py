from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsched.csma import (
    BasicCsmaScheduler,
    CsmaNodeState,
    QCsmaScheduler,
    activation_probability,
    basic_csma_step,
    carrier_sense_update,
    data_schedule,
    decision_schedule,
    g_star,
    modified_weights,
    resolve_decisions,
)
from flowsched.network import NetworkSpec, build_network, line_network, random_network
from flowsched.weights import WeightFn


def test_logistic_examples():
    assert activation_probability(0.0) == 0.5
    assert activation_probability(math.log(3)) == pytest.approx(0.75)
    assert activation_probability(800.0) == 1.0
    assert activation_probability(-800.0) == 0.0
    for w in (-5.0, -0.3, 0.3, 5.0):
        assert activation_probability(w) + activation_probability(-w) == pytest.approx(1.0)


def test_g_star_value():
    g = WeightFn("one")
    assert g_star(g, math.e - 1, 0.4, 2) == pytest.approx(0.4 / 32)
    assert g_star(g, 0, 0.1, 5) == 0.0


def test_modified_weights_floor():
    net = line_network(2, {0: 1})
    g = WeightFn("one")
    mw = modified_weights(g, [[0.0], [0.0]], 0.1, net)
    assert mw.g_star == 0.0 and mw.w == [0.0]
    mw = modified_weights(g, [[100.0], [0.0]], 0.1, net)
    gs = 0.1 / 32 * g(100.0)
    assert mw.g_star == pytest.approx(gs)
    assert mw.w[0] == pytest.approx(g(100.0) - gs)
    with pytest.raises(ValueError):
        modified_weights(g, [[1.0], [0.0]], 0.0, net)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["one", "loglog"]), st.floats(0.01, 1.0))
def test_modified_weights_close_to_plain(seed, h, eps):
    """Flooring changes each link weight by at most g*."""
    rng = np.random.default_rng(seed)
    net = random_network(rng, 6, 2, max_links=10)
    q = rng.integers(0, 50, size=(net.node_count, net.n_dest)).astype(float)
    g = WeightFn(h)
    mw = modified_weights(g, q, eps, net)
    gs = g_star(g, q.max(), eps, net.node_count)
    for l, (i, j) in enumerate(net.links):
        plain = max(g(q[i, k]) - g(q[j, k]) for k in net.carried[l])
        assert abs(mw.w[l] - plain) <= gs + 1e-12


def test_single_link_glauber_occupancy():
    rng = np.random.default_rng(0)
    w = [math.log(3.0)]
    x, on, n = 0, 0, 200_000
    for _ in range(n):
        x, _ = basic_csma_step(rng, x, w, (0,), 1)
        on += x
    assert abs(on / n - 0.75) < 0.01


def test_glauber_never_turns_on_blocked_link():
    rng = np.random.default_rng(1)
    adjacency = (0b10, 0b01)
    x = 0b01
    for _ in range(2000):
        x, _ = basic_csma_step(rng, x, [5.0, 5.0], adjacency, 2)
        assert x != 0b11


def _pair():
    return build_network(NetworkSpec(2, [(0, 1)], {0: 1}, {1: {0: 1}}))


def test_decision_beta_zero_is_empty():
    net = line_network(5, {0: 4, 4: 0})
    state = CsmaNodeState([0.0] * 5)
    rng = np.random.default_rng(0)
    for _ in range(100):
        assert decision_schedule(rng, net, state) == []


def test_decision_isolated_pair():
    net = _pair()
    links, receivers = resolve_decisions(net, {0: 1})
    assert links == [0] and receivers == {1: 0}


def test_decision_collision_at_receiver():
    net = line_network(3, {0: 2, 2: 0})
    # 0 and 2 both address node 1: the two RTDs collide and 1 stays silent
    links, receivers = resolve_decisions(net, {0: 1, 2: 1})
    assert links == [] and receivers == {}


def test_decision_both_ends_sending():
    # a node that sends a RTD cannot answer one
    net2 = line_network(2, {0: 1, 1: 0})
    links, receivers = resolve_decisions(net2, {0: 1, 1: 0})
    assert links == [] and receivers == {}


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000))
def test_decision_is_order_independent_and_conflict_free(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(4, 10)), 3, max_links=14)
    targets = {}
    for i in range(net.node_count):
        if net.out_neighbors[i] and rng.random() < 0.6:
            targets[i] = net.out_neighbors[i][int(rng.random() * len(net.out_neighbors[i]))]
    base = resolve_decisions(net, targets)
    order = rng.permutation(net.node_count).tolist()
    assert resolve_decisions(net, targets, order) == base
    mask = sum(1 << l for l in base[0])
    assert net.conflict_graph.is_independent(mask)


def test_data_schedule_examples():
    net = _pair()
    state = CsmaNodeState([0.5, 0.5])
    rng = np.random.default_rng(0)
    # not in the decision schedule: keeps its previous state
    assert data_schedule(rng, net, [], 1, state, [0.0]) == 1
    assert data_schedule(rng, net, [], 0, state, [0.0]) == 0
    # huge weight turns a free link on, tiny weight turns it off
    assert data_schedule(rng, net, [0], 0, state, [800.0]) == 1
    assert data_schedule(rng, net, [0], 1, state, [-800.0]) == 0
    # busy receiver memory blocks activation
    state.NS = [0, 1]
    assert data_schedule(rng, net, [0], 0, state, [800.0]) == 0


def test_carrier_sense_examples():
    net = line_network(4, {0: 3})
    l01 = net.link_index[(0, 1)]
    NS, NR = carrier_sense_update(net, 1 << l01)
    assert NS == [1, 1, 0, 0]
    assert NR == [1, 1, 1, 0]
    assert carrier_sense_update(net, 0) == ([0] * 4, [0] * 4)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10_000))
def test_memories_match_conflict_rule(seed):
    """Free by carrier sense exactly when no conflicting link was active."""
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(3, 10)), 3, max_links=14)
    g = net.conflict_graph
    x = 0
    for l in rng.permutation(net.n_links):
        if rng.random() < 0.5 and not g.adjacency[l] & x:
            x |= 1 << int(l)
    NS, NR = carrier_sense_update(net, x)
    for l, (i, j) in enumerate(net.links):
        if x >> l & 1:
            continue
        free = NR[i] == 0 and NS[j] == 0
        assert free == (g.adjacency[l] & x == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["basic", "q"]))
def test_schedulers_stay_independent(seed, kind):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 7, 3, max_links=12)
    g = WeightFn("loglog")
    sch = BasicCsmaScheduler(net, g, 0.1) if kind == "basic" else QCsmaScheduler(net, g, 0.1, 0.5)
    for _ in range(300):
        gq = [[g(float(v)) for v in row] for row in rng.integers(0, 30, size=(net.node_count, net.n_dest))]
        links, dests, _ = sch.decide(gq, 30, rng)
        assert net.conflict_graph.is_independent(sch.x)
        assert sorted(links) == [l for l in range(net.n_links) if sch.x >> l & 1]
        assert all(d in net.carried[l] for l, d in zip(links, dests))
        sch.after_transmission(sch.x)


def test_qcsma_state_roundtrip():
    net = line_network(4, {0: 3, 3: 0})
    sch = QCsmaScheduler(net, WeightFn("loglog"), 0.1, [0.2, 0.4, 0.6, 0.8])
    rng = np.random.default_rng(3)
    gq = [[1.0] * net.n_dest for _ in range(4)]
    for _ in range(20):
        sch.decide(gq, 5, rng)
        sch.after_transmission(sch.x)
    other = QCsmaScheduler(net, WeightFn("loglog"), 0.1, 0.5)
    other.load_state(sch.state_dict())
    assert other.state_dict() == sch.state_dict()
    with pytest.raises(ValueError):
        QCsmaScheduler(net, WeightFn("loglog"), 0.1, [1.5] * 4)
