from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsched.network import NetworkSpec, build_network
from flowsched.transport import (
    FileRecord,
    TrafficSpec,
    WindowPolicy,
    draw_injection,
    expected_backlog,
    inject_packets,
    reindex_files,
    residual_second_moment_bound,
    sample_arrivals,
    update_window,
)


def traffic(kappa, etas=(0.5,), law="poisson"):
    probs = [1.0 / len(etas)] * len(etas)
    return TrafficSpec({0: kappa}, list(etas), {0: probs}, law)


def test_zero_rate_never_arrives():
    rng = np.random.default_rng(0)
    spec = traffic(0.0)
    assert all(sample_arrivals(rng, spec, 0, WindowPolicy()) == [] for _ in range(1000))


def test_bernoulli_mean():
    rng = np.random.default_rng(1)
    spec = traffic(0.3, law="bernoulli")
    counts = [len(sample_arrivals(rng, spec, 0, WindowPolicy())) for _ in range(100_000)]
    assert abs(np.mean(counts) - 0.3) < 0.01


def test_poisson_dispersion():
    rng = np.random.default_rng(2)
    spec = traffic(2.0)
    counts = np.array([len(sample_arrivals(rng, spec, 0, WindowPolicy())) for _ in range(100_000)])
    assert abs(counts.var() / counts.mean() - 1.0) < 0.05


def test_arrivals_get_policy_window_and_consecutive_ids():
    rng = np.random.default_rng(3)
    spec = traffic(5.0)
    new = sample_arrivals(rng, spec, 0, WindowPolicy("fixed", w_cong=4, w=3), next_uid=10, slot=7)
    assert [f.uid for f in new] == list(range(10, 10 + len(new)))
    assert all(f.window == 3 and f.arrived == 7 and f.xi for f in new)


def test_traffic_derived_load():
    spec = TrafficSpec({0: 0.1}, [0.5, 0.1], {0: [0.7, 0.3]})
    assert spec.mean_size(0) == pytest.approx(4.4)
    assert spec.load(0) == pytest.approx(0.44)
    assert spec.eta_min == 0.1
    with pytest.raises(ValueError):
        TrafficSpec({0: 0.1}, [0.5], {0: [0.9]})
    with pytest.raises(ValueError):
        TrafficSpec({0: 0.1}, [1.5], {0: [1.0]})


def _file(eta, window=1):
    return FileRecord(0, 0, 0, 1.0 / eta, eta, window, 0)


def test_zero_space_injects_nothing():
    rng = np.random.default_rng(0)
    f = _file(0.5, window=2)
    f.in_window = 2
    out = inject_packets(rng, f)
    assert (out.injected, out.finished, out.residual) == (0, False, 0.0)


def test_two_slot_window_outcome_law():
    """Enumerated law for space 2, eta 1/2: (1, end) 1/2, (2, end) 1/4, (2, open) 1/4."""
    outcomes = {(1, True): 0.5, (2, True): 0.25, (2, False): 0.25}
    mean_b = sum(p * (k - (2.0 if done else 0.0)) for (k, done), p in outcomes.items())
    assert mean_b == 0.0
    rng = np.random.default_rng(4)
    n = 200_000
    seen = {}
    for _ in range(n):
        key = draw_injection(rng, 0.5, 2)
        seen[key] = seen.get(key, 0) + 1
    assert set(seen) == set(outcomes)
    for key, p in outcomes.items():
        assert abs(seen[key] / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_unit_files_are_deterministic():
    rng = np.random.default_rng(5)
    for w in (1, 2, 7):
        f = _file(1.0, window=w)
        out = inject_packets(rng, f)
        assert (out.injected, out.finished, out.residual) == (1, True, 0.0)
        assert not f.xi


def test_per_packet_termination_matches_geometric_draw():
    """The injected count equals a packet-by-packet coin flip process in law."""
    rng = np.random.default_rng(6)
    eta, space, n = 0.3, 4, 100_000
    fast = np.array([draw_injection(rng, eta, space)[0] for _ in range(n)])
    slow = []
    for _ in range(n):
        k = 0
        while k < space:
            k += 1
            if rng.random() < eta:
                break
        slow.append(k)
    for k in range(1, space + 1):
        p1, p2 = (fast == k).mean(), (np.array(slow) == k).mean()
        assert abs(p1 - p2) < 0.01


def test_file_sizes_have_the_right_mean():
    rng = np.random.default_rng(7)
    for eta in (0.5, 0.1):
        sizes = []
        for _ in range(20_000):
            f = _file(eta, window=3)
            while f.xi:
                inject_packets(rng, f)
                f.in_window = 0
            sizes.append(f.injected)
        sizes = np.array(sizes)
        se = sizes.std(ddof=1) / math.sqrt(sizes.size)
        assert abs(sizes.mean() - 1.0 / eta) < 3 * se + 1e-12


def test_window_policies():
    rng = np.random.default_rng(8)
    assert update_window(WindowPolicy("fixed", w_cong=5, w=3), 1, True, rng) == 3
    aimd = WindowPolicy("aimd", w_cong=8, increase=1, decrease=0.5)
    assert update_window(aimd, 7, True, rng) == 3
    assert update_window(aimd, 8, False, rng) == 8
    assert update_window(aimd, 1, True, rng) == 1
    rnd = WindowPolicy("random", w_cong=4)
    draws = {update_window(rnd, 1, False, rng) for _ in range(500)}
    assert draws == {1, 2, 3, 4}


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["fixed", "random", "aimd"]), st.integers(1, 12), st.integers(-5, 30),
       st.booleans(), st.integers(0, 2**31))
def test_windows_stay_in_bounds(kind, w_cong, window, congested, seed):
    pol = WindowPolicy(kind, w_cong=w_cong, w=min(3, w_cong), increase=2, decrease=0.6)
    new = update_window(pol, window, congested, np.random.default_rng(seed))
    assert 1 <= new <= w_cong
    assert 1 <= pol.initial_window() <= w_cong


def test_reindex_examples():
    files = [_file(0.5) for _ in range(3)]
    for k, f in enumerate(files):
        f.uid = k
    files[1].xi = False
    assert [f.uid for f in reindex_files(files)] == [0, 2]
    assert reindex_files(files[:1]) == files[:1]
    for f in files:
        f.xi = False
    assert reindex_files(files) == []


def test_expected_backlog_examples():
    net = build_network(NetworkSpec(3, [(0, 1), (1, 2)], {0: 2}, {2: {0: 1, 1: 2}}))
    assert expected_backlog(net, 1, 2, 7) == 7
    two = [_file(0.5), _file(0.5)]
    assert expected_backlog(net, 0, 2, 4, two) == 8
    for f in two:
        f.xi = False
    assert expected_backlog(net, 0, 2, 4, two) == 4


def test_residual_bound_formula():
    assert residual_second_moment_bound(0.5, 3, 4, 0.1, 1.0) == pytest.approx((0.5 + 9) * 100)
    assert residual_second_moment_bound(0.0, 1, 5, 1.0) == 25
