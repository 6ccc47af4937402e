from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsched import analysis as an
from flowsched.config import parse_config
from flowsched.engine import Simulation
from flowsched.errors import DimensionMismatch, InsufficientData, InsufficientSamples
from flowsched.network import ConflictGraph, enumerate_schedules, line_network, random_network
from flowsched.scenarios import stability_doc
from flowsched.weights import oracle_max_weight


def _random_graph(rng, n_links, density=0.4):
    edges = [(a, b) for a in range(n_links) for b in range(a + 1, n_links) if rng.random() < density]
    return ConflictGraph.from_edges(n_links, edges)


def test_gibbs_single_link():
    w = math.log(3.0)
    pi = an.exact_stationary(ConflictGraph.from_edges(1, []), [w])
    assert pi == pytest.approx([0.25, 0.75])


def test_gibbs_conflicting_pair_uniform():
    pi = an.exact_stationary(ConflictGraph.from_edges(2, [(0, 1)]), [0.0, 0.0])
    assert pi == pytest.approx([1 / 3] * 3)
    with pytest.raises(DimensionMismatch):
        an.exact_stationary(ConflictGraph.from_edges(2, [(0, 1)]), [0.0])


def test_single_link_kernel():
    chain = an.build_kernel(ConflictGraph.from_edges(1, []), [math.log(3.0)])
    assert chain.P == pytest.approx(np.array([[0.25, 0.75], [0.25, 0.75]]))


def test_silent_decisions_freeze_the_chain():
    g = ConflictGraph.from_edges(3, [(0, 1)])
    chain = an.build_kernel(g, [0.3, -0.2, 1.0], "multi_site", alpha={0: 1.0})
    assert chain.P == pytest.approx(np.eye(chain.r))


def test_triangle_detailed_balance():
    g = an.ring_conflict_graph(3)
    chain = an.build_kernel(g, [0.5, 1.0, -0.5])
    assert an.detailed_balance_error(chain.P, chain.pi) < 1e-15
    assert chain.stationarity_error() < 1e-15
    assert chain.row_sum_error() < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_single_site_kernel_fixes_gibbs(seed, n_links):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, n_links)
    w = rng.uniform(-2, 2, size=n_links)
    chain = an.build_kernel(g, w)
    assert chain.row_sum_error() < 1e-12
    assert chain.stationarity_error() < 1e-12
    assert an.stationary_vector(chain.P) == pytest.approx(chain.pi, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_decision_kernel_fixes_gibbs(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(3, 7)), 2, max_links=8)
    w = rng.uniform(-1, 1.5, size=net.n_links)
    chain = an.build_kernel(net.conflict_graph, w, "multi_site", network=net, beta=0.5)
    assert chain.alpha_method == "exact"
    assert sum(chain.alpha.values()) == pytest.approx(1.0)
    assert chain.stationarity_error() < 1e-12
    assert an.detailed_balance_error(chain.P, chain.pi) < 1e-12


def test_decision_law_exact_matches_sampling():
    net = line_network(4, {0: 3, 3: 0})
    exact, method, half = an.decision_set_distribution(net, 0.5)
    assert method == "exact" and half == 0.0
    rng = np.random.default_rng(0)
    counts = {}
    n = 100_000
    for _ in range(n):
        links, _ = an.resolve_decisions(net, an.draw_rtd_targets(rng, net, [0.5] * 4))
        m = sum(1 << l for l in links)
        counts[m] = counts.get(m, 0) + 1
    for m, p in exact.items():
        assert abs(counts.get(m, 0) / n - p) < 4 * math.sqrt(p * (1 - p) / n) + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_slem_matches_eigenvalues(seed, n_links):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, n_links)
    chain = an.build_kernel(g, rng.uniform(0, 1.5, size=n_links))
    lam, T = an.slem(chain.P, chain.pi, tol=1e-10)
    ev = np.sort(np.abs(np.linalg.eigvals(chain.P)))[::-1]
    assert lam == pytest.approx(ev[1], abs=1e-6)
    assert T == pytest.approx(1.0 / (1.0 - lam))


def test_slem_non_reversible():
    # a directed 3-cycle with laziness: eigenvalues 1 and 0.5 + 0.5 * exp(+-2 pi i / 3)
    P = 0.5 * np.eye(3) + 0.5 * np.roll(np.eye(3), 1, axis=1)
    lam, _ = an.slem(P, tol=1e-10)
    assert lam == pytest.approx(abs(0.5 + 0.5 * np.exp(2j * np.pi / 3)), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_spectral_gap_respects_guarantee(seed, n_links):
    rng = np.random.default_rng(seed)
    g = _random_graph(rng, n_links)
    w = rng.uniform(0, 1.5, size=n_links)
    lam, T = an.slem(an.build_kernel(g, w).P)
    assert math.log(1.0 - lam) >= an.single_site_gap_bound_log(n_links, float(np.max(w)))


def test_tv_examples():
    assert an.tv_distance([1, 0], [0, 1]) == 1.0
    assert an.tv_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert an.tv_distance([0.2, 0.3, 0.5], [0.3, 0.3, 0.4]) == pytest.approx(0.1)
    with pytest.raises(DimensionMismatch):
        an.tv_distance([1.0], [0.5, 0.5])


def test_single_link_sampler_occupancy():
    rep = an.csma_mixing_experiment(ConflictGraph.from_edges(1, []), [math.log(3.0)], slots=300_000,
                                    seed=2, tolerance=0.005)
    assert rep.verdict == "Pass"
    assert rep.empirical[1] == pytest.approx(0.75, abs=0.005)


def test_qcsma_sampler_matches_gibbs():
    net = line_network(3, {0: 2, 2: 0})
    w = [0.5, 1.0, -0.5, 0.2]
    rep = an.csma_mixing_experiment(net.conflict_graph, w, slots=200_000, seed=3, variant="qcsma",
                                    network=net, beta=0.5, tolerance=0.02)
    assert rep.verdict == "Pass", rep.tv


def test_zero_beta_is_inconclusive():
    net = line_network(3, {0: 2})
    rep = an.csma_mixing_experiment(net.conflict_graph, [1.0, 1.0], slots=2000, seed=1, variant="qcsma",
                                    network=net, beta=0.0)
    assert rep.verdict == "Inconclusive"


def test_brute_force_oracle_agrees_with_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(20):
        net = random_network(rng, 7, 3, max_links=10)
        w = list(rng.normal(size=net.n_links))
        assert an.brute_force_max_weight(net, w) == pytest.approx(
            oracle_max_weight(enumerate_schedules(net.conflict_graph), w), abs=1e-12)


def test_residual_test_passes_on_true_residuals():
    rng = np.random.default_rng(0)
    b = an.synthetic_residuals(rng, 0.5, 200_000, w_cong=5)
    rep = an.residual_moment_test(b, bound=1e6)
    assert rep.passed and abs(rep.z) < 4


def test_residual_test_flags_shifted_residuals():
    rng = np.random.default_rng(0)
    b = an.synthetic_residuals(rng, 0.5, 200_000, w_cong=5) + 0.05
    assert not an.residual_moment_test(b).passed
    rep = an.residual_moment_test(an.synthetic_residuals(rng, 0.5, 200_000), bound=0.1)
    assert not rep.passed


def test_residual_test_needs_samples():
    with pytest.raises(InsufficientSamples):
        an.residual_moment_test(np.zeros(10))


def test_verdict_on_synthetic_trajectories():
    rng = np.random.default_rng(0)
    flat = 20 + rng.normal(0, 1, size=20_000)
    v = an.stability_verdict(flat)
    assert v.tag == "Stable"
    t = np.arange(20_000)
    growing = 0.01 * t + rng.normal(0, 1, size=t.size)
    v = an.stability_verdict(growing, final_backlog=0.05 * t.size, excess_load=0.01)
    assert v.tag == "Unstable"
    # growth without a matching backlog stays undecided
    v = an.stability_verdict(growing, final_backlog=1.0, excess_load=0.01)
    assert v.tag == "Inconclusive"
    with pytest.raises(InsufficientData):
        an.stability_verdict(flat[:100])


def test_trend_ci_covers_true_slope():
    rng = np.random.default_rng(5)
    y = 3.0 + 0.002 * np.arange(50_000) + rng.normal(0, 1, size=50_000)
    slope, (lo, hi) = an.trend_ci(y)
    assert lo <= 0.002 <= hi


def test_alpha_t_is_positive_and_shrinks():
    from flowsched.weights import WeightFn

    g = WeightFn("loglog")
    small, mid, large = (an.alpha_t(g, 5, 4, v) for v in (0.01, 1.0, 3.0))
    # capped at 2 (1 + w_cong) L g'(0) until the floor exceeds 1 + w_cong
    assert small == mid == pytest.approx(2 * 6 * 4 * g.deriv(0.0))
    assert mid > large > 0


def test_adiabatic_check_on_live_run():
    doc = stability_doc(theta=0.8, window="fixed5", scheduler="basic_csma", slots=600)
    sim = Simulation(dataclasses.replace(parse_config(doc).sim, assertions="raise"))
    rep = an.adiabatic_check(sim, 300, delta=0.1, mixing_every=25)
    assert rep.checked + rep.premise_violations == 299
    assert rep.ratio_violations == 0
    assert rep.alpha_T and all(v > 0 for v in rep.alpha_T)
