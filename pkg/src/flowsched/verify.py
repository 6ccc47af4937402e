"""Verification suites behind ``flowsched verify`` and the acceptance tests.

Every check returns a :class:`CheckResult`. Simulations run by the checks
are tallied in a :class:`RunLedger` so the independence criterion can be
judged over every activation vector produced along the way.
"""

from __future__ import annotations

import csv
import functools
import inspect
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from .config import parse_config
from .engine import CSV_COLUMNS, Simulation
from .network import ConflictGraph, enumerate_schedules, line_network, random_network
from .runner import simulate
from .scenarios import multihop_doc, stability_doc
from .transport import residual_second_moment_bound
from .weights import WeightFn, compute_link_weights, max_weight_schedule

SUITES = {
    "oracles": ("max_weight_oracle", "determinism"),
    "csma_mixing": ("gibbs_stationarity", "multi_site_equivalence"),
    "bounds": ("slem_bounds", "weight_gaps", "zero_mean_residual"),
    "stability": ("flow_stability", "csma_stability"),
}
SUITES["all"] = tuple(c for k in ("oracles", "csma_mixing", "bounds", "stability") for c in SUITES[k]) + (
    "independence",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    statistic: float | None
    bound: float | None
    tolerance: str
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "statistic": self.statistic,
                "bound": self.bound, "tolerance": self.tolerance, "seconds": round(self.seconds, 3),
                **({"detail": self.detail} if self.detail else {})}

    def line(self) -> str:
        stat = "" if self.statistic is None else f" statistic={self.statistic:.6g}"
        bound = "" if self.bound is None else f" bound={self.bound:.6g}"
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}:{stat}{bound} ({self.tolerance})"


@dataclass
class RunLedger:
    """Independence tallies over every simulated activation vector."""

    slots: int = 0
    violations: int = 0
    sources: list = field(default_factory=list)

    def add(self, label: str, slots: int, violations: int) -> None:
        self.slots += slots
        self.violations += violations
        self.sources.append((label, slots, violations))


LEDGER = RunLedger()


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    return wrapper


def _run_doc(doc: dict, label: str, ledger: RunLedger):
    exp = parse_config(doc)
    res = simulate(exp.sim)
    ledger.add(label, res.slots, res.sim.violations["independence"])
    return res


# ------------------------------------------------------------------ criterion 1

@_timed
def max_weight_oracle(seed: int = 2024, networks: int = 5, states: int = 1000, max_links: int = 12) -> CheckResult:
    """Max-weight schedule weight equals an exhaustive search over link subsets."""
    rng = np.random.default_rng(seed)
    wf = WeightFn("loglog")
    per_net = states // networks
    mismatches = 0
    worst = 0.0
    sizes = []
    for k in range(networks):
        net = random_network(rng, int(rng.integers(6, 11)), int(rng.integers(3, 6)), max_links)
        sizes.append(net.n_links)
        schedules = enumerate_schedules(net.conflict_graph)
        for _ in range(per_net):
            q = rng.integers(0, 60, size=(net.node_count, net.n_dest))
            for d, node in enumerate(net.destinations):
                q[node, d] = 0
            lw = compute_link_weights(wf, q, net, rng)
            got = max_weight_schedule(schedules, lw.w, rng, lw.dstar).weight
            want = an.brute_force_max_weight(net, lw.w)
            if got != want:
                mismatches += 1
                worst = max(worst, abs(got - want))
    return CheckResult("max_weight_oracle", mismatches == 0, float(mismatches), 0.0, "exact",
                       {"networks": networks, "states": per_net * networks, "links": sizes, "max_abs_diff": worst})


# ------------------------------------------------------------------ criterion 2

@_timed
def gibbs_stationarity(slots: int = 1_000_000, seed: int = 1, tolerance: float = 0.02,
                       ledger: RunLedger = LEDGER) -> CheckResult:
    """Frozen-weight basic CSMA occupancy against the exact Gibbs law."""
    cases = {
        "ring5": (an.ring_conflict_graph(5), [0.5, 1.0, 1.5, 2.0, 0.25]),
        "grid2x3": (an.grid_conflict_graph(2, 3), [1.0, 0.5, 1.5, 0.0, 2.0, 0.75]),
    }
    detail = {}
    worst = 0.0
    for name, (graph, w) in cases.items():
        rep = an.csma_mixing_experiment(graph, w, slots=slots, seed=seed, tolerance=tolerance)
        schedules = enumerate_schedules(graph)
        visited_bad = sum(1 for k, p in enumerate(rep.empirical) if p > 0 and not graph.is_independent(schedules.masks[k]))
        ledger.add(f"gibbs_{name}", slots, visited_bad)
        detail[name] = {"tv": rep.tv, "r": schedules.r}
        worst = max(worst, rep.tv)
    return CheckResult("gibbs_stationarity", worst <= tolerance, worst, tolerance, "TV <= 0.02", detail)


# ------------------------------------------------------------------ criterion 3

def _equivalence_networks(seed: int):
    rng = np.random.default_rng(seed)
    nets = [parse_config(stability_doc()).sim.network, parse_config(multihop_doc()).sim.network,
            line_network(8, {0: 7}), line_network(10, {0: 4, 9: 5})]
    while len(nets) < 10:
        net = random_network(rng, int(rng.integers(5, 11)), int(rng.integers(2, 5)), 10)
        if enumerate_schedules(net.conflict_graph).r <= 256:
            nets.append(net)
    return nets


@_timed
def multi_site_equivalence(seed: int = 7, tolerance: float = 1e-8) -> CheckResult:
    """Q-CSMA kernel and single-site kernel share the Gibbs stationary vector."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    time_bound_ok = True
    detail = []
    for net in _equivalence_networks(seed):
        graph = net.conflict_graph
        w = rng.uniform(0.0, 1.5, size=net.n_links).tolist()
        beta = float(rng.uniform(0.2, 0.8))
        single = an.build_kernel(graph, w, "single_site")
        multi = an.build_kernel(graph, w, "multi_site", network=net, beta=beta)
        ps = an.stationary_vector(single.P)
        pm = an.stationary_vector(multi.P)
        diff = float(np.abs(ps - pm).max())
        worst = max(worst, diff, float(np.abs(pm - multi.pi).max()))
        lam, T = an.slem(multi.P, multi.pi)
        b9 = an.multi_site_time_bound_log(net.n_links, max(w))
        time_bound_ok &= math.log(T) < b9
        detail.append({"links": net.n_links, "r": single.r, "max_diff": diff, "alpha": multi.alpha_method,
                       "log_T": math.log(T), "log_T_bound": b9})
    passed = worst <= tolerance and time_bound_ok
    return CheckResult("multi_site_equivalence", passed, worst, tolerance, "max |pi_multi - pi_single| <= 1e-8",
                       {"instances": detail, "mixing_time_bound_holds": time_bound_ok})


# ------------------------------------------------------------------ criterion 4

def random_conflict_graph(rng, n_links: int) -> ConflictGraph:
    edges = [(a, b) for a in range(n_links) for b in range(a + 1, n_links) if rng.random() < 0.4]
    return ConflictGraph.from_edges(n_links, edges)


@_timed
def slem_bounds(seed: int = 11, instances: int = 20) -> CheckResult:
    """Spectral gap of the single-site kernel exceeds the guaranteed gap."""
    rng = np.random.default_rng(seed)
    margins = []
    ok = True
    for _ in range(instances):
        L = int(rng.integers(1, 7))
        graph = random_conflict_graph(rng, L)
        w = rng.uniform(0.0, 1.5, size=L).tolist()
        chain = an.build_kernel(graph, w, "single_site")
        lam, _ = an.slem(chain.P, chain.pi)
        gap_log = math.log1p(-lam) if lam < 1 else -math.inf
        bound_log = an.single_site_gap_bound_log(L, max(w))
        margins.append(gap_log - bound_log)
        ok &= lam < 1.0 and gap_log > bound_log
    return CheckResult("slem_bounds", ok, float(min(margins)), 0.0,
                       "log(1 - slem) - log(guaranteed gap) > 0 on every instance",
                       {"instances": instances, "margins": margins})


# ------------------------------------------------------------------ criterion 5

@_timed
def weight_gaps(slots: int = 1_000_000, seed: int = 5, ledger: RunLedger = LEDGER) -> CheckResult:
    """Weight-gap assertions over a long multi-destination run and a single-destination run."""
    checks = ("state_weight_gap", "modified_weight_gap", "max_weight_upper", "max_weight_lower")
    multi = _run_doc(multihop_doc(slots=slots, seed=seed), "weight_gaps_multihop", ledger)
    single = _run_doc(stability_doc(theta=0.7, window="fixed5", scheduler="basic_csma", slots=max(slots // 5, 1),
                                    seed=seed), "weight_gaps_single_dest", ledger)
    counts = {c: multi.sim.violations[c] + single.sim.violations[c] for c in checks}
    total = sum(counts.values())
    return CheckResult("weight_gaps", total == 0, float(total), 0.0, "zero violations",
                       {"violations": counts, "slots": multi.slots + single.slots,
                        "max_queue_seen": int(max(multi.total_q))})


# ------------------------------------------------------------------ criterion 6

@_timed
def zero_mean_residual(events: int = 1_000_000, seed: int = 3, w_cong: int = 5,
                       ledger: RunLedger = LEDGER) -> CheckResult:
    """Injection residuals have zero mean and respect the second-moment bound."""
    rng = np.random.default_rng(seed)
    worst_z = 0.0
    ok = True
    detail = {}
    for eta in (1.0, 0.5, 0.1):
        trace = an.synthetic_residuals(rng, eta, events, w_cong)
        bound = residual_second_moment_bound(0.0, 1, w_cong, eta)
        rep = an.residual_moment_test(trace, bound)
        detail[f"eta={eta}"] = rep.to_dict()
        worst_z = max(worst_z, abs(rep.z))
        ok &= rep.passed
    # per-slot residuals of a live run against the bound with its own constants
    doc = stability_doc(theta=0.7, window="random", slots=100_000, seed=seed)
    doc["engine"]["record_residuals"] = True
    res = _run_doc(doc, "residual_run", ledger)
    live = res.sim.residual_summary()
    ok &= all(v["within_bound"] for v in live.values())
    detail["live_run"] = live
    return CheckResult("zero_mean_residual", ok, worst_z, 4.0, "|z| < 4 and E[B^2] within bound", detail)


# ------------------------------------------------------------------ criterion 7

def _verdict_detail(v) -> dict:
    return {"verdict": v.tag, "mean_files": v.files_second_half, "first_half_mean": v.files_first_half,
            "half_ratio": v.files_second_half / v.files_first_half if v.files_first_half else None,
            "slope_ci": list(v.slope_ci)}


@_timed
def flow_stability(slots: int = 200_000, seeds=(1, 2, 3), ledger: RunLedger = LEDGER) -> CheckResult:
    """Centralized scheduler: Stable at 0.7 of capacity for every window policy, Unstable at 1.2."""
    detail = {}
    ok = True
    stable_runs = 0
    for policy in ("fixed1", "fixed5", "random", "aimd"):
        for seed in seeds:
            res = _run_doc(stability_doc(theta=0.7, window=policy, slots=slots, seed=seed),
                           f"centralized_{policy}_{seed}", ledger)
            v = res.verdict()
            detail[f"{policy}/seed{seed}"] = _verdict_detail(v)
            stable_runs += v.tag == "Stable"
            ok &= v.tag == "Stable"
    over = _run_doc(stability_doc(theta=1.2, window="fixed1", slots=slots, seed=seeds[0]), "overload", ledger)
    v = over.verdict()
    detail["overload_theta1.2"] = {"verdict": v.tag, "final_backlog": v.final_backlog,
                                   "threshold": v.backlog_threshold, "slope_ci": list(v.slope_ci)}
    ok &= v.tag == "Unstable"
    return CheckResult("flow_stability", ok, float(stable_runs), 4.0 * len(seeds),
                       "all Stable at theta=0.7; Unstable at theta=1.2", detail)


# ------------------------------------------------------------------ criterion 8

@_timed
def csma_stability(slots: int = 1_000_000, seeds=(1, 2), ledger: RunLedger = LEDGER) -> CheckResult:
    """Basic CSMA and Q-CSMA with loglog weights are Stable at half capacity."""
    detail = {}
    ok = True
    n = 0
    for sched in ("basic_csma", "qcsma"):
        for seed in seeds:
            res = _run_doc(stability_doc(theta=0.5, window="fixed1", scheduler=sched, h="loglog",
                                         slots=slots, seed=seed), f"{sched}_{seed}", ledger)
            v = res.verdict()
            detail[f"{sched}/seed{seed}"] = _verdict_detail(v)
            n += v.tag == "Stable"
            ok &= v.tag == "Stable"
    return CheckResult("csma_stability", ok, float(n), 2.0 * len(seeds), "all Stable", detail)


# ------------------------------------------------------------------ criterion 9

def _csv_bytes(sim: Simulation, slots: int, header: bool = True) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for frame in sim.run(slots):
        w.writerow(frame.csv_row())
    return buf.getvalue().encode()


@_timed
def determinism(slots: int = 20_000, seed: int = 42, ledger: RunLedger = LEDGER) -> CheckResult:
    """Same config and seed give byte-identical metrics, also across a snapshot/restore split."""
    docs = {
        "qcsma_random": stability_doc(theta=0.7, window="random", scheduler="qcsma", slots=slots, seed=seed),
        "centralized_aimd": stability_doc(theta=0.9, window="aimd", slots=slots, seed=seed),
    }
    ok = True
    detail = {}
    for name, doc in docs.items():
        cfg = parse_config(doc).sim
        a = _csv_bytes(Simulation(cfg), slots)
        b = _csv_bytes(Simulation(cfg), slots)
        first = Simulation(cfg)
        head = _csv_bytes(first, slots // 2)
        snap = json.loads(json.dumps(first.snapshot()))
        restored = Simulation.restore(parse_config(doc).sim, snap)
        tail = _csv_bytes(restored, slots, header=False)
        ledger.add(f"determinism_{name}", slots, restored.violations["independence"])
        same = a == b
        split = head + tail == a
        detail[name] = {"rerun_identical": same, "snapshot_split_identical": split, "bytes": len(a)}
        ok &= same and split
    return CheckResult("determinism", ok, None, None, "byte-identical", detail)


# ------------------------------------------------------------------ criterion 10

@_timed
def independence(ledger: RunLedger = LEDGER, fallback_slots: int = 100_000) -> CheckResult:
    """Every simulated activation vector is conflict-free."""
    if ledger.slots == 0:
        for sched in ("centralized", "basic_csma", "qcsma"):
            _run_doc(stability_doc(theta=0.7, window="fixed5", scheduler=sched, slots=fallback_slots, seed=9),
                     f"independence_{sched}", ledger)
            _run_doc(multihop_doc(scheduler=sched, slots=fallback_slots, seed=9), f"independence_mh_{sched}", ledger)
    return CheckResult("independence", ledger.violations == 0, float(ledger.violations), 0.0, "zero violations",
                       {"slots_checked": ledger.slots, "runs": len(ledger.sources)})


CHECKS = {
    "max_weight_oracle": max_weight_oracle,
    "gibbs_stationarity": gibbs_stationarity,
    "multi_site_equivalence": multi_site_equivalence,
    "slem_bounds": slem_bounds,
    "weight_gaps": weight_gaps,
    "zero_mean_residual": zero_mean_residual,
    "flow_stability": flow_stability,
    "csma_stability": csma_stability,
    "determinism": determinism,
    "independence": independence,
}


def run_suite(suite: str) -> list[CheckResult]:
    """Run a named suite; independence is judged over the suite's own simulations."""
    if suite not in SUITES:
        raise KeyError(suite)
    ledger = RunLedger()
    out = []
    for name in SUITES[suite]:
        fn = CHECKS[name]
        if "ledger" in inspect.signature(fn).parameters:
            out.append(fn(ledger=ledger))
        else:
            out.append(fn())
    if suite != "all":
        out.append(independence(ledger=ledger))
    return out
