"""Slotted simulation loop.

Each slot runs, in order:

1. re-index files, compute weights from the MAC queues, pick a schedule
   and transmit ``min(x, q)`` packets FIFO over every active link;
2. file arrivals open connections with their initial windows;
3. window updates, then injections until windows are full or files end.

Carrier-sense memories are refreshed from the slot's schedule. Runtime
invariant checks run on the state at the start of every slot.
"""

from __future__ import annotations

import hashlib
import json
import math
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .csma import BasicCsmaScheduler, QCsmaScheduler
from .errors import AssertionFailure, HorizonZero, TooLarge
from .network import Network, ScheduleSet, enumerate_schedules
from .transport import (
    FileRecord,
    TrafficSpec,
    WindowPolicy,
    draw_injection,
    residual_second_moment_bound,
    sample_arrivals,
    update_window,
)
from .weights import WeightFn, state_weight_gap, link_weights_from_g, max_weight_schedule

SNAPSHOT_FORMAT = "flowsched-snapshot"
SNAPSHOT_VERSION = 1
SCHEDULERS = ("centralized", "basic_csma", "qcsma")
ASSERT_MODES = ("raise", "record", "off")
CHECKS = (
    "window_bound", "independence", "state_weight_gap", "sandwich", "modified_weight_gap",
    "max_weight_upper", "max_weight_lower", "conservation", "queue_increment",
)
_TOL = 1e-9


@dataclass
class SimConfig:
    network: Network
    traffic: TrafficSpec
    policy: WindowPolicy
    scheduler: str = "centralized"
    weight_fn: WeightFn = field(default_factory=lambda: WeightFn("one"))
    epsilon: float = 0.1
    beta: object = 0.5
    control_overhead_ratio: float = 0.0
    prune_nonpositive: bool = False
    slots: int = 1000
    seed: int = 0
    cadence: int = 1
    assertions: str = "raise"
    record_residuals: bool = False
    trace: bool = False
    enumeration_cap: int = 24
    excess_load: float | None = None
    raw: dict | None = None  # source document, used for snapshot fingerprints

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")
        if self.assertions not in ASSERT_MODES:
            raise ValueError(f"assertions must be one of {ASSERT_MODES}")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        for s in self.traffic.kappa:
            if s not in self.network.sources:
                raise ValueError(f"traffic given for node {s}, which is not a source")

    def fingerprint(self) -> str:
        """Hash of everything that shapes the dynamics (seed and horizon excluded)."""
        if self.raw is not None:
            doc = {k: v for k, v in self.raw.items() if k not in ("output", "replicas", "seeds")}
            doc["engine"] = {k: v for k, v in doc.get("engine", {}).items()
                             if k not in ("seed", "slots", "snapshot_every")}
        else:
            doc = {"network": repr(self.network), "traffic": repr(self.traffic),
                   "policy": self.policy.to_dict(), "scheduler": self.scheduler,
                   "weight_fn": self.weight_fn.to_dict(), "epsilon": self.epsilon, "beta": repr(self.beta)}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(slots=True)
class MetricsFrame:
    slot: int
    q: tuple
    qbar: tuple
    total_files: int
    total_q: int
    total_backlog: float
    V: float
    schedule: int
    sched_weight: float
    oracle_weight: float | None
    asserts_ok: bool
    failed: tuple
    delivered: int

    def csv_row(self) -> list[str]:
        oracle = "" if self.oracle_weight is None else repr(self.oracle_weight)
        return [str(self.slot), str(self.total_files), str(self.total_q), repr(self.V),
                repr(self.sched_weight), oracle, "1" if self.asserts_ok else "0", str(self.delivered)]


CSV_COLUMNS = ["slot", "total_files", "total_q", "V", "sched_weight", "oracle_weight", "asserts_ok", "delivered"]


def lyapunov_value(qbar, weight_fn: WeightFn) -> float:
    """``sum G(Qbar)`` with ``G`` the antiderivative of ``g``."""
    G = weight_fn.G
    return math.fsum(G(float(v)) for v in np.ravel(qbar))


class Simulation:
    """Mutable simulator state plus the per-slot ``step``."""

    def __init__(self, config: SimConfig):
        self.config = cfg = config
        net = cfg.network
        self.network = net
        self.N = net.node_count
        self.D = net.n_dest
        self.wf = cfg.weight_fn
        self.policy = cfg.policy
        self.traffic = cfg.traffic
        self.rng = np.random.default_rng(cfg.seed)

        self.schedules: ScheduleSet | None = None
        try:
            self.schedules = enumerate_schedules(net.conflict_graph, cfg.enumeration_cap)
        except TooLarge:
            if cfg.scheduler == "centralized":
                raise
        if cfg.scheduler == "basic_csma":
            self.scheduler = BasicCsmaScheduler(net, self.wf, cfg.epsilon)
        elif cfg.scheduler == "qcsma":
            self.scheduler = QCsmaScheduler(net, self.wf, cfg.epsilon, cfg.beta)
        else:
            self.scheduler = None

        self.sources = sorted(net.sources)
        self.ingress = {s: s * self.D + net.dest_index[net.sources[s]] for s in self.sources}
        self.dest_nodes = list(net.destinations)
        self.eta_min = cfg.traffic.eta_min
        self.state_gap = state_weight_gap(self.wf, self.eta_min)
        self.bound_B = {
            s: residual_second_moment_bound(cfg.traffic.kappa.get(s, 0.0), self.N, cfg.policy.w_cong, self.eta_min)
            for s in self.sources
        }

        self.t = 0
        self.queues = [deque() for _ in range(self.N * self.D)]
        self.qlen = [0] * (self.N * self.D)
        self.files: dict[int, list[FileRecord]] = {s: [] for s in self.sources}
        self.by_uid: dict[int, dict[int, FileRecord]] = {s: {} for s in self.sources}
        self.next_uid = {s: 0 for s in self.sources}
        self.delivered = 0
        self.injected = 0
        self.wasted = 0
        self.violations = {c: 0 for c in CHECKS}
        self.res_n = {s: 0 for s in self.sources}
        self.res_sum = {s: 0.0 for s in self.sources}
        self.res_sumsq = {s: 0.0 for s in self.sources}
        self.residuals = {s: array("d") for s in self.sources} if cfg.record_residuals else None
        self.events: list | None = [] if cfg.trace else None
        self.prev_qbar: list[float] | None = None
        self.prev_atilde: list[float] | None = None
        self.x = 0
        self.last_modified = None  # CSMA modified weights of the latest slot
        self.sigmas = [1.0 / eta for eta in cfg.traffic.etas]
        self._recount()
        self._track()
        self._qbar = self._compute_qbar()
        # ingress queue lengths at the start of the current slot (AIMD feedback)
        self._start_ingress = {s: 0 for s in self.sources}

    # ------------------------------------------------------------------ state

    def _recount(self) -> None:
        """Active (xi = 1) file counts per source and type."""
        K = len(self.traffic.etas)
        self.active = {s: [0] * K for s in self.sources}
        for s in self.sources:
            for f in self.files[s]:
                if f.xi:
                    self.active[s][f.ftype] += 1

    def _track(self) -> None:
        """Files that may have window space, files awaiting removal, pending window-bound failures.

        Keeps per-slot work proportional to the files that changed, not to all
        files in the system.
        """
        self._ready = {s: {f.uid for f in self.files[s] if f.xi and f.in_window < f.window} for s in self.sources}
        self._departing = {s: {f.uid for f in self.files[s] if f.departed} for s in self.sources}
        w_cong = self.policy.w_cong
        self._bad_windows = [f"file {f.uid} window {f.window}" for fs in self.files.values() for f in fs
                             if not (1 <= f.window <= w_cong)]

    def _compute_qbar(self) -> list[float]:
        qbar = [float(v) for v in self.qlen]
        sig = self.sigmas
        for s in self.sources:
            mass = math.fsum(c * sig[k] for k, c in enumerate(self.active[s]) if c)
            qbar[self.ingress[s]] += mass
        return qbar

    def queue_matrix(self) -> np.ndarray:
        return np.array(self.qlen, dtype=np.int64).reshape(self.N, self.D)

    def qbar_matrix(self) -> np.ndarray:
        return np.array(self._qbar).reshape(self.N, self.D)

    def total_files(self) -> int:
        return sum(len(fs) for fs in self.files.values())

    # ------------------------------------------------------------------ checks

    def _fail(self, name: str, failed: list, detail: str) -> None:
        self.violations[name] += 1
        failed.append(name)
        if self.config.assertions == "raise":
            raise AssertionFailure(name, self.t, detail)

    def _check_start(self, gq, w, failed: list) -> None:
        net, D = self.network, self.D
        qlen, qbar = self.qlen, self._qbar
        wf = self.wf
        # window bounds, collected when windows were assigned
        if self._bad_windows:
            detail = "; ".join(self._bad_windows[:3])
            self._bad_windows = []
            self._fail("window_bound", failed, detail)
        # expected backlog sandwich at source ingress queues
        factor = 1.0 + 1.0 / self.eta_min
        for s in self.sources:
            idx = self.ingress[s]
            q = qlen[idx]
            if not (q - _TOL <= qbar[idx] <= q * factor + _TOL):
                self._fail("sandwich", failed, f"q={q} qbar={qbar[idx]}")
        # state-based vs MAC-based weights
        gQ = [list(row) for row in gq]
        for s in self.sources:
            idx = self.ingress[s]
            gQ[s][idx - s * D] = wf(qbar[idx])
        W, _, _ = link_weights_from_g(net, gQ, None)
        gap = self.state_gap + _TOL
        for l in range(net.n_links):
            if abs(W[l] - w[l]) > gap:
                self._fail("state_weight_gap", failed, f"link {net.links[l]} |W-w|={abs(W[l] - w[l])}")
                break
        # maximum weight vs maximum queue
        q_max = max(qlen)
        g_max = wf.at_int(q_max)
        w_max = max(w)
        if w_max > g_max + _TOL:
            self._fail("max_weight_upper", failed, f"w_max={w_max} g(q_max)={g_max}")
        if w_max < g_max / self.N - _TOL:
            self._fail("max_weight_lower", failed, f"w_max={w_max} g(q_max)/N={g_max / self.N}")
        # packet conservation
        if self.injected != self.delivered + sum(qlen):
            self._fail("conservation", failed, "injected != delivered + queued")
        # one-slot increment of expected backlogs
        if self.prev_qbar is not None:
            bound = self.N * 1.0 + _TOL
            for idx, (a, b) in enumerate(zip(qbar, self.prev_qbar)):
                if abs(a - b) > abs(self.prev_atilde[idx]) + bound:
                    self._fail("queue_increment", failed, f"queue {idx} moved by {a - b}")
                    break

    # ------------------------------------------------------------------ step

    def step(self) -> MetricsFrame:
        cfg = self.config
        net, D, rng = self.network, self.D, self.rng
        t = self.t
        qlen, queues = self.qlen, self.queues
        wf = self.wf
        checking = cfg.assertions != "off"
        failed: list[str] = []
        events = self.events

        # phase 1: re-index, weights, schedule, transmit
        for s in self.sources:
            gone = self._departing[s]
            if gone:
                by_uid = self.by_uid[s]
                for uid in gone:
                    del by_uid[uid]
                self.files[s] = [f for f in self.files[s] if f.uid not in gone]
                self._departing[s] = set()
        gtab = wf.at_int
        gq = [[gtab(qlen[n * D + k]) for k in range(D)] for n in range(self.N)]
        central = cfg.scheduler == "centralized"
        w, dstar, _ = link_weights_from_g(net, gq, rng if central else None)
        if checking:
            self._check_start(gq, w, failed)

        if central:
            choice = max_weight_schedule(self.schedules, w, rng, dstar, cfg.prune_nonpositive)
            links, dests = choice.links, choice.dest
            sched_weight = choice.weight
            oracle = choice.weight if not cfg.prune_nonpositive else None
        else:
            q_max = max(qlen)
            links, dests, mw = self.scheduler.decide(gq, q_max, rng)
            self.last_modified = mw
            sched_weight = math.fsum(w[l] for l in links)
            oracle = None
            if self.schedules is not None:
                oracle = max(math.fsum(w[l] for l in mem) for mem in self.schedules.members)
            if checking:
                gs = mw.g_star + _TOL
                for l in range(net.n_links):
                    if abs(mw.w[l] - w[l]) > gs:
                        self._fail("modified_weight_gap", failed, f"link {net.links[l]}")
                        break
        x = 0
        for l in links:
            x |= 1 << l
        self.x = x
        if checking and not net.conflict_graph.is_independent(x):
            self._fail("independence", failed, f"schedule {links}")

        out_flow = [0] * (self.N * D)
        in_flow = [0] * (self.N * D)
        for l, k in zip(links, dests):
            i, j = net.links[l]
            src = i * D + k
            if qlen[src] == 0:
                self.wasted += 1
                continue
            pkt = queues[src].popleft()
            qlen[src] -= 1
            out_flow[src] += 1
            origin = pkt[0]
            if origin == i and self.ingress.get(i) == src:
                f = self.by_uid[i].get(pkt[1])
                if f is not None:
                    f.in_window -= 1
                    if f.xi:
                        self._ready[i].add(f.uid)
                    elif f.in_window == 0:
                        self._departing[i].add(f.uid)
            if events is not None:
                events.append((t, "tx", i, j, k, pkt))
            if j == self.dest_nodes[k]:
                self.delivered += 1
            else:
                dst = j * D + k
                queues[dst].append(pkt)
                qlen[dst] += 1
                in_flow[dst] += 1
        if self.scheduler is not None:
            self.scheduler.after_transmission(x)

        # phase 2: file arrivals
        abar = {s: 0.0 for s in self.sources}
        new_count = {}
        for s in self.sources:
            new = sample_arrivals(rng, self.traffic, s, self.policy, self.next_uid[s], t)
            new_count[s] = len(new)
            if new:
                self.next_uid[s] += len(new)
                self.files[s].extend(new)
                ready = self._ready[s]
                for f in new:
                    self.by_uid[s][f.uid] = f
                    abar[s] += f.sigma
                    self.active[s][f.ftype] += 1
                    ready.add(f.uid)
                    if not (1 <= f.window <= self.policy.w_cong):
                        self._bad_windows.append(f"file {f.uid} window {f.window}")

        # phase 3: window updates, then injections
        policy = self.policy
        fixed = policy.kind == "fixed"
        resid = {}
        for s in self.sources:
            idx = self.ingress[s]
            congested = (not fixed) and self._start_ingress[s] > policy.threshold
            fs = self.files[s]
            q = queues[idx]
            B = 0.0
            if fixed:
                # windows never move, so only files that lost a packet or just arrived have space;
                # uids grow with arrival order, so sorting keeps the ascending file order
                by_uid = self.by_uid[s]
                todo = [by_uid[u] for u in sorted(self._ready[s])]
            else:
                todo = fs
            n_old = len(fs) - new_count[s]
            w_cong = policy.w_cong
            self._ready[s] = set()
            for pos, f in enumerate(todo):
                if not fixed and pos < n_old:
                    f.window = update_window(policy, f.window, congested, rng)
                    if not (1 <= f.window <= w_cong):
                        self._bad_windows.append(f"file {f.uid} window {f.window}")
                if not f.xi:
                    continue
                space = f.window - f.in_window
                if space <= 0:
                    continue
                k, done = draw_injection(rng, f.eta, space)
                for _ in range(k):
                    q.append((s, f.uid, t))
                qlen[idx] += k
                f.in_window += k
                f.injected += k
                self.injected += k
                if events is not None:
                    events.append((t, "inject", s, f.uid, k, done))
                if done:
                    f.xi = False
                    self.active[s][f.ftype] -= 1
                    B += k - f.sigma
                else:
                    B += k
            resid[s] = B
            self.res_n[s] += 1
            self.res_sum[s] += B
            self.res_sumsq[s] += B * B
            if self.residuals is not None:
                self.residuals[s].append(B)

        # bookkeeping for the next slot's increment check
        atilde = [0.0] * (self.N * D)
        for s in self.sources:
            atilde[self.ingress[s]] = abar[s] + resid[s]
        self.prev_qbar = self._qbar
        self.prev_atilde = atilde
        self._qbar = self._compute_qbar()
        self._start_ingress = {s: qlen[self.ingress[s]] for s in self.sources}
        self.t = t + 1

        frame = None
        if (t + 1) % cfg.cadence == 0 or t == 0:
            qbar = self._qbar
            frame = MetricsFrame(
                slot=t,
                q=tuple(qlen),
                qbar=tuple(qbar),
                total_files=self.total_files(),
                total_q=sum(qlen),
                total_backlog=math.fsum(qbar),
                V=math.fsum(wf.G(v) for v in qbar),
                schedule=x,
                sched_weight=sched_weight,
                oracle_weight=oracle,
                asserts_ok=not failed,
                failed=tuple(failed),
                delivered=self.delivered,
            )
        self.last_failed = failed
        return frame

    def run(self, slots: int | None = None) -> Iterator[MetricsFrame]:
        """Advance until ``slots`` slots have elapsed in total, yielding frames."""
        horizon = self.config.slots if slots is None else slots
        if horizon <= 0:
            raise HorizonZero("horizon must be at least one slot")
        while self.t < horizon:
            frame = self.step()
            if frame is not None:
                yield frame

    # ------------------------------------------------------------------ reporting

    def residual_summary(self) -> dict:
        out = {}
        for s in self.sources:
            n = self.res_n[s]
            mean = self.res_sum[s] / n if n else 0.0
            second = self.res_sumsq[s] / n if n else 0.0
            out[str(s)] = {
                "samples": n, "mean": mean, "second_moment": second,
                "bound": self.bound_B[s], "within_bound": second <= self.bound_B[s],
            }
        return out

    # ------------------------------------------------------------------ snapshots

    def snapshot(self) -> dict:
        """JSON-serializable image of the full simulator state."""
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "fingerprint": self.config.fingerprint(),
            "t": self.t,
            "rng": _jsonable(self.rng.bit_generator.state),
            "queues": [[list(p) for p in q] for q in self.queues],
            "files": {str(s): [f.to_list() for f in fs] for s, fs in self.files.items()},
            "next_uid": {str(s): v for s, v in self.next_uid.items()},
            "counters": {"delivered": self.delivered, "injected": self.injected, "wasted": self.wasted},
            "violations": dict(self.violations),
            "residuals": {str(s): [self.res_n[s], self.res_sum[s], self.res_sumsq[s]] for s in self.sources},
            "prev_qbar": self.prev_qbar,
            "prev_atilde": self.prev_atilde,
            "start_ingress": {str(s): v for s, v in self._start_ingress.items()},
            "x": self.x,
            "scheduler": None if self.scheduler is None else self.scheduler.state_dict(),
        }

    @classmethod
    def restore(cls, config: SimConfig, snap: dict) -> "Simulation":
        if snap.get("format") != SNAPSHOT_FORMAT or snap.get("version") != SNAPSHOT_VERSION:
            raise ValueError("not a flowsched snapshot of a supported version")
        if snap["fingerprint"] != config.fingerprint():
            raise ValueError("snapshot was taken under a different configuration")
        sim = cls(config)
        sim.t = snap["t"]
        state = snap["rng"]
        sim.rng.bit_generator.state = state
        sim.queues = [deque(tuple(p) for p in q) for q in snap["queues"]]
        sim.qlen = [len(q) for q in sim.queues]
        for s in sim.sources:
            fs = [FileRecord.from_list(row) for row in snap["files"][str(s)]]
            sim.files[s] = fs
            sim.by_uid[s] = {f.uid: f for f in fs}
            sim.next_uid[s] = snap["next_uid"][str(s)]
            n, a, b = snap["residuals"][str(s)]
            sim.res_n[s], sim.res_sum[s], sim.res_sumsq[s] = n, a, b
        c = snap["counters"]
        sim.delivered, sim.injected, sim.wasted = c["delivered"], c["injected"], c["wasted"]
        sim.violations.update(snap["violations"])
        sim.prev_qbar = snap["prev_qbar"]
        sim.prev_atilde = snap["prev_atilde"]
        sim._start_ingress = {int(s): v for s, v in snap["start_ingress"].items()}
        sim.x = snap["x"]
        if sim.scheduler is not None:
            sim.scheduler.load_state(snap["scheduler"])
        sim._recount()
        sim._track()
        sim._qbar = sim._compute_qbar()
        return sim


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def run(config: SimConfig) -> Iterator[MetricsFrame]:
    """Fresh simulation of ``config.slots`` slots."""
    if config.slots <= 0:
        raise HorizonZero("horizon must be at least one slot")
    return Simulation(config).run()
