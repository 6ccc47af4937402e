"""File arrivals, per-file window-based connections and packet injection.

File sizes are never drawn up front. Each injected packet is the file's
last one with probability ``eta`` (the reciprocal of the mean size), which
is the same law as a geometric size with mean ``1/eta``. A file stays
*active* (``xi = 1``) until its last packet has been injected.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

from .network import Network

ARRIVAL_LAWS = ("poisson", "bernoulli")
POLICIES = ("fixed", "random", "aimd")


@dataclass
class TrafficSpec:
    """Per-source file arrival rates and a shared table of geometric file types."""

    kappa: dict[int, float]
    etas: list[float]
    type_probs: dict[int, list[float]]
    arrival: str = "poisson"

    def __post_init__(self):
        if self.arrival not in ARRIVAL_LAWS:
            raise ValueError(f"arrival law must be one of {ARRIVAL_LAWS}")
        if not self.etas:
            raise ValueError("at least one file type is required")
        for eta in self.etas:
            if not (0.0 < eta <= 1.0):
                raise ValueError(f"eta must lie in (0, 1], got {eta}")
        for s, k in self.kappa.items():
            if k < 0:
                raise ValueError(f"negative arrival rate at source {s}")
            if self.arrival == "bernoulli" and k > 1:
                raise ValueError("Bernoulli arrivals need kappa <= 1")
        for s in self.kappa:
            probs = self.type_probs.get(s)
            if probs is None or len(probs) != len(self.etas):
                raise ValueError(f"source {s} needs one type probability per file type")
            if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
                raise ValueError(f"type probabilities of source {s} must sum to 1")
        self._cum = {s: _cumulative(p) for s, p in self.type_probs.items()}

    @property
    def eta_min(self) -> float:
        return min(self.etas)

    def mean_size(self, s: int) -> float:
        return sum(p / eta for p, eta in zip(self.type_probs[s], self.etas))

    def load(self, s: int) -> float:
        return self.kappa.get(s, 0.0) * self.mean_size(s)

    def draw_type(self, rng, s: int) -> int:
        cum = self._cum[s]
        k = bisect.bisect_right(cum, rng.random())
        return min(k, len(cum) - 1)


def _cumulative(probs):
    out, acc = [], 0.0
    for p in probs:
        acc += p
        out.append(acc)
    return out


@dataclass
class WindowPolicy:
    """Congestion-window rule; every window it emits lies in ``[1, w_cong]``.

    fixed: always ``w``. random: uniform on ``{1..w_cong}`` each slot.
    aimd: ``+increase`` unless the ingress MAC queue exceeds ``threshold``,
    then ``floor(window * decrease)``.
    """

    kind: str = "fixed"
    w_cong: int = 1
    w: int = 1
    increase: int = 1
    decrease: float = 0.5
    threshold: int = 10
    initial: int = 1

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ValueError(f"window policy must be one of {POLICIES}")
        if self.w_cong < 1:
            raise ValueError("w_cong must be at least 1")
        if self.kind == "aimd" and not (0.0 < self.decrease < 1.0):
            raise ValueError("aimd decrease factor must lie in (0, 1)")
        if self.increase < 0:
            raise ValueError("aimd increase must be nonnegative")

    def clip(self, w: int) -> int:
        return 1 if w < 1 else (self.w_cong if w > self.w_cong else w)

    def initial_window(self) -> int:
        return self.clip(self.w if self.kind == "fixed" else self.initial)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "w_cong": self.w_cong, "w": self.w, "increase": self.increase,
            "decrease": self.decrease, "threshold": self.threshold, "initial": self.initial,
        }


def update_window(policy: WindowPolicy, window: int, congested: bool, rng=None) -> int:
    if policy.kind == "fixed":
        return policy.clip(policy.w)
    if policy.kind == "random":
        return 1 + int(rng.random() * policy.w_cong)
    if congested:
        return policy.clip(int(math.floor(window * policy.decrease)))
    return policy.clip(window + policy.increase)


@dataclass(slots=True)
class FileRecord:
    uid: int
    source: int
    ftype: int
    sigma: float
    eta: float
    window: int
    arrived: int
    xi: bool = True
    in_window: int = 0
    injected: int = 0
    finished_now: bool = False  # last packet left the transport layer this slot

    @property
    def departed(self) -> bool:
        return not self.xi and self.in_window == 0

    def to_list(self) -> list:
        return [self.uid, self.source, self.ftype, self.sigma, self.eta, self.window,
                self.arrived, int(self.xi), self.in_window, self.injected]

    @classmethod
    def from_list(cls, row) -> "FileRecord":
        uid, source, ftype, sigma, eta, window, arrived, xi, in_window, injected = row
        return cls(uid, source, ftype, sigma, eta, window, arrived, bool(xi), in_window, injected)


@dataclass
class InjectionOutcome:
    injected: int
    finished: bool
    residual: float
    remaining_space: int


def sample_arrivals(rng, traffic: TrafficSpec, s: int, policy: WindowPolicy,
                    next_uid: int = 0, slot: int = 0) -> list[FileRecord]:
    """New files arriving at source ``s`` this slot, with their initial windows."""
    kappa = traffic.kappa.get(s, 0.0)
    if kappa <= 0.0:
        return []
    if traffic.arrival == "poisson":
        count = int(rng.poisson(kappa))
    else:
        count = 1 if rng.random() < kappa else 0
    out = []
    for k in range(count):
        t = traffic.draw_type(rng, s)
        eta = traffic.etas[t]
        out.append(FileRecord(next_uid + k, s, t, 1.0 / eta, eta, policy.initial_window(), slot))
    return out


def draw_injection(rng, eta: float, space: int) -> tuple[int, bool]:
    """Packets injected into ``space`` window slots and whether the file finished.

    Equivalent to injecting one packet at a time and stopping with
    probability ``eta`` after each one.
    """
    if space <= 0:
        return 0, False
    if eta >= 1.0:
        return 1, True
    k = int(rng.geometric(eta))
    if k <= space:
        return k, True
    return space, False


def inject_packets(rng, file: FileRecord, space: int | None = None) -> InjectionOutcome:
    """Fill the file's free window space from its transport-layer remainder.

    ``space`` defaults to ``window - in_window``. Updates the record in place.
    """
    if space is None:
        space = file.window - file.in_window
    space = max(0, space)
    if not file.xi or space == 0:
        file.finished_now = False
        return InjectionOutcome(0, False, 0.0, space)
    k, done = draw_injection(rng, file.eta, space)
    file.in_window += k
    file.injected += k
    file.finished_now = done
    if done:
        file.xi = False
    return InjectionOutcome(k, done, k - (file.sigma if done else 0.0), space - k)


def reindex_files(files: list[FileRecord]) -> list[FileRecord]:
    """Drop departed files; survivors keep arrival order (index = position + 1)."""
    return [f for f in files if not f.departed]


def expected_backlog(network: Network, node: int, dest: int, mac_queue: float,
                     files: list[FileRecord] = ()) -> float:
    """Expected total backlog: MAC queue plus mean remainder of unfinished local files."""
    if network.sources.get(node) != dest:
        return float(mac_queue)
    return float(mac_queue) + math.fsum(f.sigma for f in files if f.xi)


def residual_second_moment_bound(kappa: float, n_nodes: int, w_cong: int, eta_min: float,
                                 r_max: float = 1.0) -> float:
    return (kappa + n_nodes ** 2 * r_max ** 2) * max(w_cong ** 2, 1.0 / eta_min ** 2)
