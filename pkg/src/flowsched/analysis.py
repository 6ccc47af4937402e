"""Exact chain oracles and statistical diagnostics.

Kernels are dense ``r x r`` matrices over an enumerated schedule set, with
rows and columns in the set's (ascending bitmask) order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .csma import activation_probability, draw_rtd_targets, resolve_decisions
from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    InsufficientData,
    InsufficientSamples,
    TooLarge,
)
from .network import ConflictGraph, Network, ScheduleSet, conflict_set, enumerate_schedules

MAX_STATES = 4096
EXACT_ALPHA_NODES = 10
EXACT_ALPHA_OUTCOMES = 2_000_000


def _schedule_set(graph_or_set) -> ScheduleSet:
    if isinstance(graph_or_set, ScheduleSet):
        return graph_or_set
    return enumerate_schedules(graph_or_set)


def schedule_log_weights(schedules: ScheduleSet, w) -> np.ndarray:
    return np.array([math.fsum(w[l] for l in mem) for mem in schedules.members])


def exact_stationary(graph_or_set, w) -> np.ndarray:
    """Gibbs distribution ``exp(sum of link weights) / Z`` over all schedules."""
    schedules = _schedule_set(graph_or_set)
    if schedules.r > MAX_STATES:
        raise TooLarge(f"{schedules.r} schedules exceed the exact limit of {MAX_STATES}")
    if len(w) != schedules.n_links:
        raise DimensionMismatch("one weight per link is required")
    logw = schedule_log_weights(schedules, w)
    logw -= logw.max()
    p = np.exp(logw)
    return p / p.sum()


@dataclass
class ExactChain:
    schedules: ScheduleSet
    P: np.ndarray
    pi: np.ndarray  # Gibbs vector the kernel is meant to fix
    variant: str
    alpha: dict | None = None
    alpha_method: str | None = None

    @property
    def r(self) -> int:
        return self.schedules.r

    def stationarity_error(self) -> float:
        return float(np.abs(self.pi @ self.P - self.pi).max())

    def row_sum_error(self) -> float:
        return float(np.abs(self.P.sum(axis=1) - 1.0).max())


def _single_site_kernel(schedules: ScheduleSet, adjacency, p) -> np.ndarray:
    r, L = schedules.r, schedules.n_links
    P = np.zeros((r, r))
    idx = schedules.index
    for a, s in enumerate(schedules.masks):
        for l in range(L):
            bit = 1 << l
            off = idx[s & ~bit]
            if adjacency[l] & s:
                P[a, off] += 1.0 / L
            else:
                P[a, idx[s | bit]] += p[l] / L
                P[a, off] += (1.0 - p[l]) / L
    return P


def _decision_kernel(schedules: ScheduleSet, adjacency, p, mask: int) -> np.ndarray:
    """Transition matrix when exactly the links of ``mask`` re-randomize."""
    r = schedules.r
    P = np.zeros((r, r))
    idx = schedules.index
    members = [l for l in range(schedules.n_links) if mask >> l & 1]
    for a, s in enumerate(schedules.masks):
        base = s & ~mask
        free = [l for l in members if not adjacency[l] & s]
        for bits in itertools.product((0, 1), repeat=len(free)):
            prob = 1.0
            new = base
            for l, b in zip(free, bits):
                if b:
                    prob *= p[l]
                    new |= 1 << l
                else:
                    prob *= 1.0 - p[l]
            P[a, idx[new]] += prob
    return P


def decision_set_distribution(network: Network, beta, rng=None, draws: int = 1_000_000):
    """Selection probabilities of decision schedules under the RTD/CTD exchange.

    Exact enumeration of every RTD outcome for networks of at most ten
    nodes, Monte Carlo otherwise. Returns ``(alpha, method, half_width)``,
    where ``half_width`` bounds the 99% confidence interval of every Monte
    Carlo estimate (zero when exact).
    """
    n = network.node_count
    betas = [float(beta)] * n if isinstance(beta, (int, float)) else list(beta)
    options = []
    n_outcomes = 1
    for i in range(n):
        outs = network.out_neighbors[i]
        opts = []
        if betas[i] < 1.0 or not outs:
            opts.append((None, 1.0 - betas[i] if outs else 1.0))
        if outs and betas[i] > 0.0:
            opts.extend((j, betas[i] / len(outs)) for j in outs)
        options.append(opts)
        n_outcomes *= len(opts)
    if n <= EXACT_ALPHA_NODES and n_outcomes <= EXACT_ALPHA_OUTCOMES:
        alpha: dict[int, float] = {}
        for combo in itertools.product(*options):
            prob = 1.0
            targets = {}
            for i, (j, q) in enumerate(combo):
                prob *= q
                if j is not None:
                    targets[i] = j
            links, _ = resolve_decisions(network, targets)
            mask = sum(1 << l for l in links)
            alpha[mask] = alpha.get(mask, 0.0) + prob
        return alpha, "exact", 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    counts: dict[int, int] = {}
    for _ in range(draws):
        links, _ = resolve_decisions(network, draw_rtd_targets(rng, network, betas))
        mask = sum(1 << l for l in links)
        counts[mask] = counts.get(mask, 0) + 1
    alpha = {m: c / draws for m, c in counts.items()}
    half = 2.576 * math.sqrt(0.25 / draws)
    return alpha, "monte_carlo", half


def build_kernel(graph_or_set, w, variant: str = "single_site", network: Network | None = None,
                 beta=0.5, alpha: dict | None = None, rng=None) -> ExactChain:
    """Dense frozen-weight kernel of basic CSMA or of the Q-CSMA data schedule.

    ``multi_site`` needs the ``network`` (for the RTD/CTD exchange) unless
    the decision-set law ``alpha`` is supplied directly.
    """
    schedules = _schedule_set(graph_or_set)
    if schedules.r > MAX_STATES:
        raise TooLarge(f"{schedules.r} schedules exceed the dense limit of {MAX_STATES}")
    graph = graph_or_set if isinstance(graph_or_set, ConflictGraph) else None
    adjacency = graph.adjacency if graph is not None else _adjacency_from_set(schedules)
    p = [activation_probability(v) for v in w]
    pi = exact_stationary(schedules, w)
    if variant == "single_site":
        return ExactChain(schedules, _single_site_kernel(schedules, adjacency, p), pi, variant)
    if variant != "multi_site":
        raise ValueError("variant must be 'single_site' or 'multi_site'")
    method = "given"
    if alpha is None:
        if network is None:
            raise ValueError("multi_site needs the network or an explicit alpha")
        alpha, method, _ = decision_set_distribution(network, beta, rng)
    P = np.zeros((schedules.r, schedules.r))
    for mask, a in sorted(alpha.items()):
        if a > 0.0:
            P += a * _decision_kernel(schedules, adjacency, p, mask)
    return ExactChain(schedules, P, pi, variant, dict(alpha), method)


def _adjacency_from_set(schedules: ScheduleSet) -> list[int]:
    """Conflict relation recovered from the pairs of links never co-scheduled."""
    L = schedules.n_links
    together = [0] * L
    for mask in schedules.masks:
        for l in range(L):
            if mask >> l & 1:
                together[l] |= mask
    full = (1 << L) - 1
    return [(full & ~together[l]) & ~(1 << l) for l in range(L)]


def stationary_vector(P: np.ndarray) -> np.ndarray:
    """Numerical left Perron vector of a row-stochastic matrix."""
    r = P.shape[0]
    A = P.T - np.eye(r)
    A[-1, :] = 1.0
    b = np.zeros(r)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def detailed_balance_error(P: np.ndarray, pi: np.ndarray) -> float:
    F = pi[:, None] * P
    return float(np.abs(F - F.T).max())


def slem(P: np.ndarray, pi: np.ndarray | None = None, tol: float = 1e-8, max_squarings: int = 60):
    """Second largest eigenvalue modulus and mixing time ``1 / (1 - slem)``.

    The top eigenpair is deflated (``B = P - 1 pi^T``) and the spectral
    radius of ``B`` is read off repeated normalized squaring,
    ``log rho = lim 2^-k log ||B^(2^k)||``. Reversible kernels are first
    symmetrized, which makes the estimate converge monotonically.
    """
    P = np.asarray(P, dtype=float)
    r = P.shape[0]
    if P.shape != (r, r):
        raise DimensionMismatch("kernel must be square")
    if pi is None:
        pi = stationary_vector(P)
    pi = np.asarray(pi, dtype=float)
    if r == 1:
        return 0.0, 1.0
    if detailed_balance_error(P, pi) < 1e-12 and pi.min() > 0:
        sq = np.sqrt(pi)
        M = sq[:, None] * P / sq[None, :] - np.outer(sq, sq)
        M = 0.5 * (M + M.T)
    else:
        M = P - np.outer(np.ones(r), pi)
    log_scale = 0.0
    weight = 1.0
    estimate = None
    for k in range(max_squarings):
        c = float(np.linalg.norm(M))
        if not math.isfinite(c):
            raise ConvergenceFailure("non-finite iterate while estimating the SLEM")
        if c < 1e-300:
            return 0.0, 1.0
        log_scale += weight * math.log(c)
        M = M / c
        estimate = log_scale
        # ||B^(2^k)|| lies within a factor r of rho^(2^k) up to polynomial terms
        if math.log(r) * weight < tol * 1e-2:
            break
        M = M @ M
        weight /= 2.0
    else:
        raise ConvergenceFailure("SLEM iteration did not reach the requested tolerance")
    lam = math.exp(estimate)
    if lam > 1.0 + 1e-9:
        raise ConvergenceFailure(f"SLEM estimate {lam} exceeds one")
    lam = min(lam, 1.0)
    return lam, (math.inf if lam >= 1.0 else 1.0 / (1.0 - lam))


def mixing_time(lam: float) -> float:
    return math.inf if lam >= 1.0 else 1.0 / (1.0 - lam)


def single_site_gap_bound_log(n_links: int, w_max: float) -> float:
    """log of the guaranteed spectral gap ``1 / (16^L e^(4 L w_max))``."""
    return -(n_links * math.log(16.0) + 4.0 * n_links * w_max)


def multi_site_time_bound_log(n_links: int, w_max: float) -> float:
    """log of the mixing-time bound ``64^L / 2 * e^(4 L w_max)``."""
    return n_links * math.log(64.0) - math.log(2.0) + 4.0 * n_links * w_max


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"distributions of shapes {p.shape} and {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


# ------------------------------------------------------------------ samplers

def ring_conflict_graph(n: int) -> ConflictGraph:
    return ConflictGraph.from_edges(n, [(k, (k + 1) % n) for k in range(n)])


def grid_conflict_graph(rows: int, cols: int) -> ConflictGraph:
    """Conflict graph shaped like a ``rows x cols`` grid (one vertex per link)."""
    edges = []
    for a in range(rows):
        for b in range(cols):
            v = a * cols + b
            if b + 1 < cols:
                edges.append((v, v + 1))
            if a + 1 < rows:
                edges.append((v, v + cols))
    return ConflictGraph.from_edges(rows * cols, edges)


def sample_basic_csma(graph: ConflictGraph, w, slots: int, seed: int, burn_in: int = 0, x0: int = 0) -> dict[int, int]:
    """Occupancy counts of basic CSMA under frozen weights."""
    from .csma import basic_csma_step

    rng = np.random.default_rng(seed)
    adj, L = graph.adjacency, graph.n_links
    p = [activation_probability(v) for v in w]
    x = x0
    counts: dict[int, int] = {}
    rand = rng.random
    for t in range(burn_in + slots):
        l = int(rand() * L)
        bit = 1 << l
        if adj[l] & x or rand() >= p[l]:
            x &= ~bit
        else:
            x |= bit
        if t >= burn_in:
            counts[x] = counts.get(x, 0) + 1
    return counts


def sample_qcsma(network: Network, w, slots: int, seed: int, beta=0.5, burn_in: int = 0) -> dict[int, int]:
    """Occupancy counts of the full Q-CSMA protocol (control slot plus carrier sense)."""
    from .csma import CsmaNodeState, carrier_sense_update, data_schedule, decision_schedule

    rng = np.random.default_rng(seed)
    n = network.node_count
    betas = [float(beta)] * n if isinstance(beta, (int, float)) else list(beta)
    state = CsmaNodeState(betas)
    x = 0
    counts: dict[int, int] = {}
    for t in range(burn_in + slots):
        decision = decision_schedule(rng, network, state)
        x = data_schedule(rng, network, decision, x, state, w)
        carrier_sense_update(network, x, state)
        if t >= burn_in:
            counts[x] = counts.get(x, 0) + 1
    return counts


def occupancy_vector(schedules: ScheduleSet, counts: dict[int, int]) -> np.ndarray:
    v = np.zeros(schedules.r)
    for mask, c in counts.items():
        v[schedules.index[mask]] += c
    return v / v.sum()


@dataclass
class MixingReport:
    tv: float
    tolerance: float
    verdict: str  # "Pass" | "Fail" | "Inconclusive"
    exact: list[float]
    empirical: list[float]
    slots: int
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tv": self.tv, "tolerance": self.tolerance, "verdict": self.verdict,
                "exact": self.exact, "empirical": self.empirical, "slots": self.slots, **self.detail}


def csma_mixing_experiment(graph: ConflictGraph, w, slots: int = 1_000_000, seed: int = 1,
                           variant: str = "basic", network: Network | None = None, beta=0.5,
                           burn_in: int = 10_000, tolerance: float = 0.02) -> MixingReport:
    """Empirical schedule occupancy of a frozen-weight chain against the exact Gibbs law."""
    schedules = enumerate_schedules(graph)
    pi = exact_stationary(schedules, w)
    if variant == "basic":
        counts = sample_basic_csma(graph, w, slots, seed, burn_in)
    elif variant == "qcsma":
        if network is None:
            raise ValueError("qcsma sampling needs the network")
        counts = sample_qcsma(network, w, slots, seed, beta, burn_in)
        betas = [beta] * network.node_count if isinstance(beta, (int, float)) else list(beta)
        if all(b == 0 for b in betas):
            emp = occupancy_vector(schedules, counts)
            return MixingReport(tv_distance(emp, pi), tolerance, "Inconclusive", pi.tolist(), emp.tolist(),
                                slots, {"reason": "no decision schedule is ever formed; the chain is frozen"})
    else:
        raise ValueError("variant must be 'basic' or 'qcsma'")
    emp = occupancy_vector(schedules, counts)
    tv = tv_distance(emp, pi)
    return MixingReport(tv, tolerance, "Pass" if tv <= tolerance else "Fail", pi.tolist(), emp.tolist(), slots)


# ------------------------------------------------------------------ slowly varying weights

def alpha_t(weight_fn, w_cong: int, n_links: int, gstar_next: float) -> float:
    """Bound on the one-slot log-change of the Gibbs law, from ``g*`` at the next slot."""
    q_star = weight_fn.inverse(gstar_next)
    return 2.0 * (1.0 + w_cong) * n_links * weight_fn.deriv(max(0.0, q_star - 1.0 - w_cong))


def gibbs_log_ratio(schedules: ScheduleSet, w_now, w_next) -> float:
    """``max_s |log(pi_next(s) / pi_now(s))|``."""
    a = np.log(exact_stationary(schedules, w_now))
    b = np.log(exact_stationary(schedules, w_next))
    return float(np.abs(b - a).max())


@dataclass
class AdiabaticReport:
    slots: int
    checked: int
    premise_violations: int
    ratio_violations: int
    max_excess: float
    alpha_T: list[float]
    delta_over_16: float

    def to_dict(self) -> dict:
        at = np.asarray(self.alpha_T) if self.alpha_T else np.zeros(1)
        return {
            "slots": self.slots, "checked": self.checked, "premise_violations": self.premise_violations,
            "ratio_violations": self.ratio_violations, "max_excess": self.max_excess,
            "alpha_T_max": float(at.max()), "alpha_T_median": float(np.median(at)),
            "alpha_T_fraction_below": float((at <= self.delta_over_16).mean()),
            "delta_over_16": self.delta_over_16,
        }


def adiabatic_check(sim, slots: int, delta: float = 0.1, mixing_every: int = 1) -> AdiabaticReport:
    """Live check of the one-slot Gibbs ratio bound on a CSMA simulation.

    The bound assumes every floored queue moves by at most ``1 + w_cong``
    per slot; slots where that premise fails (bursts of file arrivals) are
    counted and skipped. ``alpha_t * T_(t+1)`` is recorded against
    ``delta / 16``, with ``T`` from the exact single-site kernel.
    """
    if sim.scheduler is None or sim.schedules is None:
        raise ValueError("needs a CSMA simulation over an enumerable network")
    wf = sim.wf
    w_cong = sim.policy.w_cong
    L = sim.network.n_links
    graph = sim.network.conflict_graph
    prev = None
    checked = premise = ratio = 0
    max_excess = -math.inf
    products = []
    for _ in range(slots):
        sim.step()
        mw = sim.last_modified
        qtilde = [max(v, wf.inverse(mw.g_star)) if mw.g_star > 0 else float(v) for v in sim.qlen]
        if prev is not None:
            w_prev, q_prev = prev
            if any(abs(a - b) > 1 + w_cong + 1e-9 for a, b in zip(qtilde, q_prev)):
                premise += 1
            else:
                checked += 1
                a = alpha_t(wf, w_cong, L, mw.g_star)
                change = gibbs_log_ratio(sim.schedules, w_prev, mw.w)
                max_excess = max(max_excess, change - a)
                if change > a + 1e-9:
                    ratio += 1
                if checked % mixing_every == 0:
                    chain = build_kernel(graph, mw.w)
                    lam, T = slem(chain.P, chain.pi)
                    products.append(a * T)
        prev = (list(mw.w), qtilde)
    return AdiabaticReport(slots, checked, premise, ratio, max_excess, products, delta / 16.0)


# ------------------------------------------------------------------ oracles

def brute_force_max_weight(network: Network, w) -> float:
    """Best summed weight over every conflict-free link subset, from the CS rule directly."""
    links = network.links
    L = len(links)
    conflicts = [[network.link_index[c] for c in conflict_set(network, link) if c != link] for link in links]
    best = 0.0
    for mask in range(1 << L):
        members = [l for l in range(L) if mask >> l & 1]
        if any(mask >> c & 1 for l in members for c in conflicts[l]):
            continue
        best = max(best, math.fsum(w[l] for l in members))
    return best


# ------------------------------------------------------------------ residual statistics

@dataclass
class ResidualReport:
    samples: int
    mean: float
    std_error: float
    z: float
    second_moment: float
    bound: float | None
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def residual_moment_test(trace, bound: float | None = None, z_limit: float = 4.0,
                         min_samples: int = 100_000) -> ResidualReport:
    """z-test of zero mean plus the second-moment bound check."""
    b = np.asarray(trace, dtype=float)
    n = b.size
    if n < min_samples:
        raise InsufficientSamples(f"{n} samples, need at least {min_samples}")
    mean = float(b.mean())
    sd = float(b.std(ddof=1))
    se = sd / math.sqrt(n)
    if se == 0.0:
        z = 0.0 if mean == 0.0 else math.inf
    else:
        z = mean / se
    m2 = float(np.mean(b * b))
    ok = abs(z) < z_limit and (bound is None or m2 <= bound)
    return ResidualReport(n, mean, se, z, m2, bound, ok)


def synthetic_residuals(rng, eta: float, n_events: int, w_cong: int = 1) -> np.ndarray:
    """Residuals of ``n_events`` injection attempts with window space uniform on ``1..w_cong``."""
    from .transport import draw_injection

    out = np.empty(n_events)
    sigma = 1.0 / eta
    rand = rng.random
    for e in range(n_events):
        space = 1 + int(rand() * w_cong)
        k, done = draw_injection(rng, eta, space)
        out[e] = k - sigma if done else k
    return out


# ------------------------------------------------------------------ stability

@dataclass
class StabilityVerdict:
    tag: str  # "Stable" | "Unstable" | "Inconclusive"
    files_first_half: float
    files_second_half: float
    queue_first_half: float | None
    queue_second_half: float | None
    slope: float
    slope_ci: tuple[float, float]
    final_backlog: float | None
    backlog_threshold: float | None
    frames: int
    level: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["slope_ci"] = list(self.slope_ci)
        return d


def trend_ci(y, level: float = 0.99, n_batches: int = 20) -> tuple[float, tuple[float, float]]:
    """OLS slope of batch means with a t-interval; batching tempers autocorrelation."""
    y = np.asarray(y, dtype=float)
    n = y.size
    size = n // n_batches
    if size < 1:
        raise InsufficientData("too few points for batch means")
    used = y[: size * n_batches].reshape(n_batches, size)
    means = used.mean(axis=1)
    x = (np.arange(n_batches) + 0.5) * size
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (means - means.mean())) / sxx
    resid = means - means.mean() - slope * xc
    s2 = float(resid @ resid) / (n_batches - 2)
    se = math.sqrt(s2 / sxx)
    tq = float(stats.t.ppf(0.5 + level / 2.0, n_batches - 2))
    return slope, (slope - tq * se, slope + tq * se)


def stability_verdict(total_files, total_q=None, final_backlog: float | None = None,
                      excess_load: float | None = None, level: float = 0.99,
                      min_frames: int = 10_000, ratio: float = 1.1, n_batches: int = 20) -> StabilityVerdict:
    """Classify a run from its file-count trajectory.

    Stable: the slope interval of the second half covers zero and the
    second-half mean is at most ``ratio`` times the first-half mean.
    Unstable: the interval is strictly positive and the final backlog is at
    least ``0.1 * T * excess_load``. The excess load defaults to the fitted
    growth rate of the total queue when not given.
    """
    y = np.asarray(total_files, dtype=float)
    T = y.size
    if T < min_frames:
        raise InsufficientData(f"{T} frames, need at least {min_frames}")
    half = T // 2
    m1, m2 = float(y[:half].mean()), float(y[half:].mean())
    q1 = q2 = None
    if total_q is not None:
        q = np.asarray(total_q, dtype=float)
        q1, q2 = float(q[:half].mean()), float(q[half:].mean())
    slope, (lo, hi) = trend_ci(y[half:], level, n_batches)
    threshold = None
    if excess_load is None and total_q is not None:
        excess_load = max(trend_ci(np.asarray(total_q, dtype=float)[half:], level, n_batches)[0], 0.0)
    if excess_load is not None:
        threshold = 0.1 * T * excess_load
    if lo <= 0.0 <= hi and m2 <= ratio * m1:
        tag = "Stable"
    elif lo > 0.0 and final_backlog is not None and threshold is not None and final_backlog >= threshold and threshold > 0:
        tag = "Unstable"
    else:
        tag = "Inconclusive"
    return StabilityVerdict(tag, m1, m2, q1, q2, slope, (lo, hi), final_backlog, threshold, T, level)
