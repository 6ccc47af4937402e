"""Log-type weight functions, back-pressure link weights and max-weight scheduling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .errors import EmptyScheduleSet, NegativeInput
from .network import Network, ScheduleSet

H_CHOICES = ("one", "loglog", "logtheta")


class WeightFn:
    """``g(x) = log(1 + x) / h(x)`` for one of the supported ``h`` choices.

    ``one``: h = 1. ``loglog``: h = log(e + log(1 + x)).
    ``logtheta``: h = log(e + x) ** theta with 0 < theta < 1.
    """

    def __init__(self, h: str = "loglog", theta: float | None = None):
        if h not in H_CHOICES:
            raise ValueError(f"unknown h choice {h!r}; expected one of {H_CHOICES}")
        if h == "logtheta":
            if theta is None or not (0.0 < theta < 1.0):
                raise ValueError("logtheta needs 0 < theta < 1 for g to be increasing and concave")
        self.h_name = h
        self.theta = float(theta) if h == "logtheta" else None
        self._table: list[float] = [0.0]
        self.h0 = self.h(0.0)
        self._G_int: list[float] = [0.0]
        self.G = lru_cache(maxsize=1 << 16)(self._G)

    def __repr__(self) -> str:
        if self.h_name == "logtheta":
            return f"WeightFn(h='logtheta', theta={self.theta})"
        return f"WeightFn(h={self.h_name!r})"

    def to_dict(self) -> dict:
        out = {"h": self.h_name}
        if self.theta is not None:
            out["theta"] = self.theta
        return out

    def h(self, x: float) -> float:
        if self.h_name == "one":
            return 1.0
        if self.h_name == "loglog":
            return math.log(math.e + math.log1p(x))
        return math.log(math.e + x) ** self.theta

    def dh(self, x: float) -> float:
        if self.h_name == "one":
            return 0.0
        if self.h_name == "loglog":
            return 1.0 / ((math.e + math.log1p(x)) * (1.0 + x))
        return self.theta * math.log(math.e + x) ** (self.theta - 1.0) / (math.e + x)

    def __call__(self, x: float) -> float:
        if x < 0:
            raise NegativeInput(f"g is defined on [0, inf), got {x}")
        if self.h_name == "one":
            return math.log1p(x)
        return math.log1p(x) / self.h(x)

    def deriv(self, x: float) -> float:
        """g'(x)."""
        if x < 0:
            raise NegativeInput(f"g' is defined on [0, inf), got {x}")
        hx = self.h(x)
        return (hx / (1.0 + x) - math.log1p(x) * self.dh(x)) / (hx * hx)

    def inverse(self, y: float) -> float:
        """Solve g(x) = y for x >= 0."""
        if y < 0:
            raise NegativeInput("g only takes nonnegative values")
        if y == 0:
            return 0.0
        hi = 1.0
        while self(hi) < y:
            hi *= 2.0
            if hi > 1e300:
                return math.inf
        return optimize.brentq(lambda x: self(x) - y, 0.0, hi, xtol=1e-12, rtol=1e-14)

    def at_int(self, q: int) -> float:
        """g at a nonnegative integer, from a lazily grown table."""
        table = self._table
        if q >= len(table):
            for k in range(len(table), 2 * q + 16):
                table.append(self(k))
        return table[q]

    def _G(self, u: float) -> float:
        if u < 0:
            raise NegativeInput("G is defined on [0, inf)")
        if self.h_name == "one":
            return (1.0 + u) * math.log1p(u) - u
        k = int(math.floor(u))
        table = self._G_int
        while len(table) <= k:
            a = len(table) - 1
            part, _ = integrate.quad(self, a, a + 1, epsabs=1e-13, epsrel=1e-13)
            table.append(table[-1] + part)
        if u == k:
            return table[k]
        part, _ = integrate.quad(self, k, u, epsabs=1e-13, epsrel=1e-13)
        return table[k] + part


def g_eval(weight_fn: WeightFn, x: float) -> float:
    return weight_fn(x)


def state_weight_gap(weight_fn: WeightFn, eta_min: float) -> float:
    """Largest possible gap between state-based and MAC-based link weights."""
    return math.log(1.0 + 1.0 / eta_min) / weight_fn.h0


@dataclass
class LinkWeights:
    """Per-destination and per-link weights with the chosen destination per link."""

    per_dest: np.ndarray  # (D, L); nan where the link does not carry d
    w: list[float]
    dstar: list[int]  # destination index attaining the max
    tied: list[bool]


def link_weights_from_g(network: Network, gq, rng=None) -> tuple[list[float], list[int], list[bool]]:
    """Link weights from per-node, per-destination g-values ``gq[n][k]``.

    Ties between destinations are broken uniformly with ``rng``; without an
    rng the lowest destination index wins.
    """
    w: list[float] = []
    dstar: list[int] = []
    tied: list[bool] = []
    for l, (i, j) in enumerate(network.links):
        carried = network.carried[l]
        gi, gj = gq[i], gq[j]
        if len(carried) == 1:
            k = carried[0]
            w.append(gi[k] - gj[k])
            dstar.append(k)
            tied.append(False)
            continue
        best = -math.inf
        arg: list[int] = []
        for k in carried:
            v = gi[k] - gj[k]
            if v > best:
                best, arg = v, [k]
            elif v == best:
                arg.append(k)
        w.append(best)
        if len(arg) > 1 and rng is not None:
            dstar.append(arg[int(rng.random() * len(arg))])
        else:
            dstar.append(arg[0])
        tied.append(len(arg) > 1)
    return w, dstar, tied


def _per_dest(network: Network, gq) -> np.ndarray:
    out = np.full((network.n_dest, network.n_links), np.nan)
    for l, (i, j) in enumerate(network.links):
        for k in network.carried[l]:
            out[k, l] = gq[i][k] - gq[j][k]
    return out


def compute_link_weights(weight_fn: WeightFn, queues, network: Network, rng=None) -> LinkWeights:
    """Back-pressure weights ``g(q_i) - g(q_j)`` from MAC queues of shape ``(N, D)``."""
    q = np.asarray(queues)
    if (q < 0).any():
        raise NegativeInput("queue lengths must be nonnegative")
    gq = [[weight_fn(float(v)) for v in row] for row in q]
    w, dstar, tied = link_weights_from_g(network, gq, rng)
    return LinkWeights(_per_dest(network, gq), w, dstar, tied)


@dataclass
class StateWeights:
    per_dest: np.ndarray
    W: list[float]
    dstar: list[int]


def compute_state_weights(weight_fn: WeightFn, qbar, network: Network) -> StateWeights:
    """Diagnostic weights from expected total backlogs; never used to schedule."""
    gq = [[weight_fn(float(v)) for v in row] for row in np.asarray(qbar, dtype=float)]
    W, dstar, _ = link_weights_from_g(network, gq, None)
    return StateWeights(_per_dest(network, gq), W, dstar)


@dataclass
class ScheduleChoice:
    mask: int
    links: tuple[int, ...]
    weight: float
    n_maximizers: int
    dest: list[int]  # destination index served on each link of ``links``


def max_weight_schedule(
    schedules: ScheduleSet,
    w,
    rng=None,
    dstar=None,
    prune_nonpositive: bool = False,
) -> ScheduleChoice:
    """Schedule maximizing the summed link weight, ties broken uniformly.

    Candidate totals are screened in floating point, then re-summed exactly
    with ``math.fsum`` so near-ties are resolved on the true sums.
    """
    members = schedules.members
    if not members:
        raise EmptyScheduleSet("schedule set is empty")
    totals = [sum(w[l] for l in mem) for mem in members]
    best = max(totals)
    tol = 1e-12 * (1.0 + abs(best)) * (1 + schedules.n_links)
    cands = [k for k, t in enumerate(totals) if t >= best - tol]
    if len(cands) > 1:
        exact = [math.fsum(w[l] for l in members[k]) for k in cands]
        top = max(exact)
        cands = [k for k, e in zip(cands, exact) if e == top]
    if len(cands) > 1 and rng is not None:
        pick = cands[int(rng.random() * len(cands))]
    else:
        pick = cands[0]
    links = members[pick]
    if prune_nonpositive:
        links = tuple(l for l in links if w[l] > 0)
    weight = math.fsum(w[l] for l in links)
    mask = sum(1 << l for l in links)
    dest = [dstar[l] for l in links] if dstar is not None else []
    return ScheduleChoice(mask, links, weight, len(cands), dest)


def oracle_max_weight(schedules: ScheduleSet, w) -> float:
    """Best achievable summed weight over ``schedules`` (exact summation)."""
    return max(math.fsum(w[l] for l in mem) for mem in schedules.members)
