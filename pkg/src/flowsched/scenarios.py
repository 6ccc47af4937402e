"""Reference experiment documents used by the verification suites and examples.

``stability_doc`` is a four-link network: the line ``0 -> 1 -> 2 -> 3``
plus a cross link ``4 -> 1``, all toward node 3, with sources at 0, 4 and
2. Every pair of its links conflicts, so the capacity region is the single
constraint ``3 rho_0 + 3 rho_4 + rho_2 <= 1`` and the mix below sits on
its boundary: ``theta < 1`` is inside, ``theta > 1`` is overloaded.

``multihop_doc`` is a bidirectional four-node line with two destinations.
"""

from __future__ import annotations

import copy

FILE_TYPES = [0.5, 0.1]
TYPE_PROBS = [0.7, 0.3]

WINDOW_POLICIES = {
    "fixed1": {"policy": "fixed", "w": 1, "w_cong": 1},
    "fixed5": {"policy": "fixed", "w": 5, "w_cong": 5},
    "random": {"policy": "random", "w_cong": 5},
    "aimd": {"policy": "aimd", "w_cong": 8, "increase": 1, "decrease": 0.5, "threshold": 10, "initial": 1},
}

_STABILITY = {
    "network": {
        "nodes": 5,
        "links": [[0, 1], [1, 2], [2, 3], [4, 1]],
        "sources": [[0, 3], [2, 3], [4, 3]],
        "routes": {"3": {"0": 1, "1": 2, "2": 3, "4": 1}},
    },
    "traffic": {
        "arrival": "poisson",
        "file_types": FILE_TYPES,
        "type_probs": {"0": TYPE_PROBS, "2": TYPE_PROBS, "4": TYPE_PROBS},
        "capacity_point": {
            "mix": [
                {"links": [[0, 1]], "weight": 0.15},
                {"links": [[4, 1]], "weight": 0.15},
                {"links": [[1, 2]], "weight": 0.3},
                {"links": [[2, 3]], "weight": 0.4},
            ],
            "theta": 0.7,
        },
    },
}

_MULTIHOP = {
    "network": {
        "nodes": 4,
        "links": [[0, 1], [1, 2], [2, 3], [3, 2], [2, 1], [1, 0]],
        "sources": [[0, 3], [1, 3], [3, 0]],
        "routes": {"3": {"0": 1, "1": 2, "2": 3}, "0": {"3": 2, "2": 1, "1": 0}},
    },
    "traffic": {
        "arrival": "poisson",
        "file_types": FILE_TYPES,
        "type_probs": {"0": TYPE_PROBS, "1": TYPE_PROBS, "3": TYPE_PROBS},
        "capacity_point": {
            "mix": [
                {"links": [[0, 1]], "weight": 0.1},
                {"links": [[1, 2]], "weight": 0.2},
                {"links": [[2, 3]], "weight": 0.2},
                {"links": [[3, 2]], "weight": 0.1},
                {"links": [[2, 1]], "weight": 0.1},
                {"links": [[1, 0]], "weight": 0.1},
                {"links": [], "weight": 0.2},
            ],
            "theta": 0.8,
        },
    },
}


def _with(base: dict, theta: float, window: dict, scheduler: str, h: str | None,
          slots: int, seed: int, epsilon: float, beta: float, assertions: str) -> dict:
    doc = copy.deepcopy(base)
    doc["traffic"]["capacity_point"]["theta"] = theta
    doc["window"] = dict(window)
    doc["scheduler"] = {"kind": scheduler}
    if scheduler != "centralized":
        doc["scheduler"].update({"epsilon": epsilon, "beta": beta})
    doc["weight_fn"] = {"h": h or ("one" if scheduler == "centralized" else "loglog")}
    doc["engine"] = {"slots": slots, "seed": seed, "assertions": assertions}
    return doc


def stability_doc(theta: float = 0.7, window: str | dict = "fixed1", scheduler: str = "centralized",
                  h: str | None = None, slots: int = 200_000, seed: int = 1, epsilon: float = 0.1,
                  beta: float = 0.5, assertions: str = "record") -> dict:
    win = WINDOW_POLICIES[window] if isinstance(window, str) else window
    return _with(_STABILITY, theta, win, scheduler, h, slots, seed, epsilon, beta, assertions)


def multihop_doc(theta: float = 0.8, window: str | dict = "fixed5", scheduler: str = "qcsma",
                 h: str | None = None, slots: int = 1_000_000, seed: int = 5, epsilon: float = 0.1,
                 beta: float = 0.5, assertions: str = "record") -> dict:
    win = WINDOW_POLICIES[window] if isinstance(window, str) else window
    return _with(_MULTIHOP, theta, win, scheduler, h, slots, seed, epsilon, beta, assertions)


def single_link_doc(kappa: float = 0.2, eta: float = 0.5, slots: int = 10_000, seed: int = 42) -> dict:
    return {
        "network": {"nodes": 2, "links": [[0, 1]], "sources": [[0, 1]], "routes": {"1": {"0": 1}}},
        "traffic": {"file_types": [eta], "kappa": {"0": kappa}},
        "engine": {"slots": slots, "seed": seed},
    }
