"""Experiment configuration: JSON documents validated against a schema.

Unknown keys are rejected at every level. A minimal document::

    {
      "network": {"nodes": 2, "links": [[0, 1]], "sources": [[0, 1]],
                  "routes": {"1": {"0": 1}}},
      "traffic": {"file_types": [0.5], "kappa": {"0": 0.2}},
      "engine": {"slots": 10000, "seed": 42}
    }

Traffic loads come either from ``kappa`` (files per slot per source) or
from a ``capacity_point`` block, in which case ``kappa = rho / mean size``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .engine import SimConfig
from .errors import ConfigError, FlowschedError
from .network import Network, NetworkSpec, build_network, make_capacity_point
from .transport import TrafficSpec, WindowPolicy
from .weights import WeightFn

_INT_KEY = "^[0-9]+$"
_PROB = {"type": "number", "minimum": 0, "maximum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["network", "traffic"],
    "properties": {
        "network": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nodes", "links", "sources", "routes"],
            "properties": {
                "nodes": {"type": "integer", "minimum": 1},
                "links": {"type": "array", "items": {
                    "type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}},
                "sources": {"type": "array", "minItems": 1, "items": {
                    "type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}},
                "routes": {"type": "object", "additionalProperties": False, "patternProperties": {
                    _INT_KEY: {"type": "object", "additionalProperties": False,
                               "patternProperties": {_INT_KEY: {"type": "integer", "minimum": 0}}}}},
            },
        },
        "traffic": {
            "type": "object",
            "additionalProperties": False,
            "required": ["file_types"],
            "properties": {
                "arrival": {"enum": ["poisson", "bernoulli"]},
                "file_types": {"type": "array", "minItems": 1,
                               "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                "type_probs": {"type": "object", "additionalProperties": False, "patternProperties": {
                    _INT_KEY: {"type": "array", "items": _PROB}}},
                "kappa": {"type": "object", "additionalProperties": False, "patternProperties": {
                    _INT_KEY: {"type": "number", "minimum": 0}}},
                "capacity_point": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mix", "theta"],
                    "properties": {
                        "mix": {"type": "array", "minItems": 1, "items": {
                            "type": "object", "additionalProperties": False, "required": ["links", "weight"],
                            "properties": {
                                "links": {"type": "array", "items": {
                                    "type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}},
                                "weight": {"type": "number", "minimum": 0},
                            }}},
                        "split": {"type": "array", "items": {
                            "type": "object", "additionalProperties": False, "required": ["link", "fractions"],
                            "properties": {
                                "link": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                                "fractions": {"type": "object", "additionalProperties": False,
                                              "patternProperties": {_INT_KEY: _PROB}},
                            }}},
                        "theta": {"type": "number", "minimum": 0},
                    },
                },
            },
            "oneOf": [{"required": ["kappa"]}, {"required": ["capacity_point"]}],
        },
        "window": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy": {"enum": ["fixed", "random", "aimd"]},
                "w_cong": {"type": "integer", "minimum": 1},
                "w": {"type": "integer", "minimum": 1},
                "increase": {"type": "integer", "minimum": 0},
                "decrease": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "threshold": {"type": "integer", "minimum": 0},
                "initial": {"type": "integer", "minimum": 1},
            },
        },
        "scheduler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["centralized", "basic_csma", "qcsma"]},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"oneOf": [_PROB, {"type": "object", "additionalProperties": False,
                                           "patternProperties": {_INT_KEY: _PROB}}]},
                "control_overhead_ratio": {"type": "number", "minimum": 0},
                "prune_nonpositive": {"type": "boolean"},
            },
        },
        "weight_fn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h": {"enum": ["one", "loglog", "logtheta"]},
                "theta": {"type": "number"},
            },
        },
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slots": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "cadence": {"type": "integer", "minimum": 1},
                "assertions": {"enum": ["raise", "record", "off"]},
                "snapshot_every": {"type": "integer", "minimum": 0},
                "record_residuals": {"type": "boolean"},
                "enumeration_cap": {"type": "integer", "minimum": 1},
            },
        },
        "analysis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "excess_load": {"type": "number", "minimum": 0},
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "min_frames": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
        "replicas": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}


@dataclass
class ExperimentConfig:
    sim: SimConfig
    raw: dict
    replicas: int = 1
    seeds: list[int] = field(default_factory=list)
    output: str | None = None
    snapshot_every: int = 0
    level: float = 0.99
    min_frames: int = 10_000

    def replica_seeds(self) -> list[int]:
        if self.seeds:
            return list(self.seeds)
        return [self.sim.seed + k for k in range(self.replicas)]

    def with_overrides(self, seed: int | None = None, slots: int | None = None) -> "ExperimentConfig":
        doc = copy.deepcopy(self.raw)
        eng = doc.setdefault("engine", {})
        if seed is not None:
            eng["seed"] = seed
            doc.pop("seeds", None)
        if slots is not None:
            eng["slots"] = slots
        return parse_config(doc)


def _int_keys(d: dict) -> dict:
    return {int(k): v for k, v in d.items()}


def _build_network(doc: dict) -> Network:
    routes = {int(d): _int_keys(table) for d, table in doc["routes"].items()}
    sources = {}
    for u, d in doc["sources"]:
        if u in sources:
            raise ConfigError(f"source {u} listed twice")
        sources[u] = d
    return build_network(NetworkSpec(doc["nodes"], [tuple(l) for l in doc["links"]], sources, routes))


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a configuration document and build the simulator configuration."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    try:
        return _parse(doc)
    except ConfigError:
        raise
    except (FlowschedError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from None


def _parse(doc: dict) -> ExperimentConfig:
    net = _build_network(doc["network"])
    tdoc = doc["traffic"]
    etas = [float(e) for e in tdoc["file_types"]]
    K = len(etas)
    given_probs = {int(k): v for k, v in tdoc.get("type_probs", {}).items()}
    probs = {s: given_probs.get(s, [1.0 / K] * K) for s in net.sources}
    for s in given_probs:
        if s not in net.sources:
            raise ConfigError(f"type_probs given for node {s}, which is not a source")

    excess = doc.get("analysis", {}).get("excess_load")
    if "capacity_point" in tdoc:
        cp_doc = tdoc["capacity_point"]
        mix = [([tuple(l) for l in item["links"]], item["weight"]) for item in cp_doc["mix"]]
        split = {tuple(item["link"]): _int_keys(item["fractions"]) for item in cp_doc.get("split", [])}
        theta = float(cp_doc["theta"])
        point = make_capacity_point(net, mix, split, theta)
        kappa = {}
        for s in net.sources:
            m = sum(p / eta for p, eta in zip(probs[s], etas))
            kappa[s] = point.rho[s] / m
        if excess is None and theta > 1.0:
            excess = sum(point.rho.values()) * (1.0 - 1.0 / theta)
    else:
        kappa = {int(k): float(v) for k, v in tdoc["kappa"].items()}
        for s in kappa:
            if s not in net.sources:
                raise ConfigError(f"kappa given for node {s}, which is not a source")
        for s in net.sources:
            kappa.setdefault(s, 0.0)
    traffic = TrafficSpec(kappa, etas, probs, tdoc.get("arrival", "poisson"))

    wdoc = doc.get("window", {})
    policy = WindowPolicy(
        kind=wdoc.get("policy", "fixed"),
        w_cong=wdoc.get("w_cong", max(1, wdoc.get("w", 1))),
        w=wdoc.get("w", 1),
        increase=wdoc.get("increase", 1),
        decrease=wdoc.get("decrease", 0.5),
        threshold=wdoc.get("threshold", 10),
        initial=wdoc.get("initial", 1),
    )
    if policy.w > policy.w_cong:
        raise ConfigError("window.w exceeds window.w_cong")

    sdoc = doc.get("scheduler", {})
    kind = sdoc.get("kind", "centralized")
    hdoc = doc.get("weight_fn", {})
    h = hdoc.get("h", "one" if kind == "centralized" else "loglog")
    weight_fn = WeightFn(h, hdoc.get("theta"))
    beta = sdoc.get("beta", 0.5)
    if isinstance(beta, dict):
        beta = {int(k): float(v) for k, v in beta.items()}

    edoc = doc.get("engine", {})
    adoc = doc.get("analysis", {})
    sim = SimConfig(
        network=net,
        traffic=traffic,
        policy=policy,
        scheduler=kind,
        weight_fn=weight_fn,
        epsilon=sdoc.get("epsilon", 0.1),
        beta=beta,
        control_overhead_ratio=sdoc.get("control_overhead_ratio", 0.0),
        prune_nonpositive=sdoc.get("prune_nonpositive", False),
        slots=edoc.get("slots", 1000),
        seed=edoc.get("seed", 0),
        cadence=edoc.get("cadence", 1),
        assertions=edoc.get("assertions", "record"),
        record_residuals=edoc.get("record_residuals", False),
        enumeration_cap=edoc.get("enumeration_cap", 24),
        excess_load=excess,
        raw=doc,
    )
    return ExperimentConfig(
        sim=sim,
        raw=doc,
        replicas=doc.get("replicas", 1),
        seeds=list(doc.get("seeds", [])),
        output=doc.get("output"),
        snapshot_every=edoc.get("snapshot_every", 0),
        level=adoc.get("level", 0.99),
        min_frames=adoc.get("min_frames", 10_000),
    )


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(doc)
