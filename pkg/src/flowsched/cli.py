"""Command-line entry point: ``flowsched {run,verify,sweep,sample-csma}``.

Exit codes: 0 success, 2 configuration error, 3 assertion or check
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, parse_config
from .errors import AssertionFailure, ConfigError, FlowschedError, HorizonZero

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_IO = 0, 2, 3, 4
GRID_KEYS = ("theta", "w_cong", "scheduler", "epsilon")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _err(msg: str) -> None:
    print(f"flowsched: {msg}", file=sys.stderr)


def _load(args) -> ExperimentConfig:
    exp = load_config(args.config)
    if getattr(args, "seed", None) is not None or getattr(args, "slots", None) is not None:
        exp = exp.with_overrides(seed=args.seed, slots=args.slots)
    if getattr(args, "replicas", None) is not None:
        exp.replicas = args.replicas
        if args.seed is None and exp.seeds:
            exp.seeds = exp.seeds[: args.replicas]
    return exp


def _jobs(exp: ExperimentConfig, out: Path) -> list[tuple]:
    seeds = exp.replica_seeds()
    jobs = []
    for seed in seeds:
        doc = copy.deepcopy(exp.raw)
        doc.setdefault("engine", {})["seed"] = seed
        doc.pop("seeds", None)
        rdir = out / f"replica_{seed}" if len(seeds) > 1 else out
        jobs.append((doc, seed, str(rdir), exp.snapshot_every, exp.level, exp.min_frames))
    return jobs


def cmd_run(args) -> int:
    from .runner import run_many

    exp = _load(args)
    if exp.sim.slots <= 0:
        raise HorizonZero("horizon must be at least one slot")
    out = Path(args.out or exp.output or "flowsched_out")
    summaries = run_many(_jobs(exp, out))
    bad = [s for s in summaries if not s["asserts_ok"]]
    for s in summaries:
        print(f"seed {s['seed']}: {s['verdict']['tag']}, delivered {s['delivered']}, "
              f"violations {sum(s['violations'].values())}")
    return EXIT_ASSERT if bad else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(args.suite)
    report = {"format": "flowsched-verify", "version": 1, "suite": args.suite,
              "passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    for r in results:
        print(r.line())
    if args.out:
        path = Path(args.out)
        if path.suffix != ".json":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "verify.json"
        path.write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    return EXIT_OK if report["passed"] else EXIT_ASSERT


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _parse_grid(text: str) -> dict:
    path = Path(text)
    raw = path.read_text() if path.suffix == ".json" and path.exists() else text
    try:
        grid = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"grid is not valid JSON: {exc}") from None
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must be a non-empty JSON object")
    for k, v in grid.items():
        if k not in GRID_KEYS:
            raise ConfigError(f"unknown grid key {k!r}; expected one of {GRID_KEYS}")
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid values for {k!r} must be a non-empty list")
    return grid


def _apply_point(doc: dict, point: dict) -> dict:
    doc = copy.deepcopy(doc)
    traffic = doc["traffic"]
    if "theta" in point:
        if "capacity_point" in traffic:
            traffic["capacity_point"]["theta"] = point["theta"]
        else:
            traffic["kappa"] = {k: v * point["theta"] for k, v in traffic["kappa"].items()}
    if "w_cong" in point:
        win = doc.setdefault("window", {})
        win["w_cong"] = point["w_cong"]
        if win.get("w", 1) > point["w_cong"]:
            win["w"] = point["w_cong"]
    if "scheduler" in point:
        doc.setdefault("scheduler", {})["kind"] = point["scheduler"]
    if "epsilon" in point:
        doc.setdefault("scheduler", {})["epsilon"] = point["epsilon"]
    return doc


def cmd_sweep(args) -> int:
    from .runner import run_many

    grid = _parse_grid(args.grid)
    exp = _load(args)
    out = Path(args.out or exp.output or "flowsched_sweep")
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    jobs, meta = [], []
    for n, point in enumerate(points):
        pexp = parse_config(_apply_point(exp.raw, point))
        pexp.replicas, pexp.seeds = exp.replicas, exp.seeds
        for job in _jobs(pexp, out / f"point_{n}"):
            jobs.append(job)
            meta.append(point)
    summaries = run_many(jobs)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(GRID_KEYS) + ["seed", "verdict", "mean_files", "violations"])
        for point, s in zip(meta, summaries):
            v = s["verdict"]
            mean_files = v.get("files_second_half", "")
            w.writerow([point.get(k, "") for k in GRID_KEYS]
                       + [s["seed"], v["tag"], repr(mean_files) if mean_files != "" else "",
                          sum(s["violations"].values())])
    print(f"{len(summaries)} runs written to {out / 'sweep.csv'}")
    return EXIT_ASSERT if any(not s["asserts_ok"] for s in summaries) else EXIT_OK


def cmd_sample_csma(args) -> int:
    from . import analysis as an

    exp = _load(args)
    net = exp.sim.network
    if args.weights:
        w = [float(x) for x in args.weights.split(",")]
        if len(w) != net.n_links:
            raise ConfigError(f"--weights needs {net.n_links} values, one per link")
    else:
        w = [0.0] * net.n_links
    slots = args.slots or 100_000
    seed = args.seed if args.seed is not None else exp.sim.seed
    variant = "qcsma" if args.variant == "qcsma" else "basic"
    rep = an.csma_mixing_experiment(net.conflict_graph, w, slots=slots, seed=seed, variant=variant,
                                    network=net, beta=exp.sim.beta)
    from .network import enumerate_schedules

    schedules = enumerate_schedules(net.conflict_graph)
    out = Path(args.out or "flowsched_samples")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "samples.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["schedule", "links", "exact", "empirical"])
        for k, mem in enumerate(schedules.members):
            links = " ".join(f"{a}-{b}" for a, b in (net.links[l] for l in mem))
            wr.writerow([schedules.masks[k], links, repr(rep.exact[k]), repr(rep.empirical[k])])
    print(f"TV distance {rep.tv:.6f} over {slots} slots ({rep.verdict})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowsched", description="Flow-level multihop wireless scheduling simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="experiment JSON file")
        sp.add_argument("--seed", type=int, help="override the engine seed")
        sp.add_argument("--slots", type=int, help="override the horizon")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--replicas", type=int, help="number of replicas (seeds seed, seed+1, ...)")

    r = sub.add_parser("run", help="simulate a configuration")
    common(r)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("--suite", default="all", choices=["oracles", "csma_mixing", "bounds", "stability", "all"])
    v.add_argument("--out", help="report path (.json) or directory")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="run a parameter grid")
    common(s)
    s.add_argument("--grid", required=True, help="JSON object (or .json file) mapping theta/w_cong/scheduler/epsilon to lists")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("sample-csma", help="dump frozen-weight CSMA schedule occupancy")
    common(c)
    c.add_argument("--weights", help="comma-separated frozen link weights (default all zero)")
    c.add_argument("--variant", choices=["basic", "qcsma"], default="basic")
    c.set_defaults(func=cmd_sample_csma)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, HorizonZero) as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG
    except AssertionFailure as exc:
        _err(f"assertion failure: {exc}")
        return EXIT_ASSERT
    except FlowschedError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
