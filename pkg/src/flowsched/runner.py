"""Run orchestration: one replica to memory or to CSV, and parallel replica pools."""

from __future__ import annotations

import csv
import json
import os
from array import array
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .analysis import stability_verdict
from .engine import CSV_COLUMNS, SimConfig, Simulation
from .errors import InsufficientData

SUMMARY_FORMAT = "flowsched-summary"
SUMMARY_VERSION = 1


@dataclass
class RunResult:
    sim: Simulation
    total_files: array
    total_q: array
    final_backlog: float
    slots: int

    @property
    def violations(self) -> dict:
        return dict(self.sim.violations)

    def verdict(self, excess_load=None, level: float = 0.99, min_frames: int = 10_000):
        excess = excess_load if excess_load is not None else self.sim.config.excess_load
        return stability_verdict(self.total_files, self.total_q, self.final_backlog, excess,
                                 level=level, min_frames=min_frames)


def simulate(config: SimConfig, sim: Simulation | None = None, writer=None) -> RunResult:
    """Run to the configured horizon, keeping the file and queue series."""
    sim = sim or Simulation(config)
    files = array("d")
    queue = array("d")
    last = None
    for frame in sim.run(config.slots):
        files.append(frame.total_files)
        queue.append(frame.total_q)
        if writer is not None:
            writer.writerow(frame.csv_row())
        last = frame
    backlog = last.total_backlog if last is not None else 0.0
    return RunResult(sim, files, queue, backlog, sim.t)


def summary_dict(result: RunResult, seed: int, level: float = 0.99, min_frames: int = 10_000) -> dict:
    sim = result.sim
    cfg = sim.config
    try:
        verdict = result.verdict(level=level, min_frames=min_frames).to_dict()
    except InsufficientData as exc:
        verdict = {"tag": "InsufficientData", "reason": str(exc)}
    slots = max(result.slots, 1)
    throughput = sim.delivered / slots
    return {
        "format": SUMMARY_FORMAT,
        "version": SUMMARY_VERSION,
        "seed": seed,
        "slots": result.slots,
        "scheduler": cfg.scheduler,
        "verdict": verdict,
        "violations": dict(sim.violations),
        "asserts_ok": not any(sim.violations.values()),
        "delivered": sim.delivered,
        "injected": sim.injected,
        "wasted_service": sim.wasted,
        "throughput": throughput,
        "throughput_with_control": throughput / (1.0 + cfg.control_overhead_ratio),
        "residuals": sim.residual_summary(),
    }


def run_replica(config: SimConfig, out_dir, seed: int, snapshot_every: int = 0,
                level: float = 0.99, min_frames: int = 10_000) -> dict:
    """One replica to ``out_dir/metrics.csv`` and ``out_dir/summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(config)
    files, queue = array("d"), array("d")
    last = None
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for frame in sim.run(config.slots):
            writer.writerow(frame.csv_row())
            files.append(frame.total_files)
            queue.append(frame.total_q)
            last = frame
            if snapshot_every and sim.t % snapshot_every == 0:
                fh.flush()
                (out / f"snapshot_{sim.t}.json").write_text(json.dumps(sim.snapshot()))
    result = RunResult(sim, files, queue, last.total_backlog if last else 0.0, sim.t)
    summary = summary_dict(result, seed, level, min_frames)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def max_workers() -> int:
    env = os.environ.get("FLOWSCHED_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _replica_job(args):
    from .config import parse_config

    doc, seed, out_dir, snapshot_every, level, min_frames = args
    exp = parse_config(doc)
    return run_replica(exp.sim, out_dir, seed, snapshot_every, level, min_frames)


def run_many(jobs: list[tuple]) -> list[dict]:
    """Run replica jobs, in worker processes when more than one worker is allowed."""
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [_replica_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replica_job, jobs))
