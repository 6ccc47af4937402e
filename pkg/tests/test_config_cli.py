from __future__ import annotations

import csv
import json

import pytest

from flowsched.cli import main
from flowsched.config import load_config, parse_config
from flowsched.errors import ConfigError
from flowsched.scenarios import multihop_doc, single_link_doc, stability_doc


@pytest.fixture(autouse=True)
def _one_worker(monkeypatch):
    monkeypatch.setenv("FLOWSCHED_THREADS", "1")


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_bundled_scenarios_parse():
    for doc in (single_link_doc(), stability_doc(), multihop_doc()):
        exp = parse_config(doc)
        assert exp.sim.slots > 0


def test_unknown_keys_are_rejected():
    doc = single_link_doc()
    doc["engine"]["speed"] = "fast"
    with pytest.raises(ConfigError, match="speed"):
        parse_config(doc)
    doc = single_link_doc()
    doc["colour"] = 1
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_capacity_point_sets_excess_only_when_overloaded():
    assert parse_config(stability_doc(theta=0.7)).sim.excess_load is None
    assert parse_config(stability_doc(theta=1.2)).sim.excess_load > 0


def test_overrides_and_seeds():
    exp = parse_config(single_link_doc(seed=4))
    exp.replicas = 3
    assert exp.replica_seeds() == [4, 5, 6]
    other = exp.with_overrides(seed=9, slots=77)
    assert (other.sim.seed, other.sim.slots) == (9, 77)


def test_single_link_run(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--config", write(tmp_path, single_link_doc(slots=10_000)), "--out", str(out)])
    assert code == 0
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0][:3] == ["slot", "total_files", "total_q"]
    assert len(rows) - 1 == 10_000
    summary = json.loads((out / "summary.json").read_text())
    assert summary["format"] == "flowsched-summary" and summary["version"] == 1
    assert summary["asserts_ok"]


def test_text_rate_is_a_config_error(tmp_path, capsys):
    doc = single_link_doc()
    doc["traffic"]["kappa"]["0"] = "fast"
    assert main(["run", "--config", write(tmp_path, doc)]) == 2
    assert "kappa" in capsys.readouterr().err


def test_non_concave_weight_is_a_config_error(tmp_path):
    doc = single_link_doc()
    doc["weight_fn"] = {"h": "logtheta", "theta": 1.0}
    assert main(["run", "--config", write(tmp_path, doc)]) == 2


def test_missing_file_is_an_io_error(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 4


def test_zero_horizon(tmp_path):
    assert main(["run", "--config", write(tmp_path, single_link_doc()), "--slots", "0"]) == 2


def test_unknown_suite():
    assert main(["verify", "--suite", "everything"]) == 2


def test_empty_grid(tmp_path):
    cfg = write(tmp_path, single_link_doc())
    assert main(["sweep", "--config", cfg, "--grid", "{}"]) == 2
    assert main(["sweep", "--config", cfg, "--grid", '{"theta": []}']) == 2
    assert main(["sweep", "--config", cfg, "--grid", '{"colour": [1]}']) == 2


def test_reruns_are_byte_identical(tmp_path):
    cfg = write(tmp_path, stability_doc(theta=0.8, window="aimd", scheduler="qcsma", slots=3000))
    for name in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_replicas_get_their_own_directories(tmp_path):
    cfg = write(tmp_path, single_link_doc(slots=500, seed=3))
    assert main(["run", "--config", cfg, "--replicas", "2", "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "replica_3" / "metrics.csv").exists()
    assert (tmp_path / "r" / "replica_4" / "summary.json").exists()


def test_snapshots_are_written(tmp_path):
    doc = single_link_doc(slots=1000)
    doc["engine"]["snapshot_every"] = 400
    assert main(["run", "--config", write(tmp_path, doc), "--out", str(tmp_path / "s")]) == 0
    snaps = sorted(p.name for p in (tmp_path / "s").glob("snapshot_*.json"))
    assert snaps == ["snapshot_400.json", "snapshot_800.json"]


def test_single_link_load_sweep(tmp_path):
    # kappa * mean size = 1, so theta is the offered load of the link
    doc = single_link_doc(kappa=0.5, eta=0.5, slots=100_000, seed=1)
    cfg = write(tmp_path, doc)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", cfg, "--grid", '{"theta": [0.5, 0.8, 0.95, 1.2]}', "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert [r["verdict"] for r in rows] == ["Stable", "Stable", "Stable", "Unstable"]
    means = [float(r["mean_files"]) for r in rows[:3]]
    assert means[0] < means[1] < means[2]


def test_sample_csma_dump(tmp_path):
    cfg = write(tmp_path, multihop_doc(slots=1000))
    out = tmp_path / "samples"
    code = main(["sample-csma", "--config", cfg, "--weights", "0.5,1,0.2,0.3,0.1,0.4",
                 "--slots", "20000", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(open(out / "samples.csv")))
    assert abs(sum(float(r["exact"]) for r in rows) - 1.0) < 1e-12
    assert main(["sample-csma", "--config", cfg, "--weights", "1,2", "--out", str(out)]) == 2


def test_load_config_roundtrip(tmp_path):
    exp = load_config(write(tmp_path, stability_doc(theta=0.6)))
    assert exp.sim.scheduler == "centralized"
