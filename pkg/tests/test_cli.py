"""Headless entry point: artifacts, exit codes, reproducibility."""

import json
import os

import pytest

from gpa.cli import main


def mini_file(tmp_path, **over):
    sc = {
        "name": "mini",
        "seed": 0,
        "world": {"aabb": [[0, -3, 0], [10, 3, 2.5]], "resolution": 0.1, "primitives": []},
        "start": {"position": [1.0, 0.0, 1.2], "yaw": 0.0},
        "goal": {"position": [8.0, 0.0, 1.2], "radius": 0.8},
        "intent": {"mode": "scripted", "speed": 1.2, "targets": [[8.0, 0.0, 1.2]]},
        "planner": {},
        "duration": 14.0,
    }
    sc.update(over)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(sc))
    return str(path)


def test_run_smoke_exit_zero_and_artifacts(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--scenario", mini_file(tmp_path), "--seed", "0",
                 "--out", str(out), "--dump-map"])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["goal_reached"] is True
    assert (out / "trajectory.csv").exists()
    assert (out / "events.jsonl").exists()
    assert (out / "map_snapshot.npz").exists()
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t,px,py,pz,vx,vy,vz")


def test_run_collision_exit_two(tmp_path):
    # ground truth blocks the spawn cell: collision fires on the first ticks
    path = mini_file(tmp_path, world={
        "aabb": [[0, -3, 0], [10, 3, 2.5]], "resolution": 0.1,
        "primitives": [{"type": "box", "min": [0.8, -0.2, 1.0], "max": [1.2, 0.2, 1.4]}],
    }, duration=2.0)
    code = main(["run", "--scenario", path, "--out", str(tmp_path / "o2")])
    assert code == 2


def test_malformed_scenario_exit_three(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--scenario", str(bad)]) == 3
    missing_field = tmp_path / "missing.json"
    missing_field.write_text(json.dumps({"name": "x"}))
    assert main(["run", "--scenario", str(missing_field)]) == 3


def test_seeded_runs_are_byte_identical(tmp_path):
    sc = mini_file(tmp_path)
    for d in ("a", "b"):
        assert main(["run", "--scenario", sc, "--seed", "7", "--out", str(tmp_path / d)]) == 0
    ma = (tmp_path / "a" / "metrics.json").read_bytes()
    mb = (tmp_path / "b" / "metrics.json").read_bytes()
    assert ma == mb
    ea = (tmp_path / "a" / "events.jsonl").read_bytes()
    eb = (tmp_path / "b" / "events.jsonl").read_bytes()
    assert ea == eb


def test_record_replay_round_trip(tmp_path):
    sc = mini_file(tmp_path)
    trace = tmp_path / "trace.jsonl"
    assert main(["run", "--scenario", sc, "--seed", "2", "--out", str(tmp_path / "rec"),
                 "--record-trace", str(trace)]) == 0
    assert main(["replay", "--scenario", sc, "--seed", "2", "--out", str(tmp_path / "rep"),
                 "--trace", str(trace)]) == 0
    assert (tmp_path / "rec" / "metrics.json").read_bytes() == \
        (tmp_path / "rep" / "metrics.json").read_bytes()


def test_no_pa_flag_zeroes_visibility(tmp_path):
    out = tmp_path / "npa"
    assert main(["run", "--scenario", mini_file(tmp_path), "--out", str(out), "--no-pa"]) == 0
    events = [json.loads(l) for l in (out / "events.jsonl").read_text().splitlines()]
    replans = [e for e in events if e["type"] == "replan"]
    assert replans
    assert all(e["penalties"].get("visibility", 0.0) == 0.0 for e in replans)


def test_bench_csv_plumbing(tmp_path, monkeypatch):
    import gpa.cli as cli

    def fake_runner(seed):
        return {"seed": seed, "goal_reached": True, "metric_a": 1.0 + seed,
                "note": "x"}

    monkeypatch.setitem(cli.SUITES, "speed", fake_runner)
    code = main(["bench", "--suite", "speed", "--repeats", "3", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "bench_speed.csv").read_text().splitlines()
    assert rows[0] == "seed,goal_reached,metric_a,note"
    assert len(rows) == 7  # header + 3 rows + mean/median/p90 aggregates
    labels = [r.split(",")[0] for r in rows[4:]]
    assert labels == ["mean", "median", "p90"]
    assert ",2.0," in rows[5]  # median of 1, 2, 3
