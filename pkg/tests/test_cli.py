#!/usr/bin/env python3
"""
End-to-end tests for the racestack command line.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))
from racestack.cli import (  # noqa: E402
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RACE_FAILED,
    main,
)
from racestack.race_sim import read_trace  # noqa: E402
from racestack.track_geometry import LaneId, read_lane_set  # noqa: E402

SCENARIO_DIR = Path(__file__).parent.parent / "config" / "scenarios"


@pytest.fixture(autouse=True)
def isolated_output(tmp_path, monkeypatch):
    """Keep logs and default outputs inside the test's temp dir."""
    monkeypatch.setenv("RACESTACK_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("RACESTACK_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("RACESTACK_PROGRESS", "false")


@pytest.fixture
def short_scenario(tmp_path):
    path = tmp_path / "short.json"
    path.write_text(json.dumps({"npcs": [], "race": {"max_time": 2.0}}))
    return path


@pytest.mark.quick
def test_build_lanes(tmp_path):
    print("=== Testing build-lanes ===")
    out = tmp_path / "lanes"
    assert main(["build-lanes", "--out", str(out)]) == EXIT_OK

    for name in ("inner.csv", "center.csv", "outer.csv", "optimized.csv", "raceline.json"):
        assert (out / name).exists(), name
    lanes = read_lane_set(out)
    assert set(lanes) == set(LaneId)
    summary = json.loads((out / "raceline.json").read_text())
    assert summary["raceline"]["final_cost"] <= summary["raceline"]["initial_cost"]
    print("✅ Four lanes and the raceline summary written")


@pytest.mark.quick
def test_build_lanes_zero_alpha_is_center(tmp_path):
    out = tmp_path / "lanes"
    assert main(["build-lanes", "--alpha-max", "0", "--out", str(out)]) == EXIT_OK
    lanes = read_lane_set(out)
    assert np.allclose(lanes[LaneId.OPTIMIZED].xy, lanes[LaneId.CENTER].xy, atol=1e-9)


@pytest.mark.quick
def test_build_lanes_rejects_bad_track(tmp_path):
    assert main(["build-lanes", "--radius", "-1", "--out", str(tmp_path / "lanes")]) == EXIT_CONFIG_ERROR

    bad_csv = tmp_path / "track.csv"
    bad_csv.write_text("x,y\n1,2\n")
    assert main(["build-lanes", "--track", str(bad_csv), "--out", str(tmp_path / "lanes")]) == EXIT_CONFIG_ERROR


@pytest.mark.quick
def test_race_rejects_unknown_keys(tmp_path, capsys):
    path = tmp_path / "typo.json"
    path.write_text(json.dumps({"thresholds": {"theta_0": 9}}))
    assert main(["race", str(path), "--out", str(tmp_path / "run")]) == EXIT_CONFIG_ERROR
    assert "theta_0" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


@pytest.mark.quick
def test_validate_only(tmp_path, capsys):
    assert main(["race", str(SCENARIO_DIR / "default.json"), "--validate-only"]) == EXIT_OK
    assert "Scenario is valid" in capsys.readouterr().out

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"ego": {"start_arc": 50.0}, "npcs": [
        {"lane": "outer", "target_speed": 20.0, "start_arc": 50.0}]}))
    assert main(["race", str(bad), "--validate-only"]) == EXIT_CONFIG_ERROR
    assert "not ahead of the ego" in capsys.readouterr().out


@pytest.mark.quick
def test_short_race_writes_outputs(tmp_path, short_scenario):
    """A 2 s race times out (exit 1) but still leaves report, trace and lanes."""
    print("=== Testing race Command ===")
    out = tmp_path / "run"
    code = main(["race", str(short_scenario), "--out", str(out), "--no-progress", "--svg"])
    assert code == EXIT_RACE_FAILED

    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "timeout"
    assert report["scenario"] == "short"
    assert report["result"]["finished"] is False
    assert report["config"]["race"]["max_time"] == 2.0
    assert report["timings"]["mpc"]["count"] == 100
    assert (out / "trace.csv").exists()
    assert (out / "race.svg").read_text().lstrip().startswith("<?xml")
    assert set(read_lane_set(out / "lanes")) == set(LaneId)

    structured = list((tmp_path / "logs" / "structured").glob("race_events_*.jsonl"))
    assert structured
    print("✅ Report, trace, lanes and SVG written")


@pytest.mark.quick
def test_race_is_reproducible(tmp_path, short_scenario):
    for name in ("a", "b"):
        main(["race", str(short_scenario), "--out", str(tmp_path / name), "--no-progress"])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


@pytest.mark.quick
def test_race_default_output_dir(tmp_path, short_scenario):
    main(["race", str(short_scenario), "--no-progress"])
    assert (tmp_path / "runs" / "short" / "report.json").exists()


@pytest.mark.quick
def test_plot_and_verify_trace(tmp_path, short_scenario, capsys):
    out = tmp_path / "run"
    main(["race", str(short_scenario), "--out", str(out), "--no-progress"])

    svg = tmp_path / "plot.svg"
    assert main(["plot", str(out / "trace.csv"), str(out / "lanes"), str(svg)]) == EXIT_OK
    assert svg.exists()

    assert main(["verify-trace", str(out / "trace.csv")]) == EXIT_OK
    assert "satisfies the planner invariants" in capsys.readouterr().out


@pytest.mark.quick
def test_summarize_trace_script(tmp_path, short_scenario):
    sys.path.insert(0, str(Path(__file__).parent.parent / "scripts"))
    from summarize_trace import agent_summary, decision_counts, lane_time

    out = tmp_path / "run"
    main(["race", str(short_scenario), "--out", str(out), "--no-progress"])
    frame = read_trace(out / "trace.csv")

    summary = agent_summary(frame)
    assert list(summary.index) == ["ego"]
    assert summary.loc["ego", "rows"] == 200
    assert summary.loc["ego", "distance_m"] > 50.0

    counts = decision_counts(frame)
    assert counts["EngageOptimized"] == 1
    assert counts.sum() == 19
    assert lane_time(frame).sum() == pytest.approx(2.0)


@pytest.mark.quick
def test_plot_rejects_empty_trace(tmp_path):
    main(["build-lanes", "--out", str(tmp_path / "lanes")])
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["plot", str(empty), str(tmp_path / "lanes"), str(tmp_path / "x.svg")]) == EXIT_CONFIG_ERROR
    assert main(["plot", str(tmp_path / "missing.csv"), str(tmp_path / "lanes"),
                 str(tmp_path / "x.svg")]) == EXIT_CONFIG_ERROR
    assert not (tmp_path / "x.svg").exists()


@pytest.mark.quick
def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        main(["drive"])


@pytest.mark.heavy
def test_default_scenario_finishes_clean(tmp_path):
    """Full lap against five NPCs: finished, contact free, exit 0."""
    out = tmp_path / "default"
    code = main(["race", str(SCENARIO_DIR / "default.json"), "--out", str(out), "--no-progress", "--baseline"])
    assert code == EXIT_OK

    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "finished"
    assert report["result"]["collision_count"] == 0
    assert report["baseline"]["improvement_pct"] > 0.0
    assert main(["verify-trace", str(out / "trace.csv")]) == EXIT_OK
    print(f"✅ Default race {report['result']['total_time']:.2f}s, "
          f"{report['baseline']['improvement_pct']:.1f}% faster than lane following")
