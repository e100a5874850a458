#!/usr/bin/env python3
"""
Tests for the race loop: collisions, progress, NPC driving, scheduling,
determinism and full-lap outcomes.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))
import racestack.race_sim as race_sim  # noqa: E402
from racestack.behavior_planner import Thresholds, parse_decision  # noqa: E402
from racestack.lidar_sim import OrientedBox  # noqa: E402
from racestack.mpc_control import VehicleState  # noqa: E402
from racestack.race_sim import (  # noqa: E402
    EGO,
    TRACE_COLUMNS,
    NpcDriverConfig,
    boxes_overlap,
    build_world,
    check_collisions,
    check_trace_frame,
    progress,
    progress_from,
    read_trace,
    run_baseline,
    run_race,
    step_npc,
    verify_trace,
)
from racestack.scenario import NpcSpec, Scenario, load_scenario  # noqa: E402
from racestack.track_geometry import Lane, LaneId, arc_position, lane_ideal_time, pose_at_arc, project  # noqa: E402
from racestack.utils.common import SimulationDivergedError, TraceFormatError  # noqa: E402

REPO_ROOT = Path(__file__).parent.parent


def make_scenario(**sections) -> Scenario:
    return Scenario.from_dict(sections, name="test")


@pytest.fixture(scope="module")
def world():
    return build_world(make_scenario(npcs=[]))


def _drive_npc(world, spec: NpcSpec, seconds: float, dt: float = 0.01):
    """Run one NPC alone; returns (time, lateral to its current lane) samples."""
    driver = NpcDriverConfig()
    pose = pose_at_arc(world.lanes[spec.lane], world.track, spec.start_arc)
    state = VehicleState(pose.x, pose.y, pose.yaw, spec.target_speed)
    samples = []
    for i in range(int(round(seconds / dt))):
        t = i * dt
        lane = world.lanes[spec.lane_at(t)]
        samples.append((t, project(lane, (state.x, state.y)).lateral))
        state = step_npc(state, lane, spec.target_speed, dt, driver)
    return np.array(samples), state


@pytest.mark.quick
def test_box_overlap_separating_axis():
    a = OrientedBox(0.0, 0.0, 0.0)
    assert boxes_overlap(a, OrientedBox(0.0, 0.0, 0.0))
    assert not boxes_overlap(a, OrientedBox(10.0, 0.0, 0.0))
    assert not boxes_overlap(a, OrientedBox(5.01, 0.0, 0.0))
    assert not boxes_overlap(a, OrientedBox(5.0, 0.0, 0.0))
    assert boxes_overlap(a, OrientedBox(4.99, 0.0, 0.0))
    assert boxes_overlap(a, OrientedBox(3.0, 1.0, math.pi / 4))
    assert not boxes_overlap(a, OrientedBox(0.0, 1.91, 0.0))


@pytest.mark.quick
def test_collisions_are_edge_triggered():
    ego = OrientedBox(0.0, 0.0, 0.0)
    touching = [OrientedBox(3.0, 0.0, 0.0), OrientedBox(50.0, 0.0, 0.0)]
    apart = [OrientedBox(30.0, 0.0, 0.0), OrientedBox(50.0, 0.0, 0.0)]

    events, contacts = check_collisions(ego, touching, frozenset(), 1.0)
    assert [e.npc_index for e in events] == [0]
    assert events[0].penalty == 5.0

    events, contacts = check_collisions(ego, touching, contacts, 1.01)
    assert events == []

    events, contacts = check_collisions(ego, apart, contacts, 1.02)
    assert events == [] and contacts == frozenset()

    events, contacts = check_collisions(ego, touching, contacts, 1.03, penalty=2.0)
    assert [(e.npc_index, e.penalty) for e in events] == [(0, 2.0)]


@pytest.mark.quick
def test_progress_along_centerline(world):
    track = world.track
    first = progress(track.xy[10], track)
    again = progress(track.xy[10], track, first.arc)
    assert again.arc == pytest.approx(first.arc)

    later = progress(track.xy[30], track, first.arc)
    assert later.arc - first.arc == pytest.approx(40.0, abs=0.5)
    assert not later.off_track


@pytest.mark.quick
def test_progress_unwraps_at_seam(world):
    track = world.track
    before = progress(track.xy[track.n - 2], track)
    after = progress(track.xy[2], track, before.arc)
    assert after.arc > track.perimeter
    assert after.arc - before.arc == pytest.approx(4 * track.spacing, abs=0.1)


@pytest.mark.quick
def test_start_progress_is_measured_from_the_ego(world):
    """NPC arcs start within one lap ahead of the ego, also across the seam."""
    print("=== Testing Start Progress ===")
    track = world.track
    center = world.lanes[LaneId.CENTER]
    npc_xy = pose_at_arc(center, track, 50.0)[:2]
    expected, _ = arc_position(track, npc_xy)

    assert progress(track.xy[0], track).arc == 0.0
    assert progress_from(npc_xy, track, 0.0).arc == pytest.approx(expected, abs=1e-9)

    origin = progress(track.xy[track.n - 10], track).arc
    ahead = progress_from(npc_xy, track, origin)
    assert origin < ahead.arc < origin + track.perimeter
    assert ahead.arc - origin == pytest.approx(expected + 10 * track.spacing, abs=0.1)

    behind = progress_from(track.xy[track.n - 12], track, origin)
    assert behind.arc - origin == pytest.approx(track.perimeter - 2 * track.spacing, abs=0.1)
    print("✅ Start arcs relative to the ego")


@pytest.mark.quick
def test_progress_flags_off_track(world):
    far = progress((1000.0, 1000.0), world.track)
    assert far.off_track
    assert far.distance > 30.0


@pytest.mark.quick
def test_npc_holds_straight_lane():
    x = np.arange(-100.0, 3000.0, 2.0)
    lane = Lane.from_xy(LaneId.OUTER, np.column_stack([x, np.zeros_like(x)]), target_speed=30.0)
    state = VehicleState(0.0, 0.0, 0.0, 30.0)
    worst = 0.0
    for _ in range(1000):
        state = step_npc(state, lane, 30.0, 0.01)
        worst = max(worst, abs(project(lane, (state.x, state.y)).lateral))
    assert worst < 0.1
    assert state.v == pytest.approx(30.0, abs=1e-6)


@pytest.mark.quick
def test_npc_stays_in_lane_through_turn(world):
    print("=== Testing NPC Pure Pursuit ===")
    samples, _ = _drive_npc(world, NpcSpec(LaneId.INNER, 30.0, 0.0), 15.0)
    worst = np.abs(samples[:, 1]).max()
    assert worst < 1.25
    print(f"✅ NPC lateral deviation through the turn: {worst:.3f} m")


@pytest.mark.quick
def test_scripted_lane_change(world):
    spec = NpcSpec(LaneId.OUTER, 30.0, 0.0, lane_changes=((20.0, LaneId.CENTER),))
    assert spec.lane_at(19.99) == LaneId.OUTER
    assert spec.lane_at(20.0) == LaneId.CENTER

    samples, _ = _drive_npc(world, spec, 26.5)
    settled = samples[samples[:, 0] >= 26.0]
    assert np.all(np.abs(settled[:, 1]) < 0.3)


@pytest.mark.quick
def test_short_race_schedule(world):
    """Tick bookkeeping over a 2 s race with no NPCs."""
    print("\n=== Testing Race Schedule ===")
    scenario = make_scenario(npcs=[], race={"max_time": 2.0})
    result, trace = run_race(scenario, world)
    frame = trace.to_frame()

    rates, horizon = scenario.rates, scenario.race.max_time
    # Ticks cover t = 0 .. T - dt; control fires at t = 0, LiDAR first at 1/rate.
    ticks = math.floor(horizon * rates.physics)
    solves = math.floor(horizon * rates.control)
    scans = math.floor(horizon * rates.lidar) - 1

    assert list(frame.columns) == TRACE_COLUMNS
    ego = frame[frame["agent"] == EGO]
    assert (ticks, solves, scans) == (200, 100, 19)
    assert len(ego) == ticks
    assert not result.finished
    assert result.raw_lap_time == pytest.approx(2.0)
    assert (ego["decision"] != "").sum() == scans
    assert ego["cost"].notna().sum() == solves
    assert len(trace.timings["perception_ms"]) == scans
    assert len(trace.timings["mpc_ms"]) == solves
    assert ego["t"].max() == pytest.approx(horizon - rates.dt)

    decided = ego[ego["decision"] != ""]
    first_action = decided[decided["decision"] != "Stay"].iloc[0]
    assert first_action["decision"] == "EngageOptimized"
    assert first_action["t"] == pytest.approx(0.5)
    assert (ego[ego["t"] > 0.5]["lane"] == int(LaneId.OPTIMIZED)).all()
    print("✅ 200 ticks, 19 scans, 100 MPC solves, engagement at t=0.5 s")


@pytest.mark.quick
def test_runs_are_deterministic(world):
    scenario = make_scenario(
        npcs=[{"lane": "outer", "target_speed": 25.0, "start_arc": 40.0}],
        race={"max_time": 2.0},
    )
    first_result, first = run_race(scenario, world)
    second_result, second = run_race(scenario, world)
    pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())
    assert first_result.to_dict() == second_result.to_dict()


@pytest.mark.quick
def test_baseline_never_switches(world):
    scenario = make_scenario(npcs=[], race={"max_time": 1.0})
    _, trace = run_baseline(scenario, world)
    decisions = set(trace.to_frame()["decision"]) - {""}
    assert decisions == {"Stay"}


@pytest.mark.quick
def test_divergence_keeps_partial_trace(world, monkeypatch):
    real_dynamics = race_sim.dynamics
    calls = {"n": 0}

    def exploding(state, command, dt, config):
        calls["n"] += 1
        if calls["n"] > 20:
            return VehicleState(math.nan, state.y, state.yaw, state.v)
        return real_dynamics(state, command, dt, config)

    monkeypatch.setattr(race_sim, "dynamics", exploding)
    with pytest.raises(SimulationDivergedError) as info:
        run_race(make_scenario(npcs=[], race={"max_time": 2.0}), world)
    assert info.value.trace is not None
    assert len(info.value.trace) == 21
    assert info.value.time_s == pytest.approx(0.21)


@pytest.mark.quick
def test_trace_csv_checks(tmp_path):
    frame = pd.DataFrame([{c: 0 for c in TRACE_COLUMNS}])
    frame["agent"] = EGO
    frame["decision"] = np.nan
    path = tmp_path / "trace.csv"
    frame.to_csv(path, index=False)
    assert read_trace(path)["decision"].tolist() == [""]

    frame.drop(columns=["cost"]).to_csv(path, index=False)
    with pytest.raises(TraceFormatError, match="cost"):
        read_trace(path)

    pd.DataFrame(columns=TRACE_COLUMNS).to_csv(path, index=False)
    with pytest.raises(TraceFormatError):
        read_trace(path)
    with pytest.raises(TraceFormatError):
        check_trace_frame(pd.DataFrame(columns=TRACE_COLUMNS))


def _decision_rows(entries):
    rows = []
    for t, decision, counts in entries:
        rows.append({"t": t, "agent": EGO, "x": 0.0, "y": 0.0, "yaw": 0.0, "v": 30.0, "lane": 1,
                     "decision": decision, "l0": counts[0], "l1": counts[1], "l2": counts[2],
                     "accel": 0.0, "delta_cmd": 0.0, "cost": 0.0})
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


@pytest.mark.quick
def test_verify_trace_flags_violations():
    thresholds = Thresholds()
    clean = _decision_rows([
        (1.0, "Stay", (0, 0, 20)),
        (1.1, "Switch(2->1)", (0, 0, 20)),
        (11.1, "Switch(1->0)", (0, 12, 0)),
    ])
    assert verify_trace(clean, thresholds) == []

    too_soon = _decision_rows([
        (1.1, "Switch(2->1)", (0, 0, 20)),
        (5.0, "Switch(1->0)", (0, 12, 0)),
    ])
    assert any("after the previous pause" in v for v in verify_trace(too_soon, thresholds))

    busy_target = _decision_rows([
        (1.0, "Stay", (0, 5, 20)),
        (1.1, "Switch(2->1)", (0, 0, 20)),
    ])
    assert any("into a lane" in v for v in verify_trace(busy_target, thresholds))

    crossing = _decision_rows([(1.1, "Switch(2->0)", (0, 9, 20))])
    assert any("center lane" in v for v in verify_trace(crossing, thresholds))

    engage = _decision_rows([(0.5, "EngageOptimized", (0, 4, 0))])
    assert verify_trace(engage, thresholds) == ["t=0.50: EngageOptimized with counts (0, 4, 0)"]


@pytest.mark.heavy
def test_clear_track_lap_time(world):
    """Alone on the raceline, the lap time is close to the profile's ideal time."""
    print("\n=== Testing Clear-Track Lap ===")
    scenario = make_scenario(npcs=[], ego={"lane": "optimized", "start_arc": 0.0, "initial_speed": 50.0})
    result, trace = run_race(scenario, world)
    ideal = lane_ideal_time(world.lanes[LaneId.OPTIMIZED])

    assert result.finished
    assert result.collision_count == 0
    assert result.raw_lap_time == pytest.approx(ideal, rel=0.02)
    decisions = set(trace.to_frame()["decision"]) - {""}
    assert decisions == {"Stay"}
    print(f"✅ Lap {result.raw_lap_time:.2f}s vs ideal {ideal:.2f}s")


@pytest.mark.heavy
@pytest.mark.parametrize("k", [1, 2, 3])
def test_collision_penalties_add_up(world, k):
    npcs = [{"lane": "outer", "target_speed": 0.0, "start_arc": arc} for arc in (200.0, 500.0, 800.0)[:k]]
    scenario = make_scenario(npcs=npcs, planner={"switching_enabled": False})
    result, _ = run_race(scenario, world)

    assert result.finished
    assert result.collision_count == k
    assert result.total_time - result.raw_lap_time == pytest.approx(5.0 * k, abs=1e-9)


@pytest.mark.heavy
def test_faster_npc_is_not_overtaken(world):
    """An NPC that stays ahead all lap never counts, wherever the ego starts."""
    npc = {"lane": "inner", "target_speed": 48.0, "start_arc": 600.0}
    for ego_arc in (0.0, 10.0):
        scenario = make_scenario(
            npcs=[npc],
            ego={"lane": "outer", "start_arc": ego_arc, "initial_speed": 30.0},
            planner={"switching_enabled": False},
        )
        result, _ = run_race(scenario, world)
        assert result.finished
        assert result.overtakes_completed == 0, f"ego start {ego_arc} m"


@pytest.fixture(scope="module")
def default_race(world):
    scenario = load_scenario(REPO_ROOT / "config" / "scenarios" / "default.json")
    started = time.perf_counter()
    result, trace = run_race(scenario, world)
    runtime = time.perf_counter() - started
    return scenario, result, trace, runtime


@pytest.mark.heavy
def test_default_race_outcome(world, default_race):
    print("\n=== Testing Default Race ===")
    scenario, result, trace, _ = default_race
    baseline, _ = run_baseline(scenario, world)

    assert result.finished
    assert result.collision_count == 0
    assert result.overtakes_completed == 5
    assert verify_trace(trace.to_frame(), scenario.thresholds, scenario.planner.pause_s) == []
    assert result.total_time <= 0.97 * baseline.total_time
    print(f"✅ Lap {result.total_time:.2f}s, baseline {baseline.total_time:.2f}s")


@pytest.mark.heavy
def test_default_race_lane_shifts(default_race):
    """Leave the blocked Outer lane first, finish on the raceline."""
    scenario, _, trace, _ = default_race
    frame = trace.to_frame()
    decided = frame[(frame["agent"] == EGO) & (frame["decision"] != "")]
    shifts = [(row.t, row.decision) for row in decided.itertuples(index=False)
              if parse_decision(row.decision).starts_pause]

    assert len(shifts) >= 2
    assert shifts[0][1] == "Switch(2->1)"
    assert shifts[-1][1] == "EngageOptimized"
    gaps = np.diff([t for t, _ in shifts])
    assert np.all(gaps >= scenario.planner.pause_s - 1e-9)
    print(f"✅ Lane shifts: {shifts}")


@pytest.mark.heavy
def test_default_race_speed_regime(world, default_race):
    _, result, _, _ = default_race
    optimized = world.lanes[LaneId.OPTIMIZED]
    ideal_mean = optimized.total_length / lane_ideal_time(optimized)

    assert result.peak_speed > 45.0
    assert result.mean_speed > 0.8 * ideal_mean
    print(f"✅ Peak {result.peak_speed:.1f} m/s, mean {result.mean_speed:.1f} m/s (ideal {ideal_mean:.1f})")


@pytest.mark.heavy
def test_default_race_runtime(default_race):
    runtime = default_race[3]
    assert runtime < 60.0
    print(f"✅ Default race simulated in {runtime:.1f}s")
