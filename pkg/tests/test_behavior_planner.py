#!/usr/bin/env python3
"""
Tests for the lane-switching state machine and the trajectory publisher.
"""

import itertools
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))
from racestack.behavior_planner import (  # noqa: E402
    Decision,
    DecisionKind,
    Mode,
    PlannerConfig,
    PlannerState,
    Thresholds,
    brake_reference,
    decide,
    effective_lane,
    parse_decision,
    publish_trajectory,
)
from racestack.perception import LaneOccupancy  # noqa: E402
from racestack.track_geometry import LaneId, build_base_lanes, generate_oval  # noqa: E402
from racestack.utils.common import GeometryError, TraceFormatError  # noqa: E402

SCENARIO_DIR = Path(__file__).parent.parent / "config" / "scenarios"
THRESHOLDS = Thresholds(theta_o=9, theta_e=3)
INNER, CENTER, OUTER = 0, 1, 2


@pytest.fixture(scope="module")
def lanes():
    return build_base_lanes(generate_oval(300.0, 100.0, 15.0, 2.0))


def expected_decision(mode, lane, counts, prev, streak_before, theta_e, theta_o):
    """Rule table written out lane by lane."""
    clear = counts[0] < theta_e and counts[1] < theta_e and counts[2] < theta_e
    streak = streak_before + 1 if clear else 0
    if mode == Mode.LANE_FOLLOW and streak >= 5:
        return "EngageOptimized", lane, Mode.OPTIMIZED

    if counts[lane] <= theta_o:
        return "Stay", lane, mode

    def free(target):
        return counts[target] < theta_e and prev[target] < theta_e

    if lane == OUTER:
        options = [CENTER, INNER]
    elif lane == INNER:
        options = [CENTER, OUTER]
    elif counts[INNER] <= counts[OUTER]:
        options = [INNER, OUTER]
    else:
        options = [OUTER, INNER]

    for target in options:
        crossing = {lane, target} == {INNER, OUTER}
        if free(target) and (not crossing or counts[CENTER] < theta_o):
            return f"Switch({lane}->{target})", target, Mode.LANE_FOLLOW
    return "Brake", lane, Mode.LANE_FOLLOW


@pytest.mark.quick
def test_decide_matches_rule_table():
    """Exhaustive check on threshold-boundary counts."""
    print("=== Testing Planner Rule Table ===")
    te, to = THRESHOLDS.theta_e, THRESHOLDS.theta_o
    levels = (0, te - 1, te, to, to + 1)
    checked = 0
    for counts in itertools.product(levels, repeat=3):
        for prev_level in (0, to + 1):
            prev = (prev_level,) * 3
            occ = LaneOccupancy(counts=counts, prev=prev, stamp=1.0)
            for lane in (INNER, CENTER, OUTER):
                for mode in Mode:
                    for streak_before in (0, 4):
                        state = PlannerState(mode=mode, current_lane=lane, clear_streak=streak_before)
                        new_state, decision = decide(state, occ, THRESHOLDS, 20.0)
                        text, new_lane, new_mode = expected_decision(
                            mode, lane, counts, prev, streak_before, te, to)
                        context = f"counts={counts} prev={prev} lane={lane} mode={mode.value} streak={streak_before}"
                        assert str(decision) == text, context
                        assert new_state.current_lane == new_lane, context
                        assert new_state.mode == new_mode, context
                        checked += 1
    print(f"✅ {checked} planner cases match the rule table")


@pytest.mark.quick
def test_switch_and_engage_open_pause():
    config = PlannerConfig()
    occ = LaneOccupancy(counts=(0, 0, 20), prev=(0, 0, 0), stamp=3.0)
    state, decision = decide(PlannerState(current_lane=OUTER), occ, THRESHOLDS, 3.0, config)
    assert str(decision) == "Switch(2->1)"
    assert decision.starts_pause
    assert state.pause_until == pytest.approx(13.0)
    assert state.last_decision == decision


@pytest.mark.quick
def test_pause_suppresses_decisions():
    occupied = LaneOccupancy(counts=(0, 0, 20), prev=(0, 0, 0), stamp=5.0)
    state = PlannerState(current_lane=OUTER, pause_until=10.0)

    new_state, decision = decide(state, occupied, THRESHOLDS, 5.0)
    assert decision.kind == DecisionKind.STAY
    assert new_state.current_lane == OUTER

    braking = PlannerConfig(brake_during_pause=True)
    _, decision = decide(state, occupied, THRESHOLDS, 5.0, braking)
    assert decision.kind == DecisionKind.BRAKE_DURING_PAUSE
    assert decision.is_braking

    # The window is half-open: at pause_until decisions resume.
    _, decision = decide(state, occupied, THRESHOLDS, 10.0)
    assert str(decision) == "Switch(2->1)"


@pytest.mark.quick
def test_engage_after_five_clear_scans():
    clear = LaneOccupancy(counts=(0, 1, 2), prev=(0, 0, 0), stamp=0.0)
    state = PlannerState(current_lane=OUTER)
    decisions = []
    for k in range(1, 6):
        state, decision = decide(state, clear, THRESHOLDS, 0.1 * k)
        decisions.append(str(decision))

    assert decisions == ["Stay", "Stay", "Stay", "Stay", "EngageOptimized"]
    assert state.mode == Mode.OPTIMIZED
    assert state.pause_until == pytest.approx(10.5)
    print("✅ Optimized raceline engaged on the fifth clear scan")


@pytest.mark.quick
def test_clear_streak_counts_during_pause():
    clear = LaneOccupancy(counts=(0, 0, 0), prev=(0, 0, 0), stamp=0.0)
    state = PlannerState(current_lane=CENTER, pause_until=1.0)
    for k in range(1, 6):
        state, decision = decide(state, clear, THRESHOLDS, 0.1 * k)
        assert decision.kind == DecisionKind.STAY
    assert state.clear_streak == 5

    state, decision = decide(state, clear, THRESHOLDS, 1.0)
    assert decision.kind == DecisionKind.ENGAGE_OPTIMIZED


@pytest.mark.quick
def test_busy_scan_resets_streak():
    clear = LaneOccupancy(counts=(0, 0, 0), prev=(0, 0, 0), stamp=0.0)
    busy = LaneOccupancy(counts=(0, 0, 5), prev=(0, 0, 0), stamp=0.0)
    state = PlannerState(current_lane=OUTER, clear_streak=4)
    state, decision = decide(state, busy, THRESHOLDS, 1.0)
    assert state.clear_streak == 0
    state, decision = decide(state, clear, THRESHOLDS, 1.1)
    assert state.clear_streak == 1
    assert decision.kind == DecisionKind.STAY


@pytest.mark.quick
def test_switching_disabled_only_brakes():
    config = PlannerConfig(switching_enabled=False)
    occupied = LaneOccupancy(counts=(0, 0, 20), prev=(0, 0, 0), stamp=1.0)
    clear = LaneOccupancy(counts=(0, 0, 0), prev=(0, 0, 0), stamp=1.0)

    _, decision = decide(PlannerState(current_lane=OUTER), occupied, THRESHOLDS, 1.0, config)
    assert decision.kind == DecisionKind.BRAKE

    state = PlannerState(current_lane=OUTER, clear_streak=10)
    state, decision = decide(state, clear, THRESHOLDS, 1.0, config)
    assert decision.kind == DecisionKind.STAY
    assert state.mode == Mode.LANE_FOLLOW


@pytest.mark.quick
def test_decision_strings_round_trip():
    for text in ("Stay", "Brake", "BrakeDuringPause", "EngageOptimized", "Switch(0->2)"):
        assert str(parse_decision(text)) == text
    with pytest.raises(TraceFormatError):
        parse_decision("Overtake")
    with pytest.raises(TraceFormatError):
        parse_decision("Switch")
    with pytest.raises(GeometryError):
        Decision(DecisionKind.SWITCH, 1, 1)


@pytest.mark.quick
def test_invalid_thresholds():
    with pytest.raises(GeometryError):
        Thresholds(theta_o=3, theta_e=9)
    with pytest.raises(GeometryError):
        Thresholds(theta_o=9, theta_e=0)


@pytest.mark.quick
def test_effective_lane(lanes):
    assert effective_lane((0.0, -97.5), lanes) == INNER
    assert effective_lane((0.0, -100.2), lanes) == CENTER
    assert effective_lane((0.0, -104.0), lanes) == OUTER


@pytest.mark.quick
def test_publish_trajectory_covers_horizon(lanes):
    lane = lanes[LaneId.CENTER]
    start = 100
    segment = publish_trajectory(lane, lane.xy[start], 90.0)

    assert segment.indices[0] == start + 1
    assert np.all(np.diff(segment.indices) == 1)
    arc_from_projection = lane.segment_lengths[start] + segment.arc_lengths[-1]
    assert arc_from_projection >= 90.0 - 1e-9
    assert arc_from_projection - np.linalg.norm(segment.xy[-1] - segment.xy[-2]) < 90.0
    assert segment.lane_id == LaneId.CENTER


@pytest.mark.quick
def test_publish_trajectory_wraps_seam(lanes):
    lane = lanes[LaneId.OUTER]
    segment = publish_trajectory(lane, lane.xy[lane.n - 3], 20.0)
    assert segment.indices[0] == lane.n - 2
    assert 0 in segment.indices
    steps = np.linalg.norm(np.diff(segment.xy, axis=0), axis=1)
    assert np.all(steps < 3.0)

    with pytest.raises(GeometryError):
        publish_trajectory(lane, lane.xy[0], 0.0)


@pytest.mark.quick
def test_brake_reference(lanes):
    segment = publish_trajectory(lanes[LaneId.CENTER], lanes[LaneId.CENTER].xy[0], 30.0)
    for v, expected in ((50.0, 30.0), (20.0, 15.0), (10.0, 10.0)):
        flat = brake_reference(replace(segment, target_speed=np.full(len(segment), v)))
        assert np.allclose(flat.target_speed, expected)
    assert math.isclose(brake_reference(segment, 1.0, 0.0).target_speed[0], segment.target_speed[0])


@pytest.mark.heavy
def test_pause_spacing_over_seeded_races():
    """Weave races: spaced pause starters, and braking while a pause runs."""
    from racestack.race_sim import EGO, build_world, run_race, verify_trace
    from racestack.scenario import load_scenario

    print("\n=== Testing Pause Spacing Over Seeds ===")
    base = load_scenario(SCENARIO_DIR / "weave.json")
    world = build_world(base)
    brakes_in_pause = 0
    for seed in range(20):
        scenario = base.with_overrides(seed=seed)
        result, trace = run_race(scenario, world)
        frame = trace.to_frame()
        violations = verify_trace(frame, scenario.thresholds, scenario.planner.pause_s)
        assert violations == [], f"seed {seed}: {violations}"

        decisions = [parse_decision(text) for text in frame.loc[
            (frame["agent"] == EGO) & (frame["decision"] != ""), "decision"]]
        kinds = [d.kind for d in decisions]
        assert kinds.count(DecisionKind.SWITCH) >= 1, f"seed {seed}: no switch"
        assert sum(d.starts_pause for d in decisions) >= 2, f"seed {seed}: {kinds}"
        assert result.finished
        brakes_in_pause += kinds.count(DecisionKind.BRAKE_DURING_PAUSE)

    assert brakes_in_pause > 0
    print(f"✅ 20 seeded races respect the pause window ({brakes_in_pause} pause brakes)")
