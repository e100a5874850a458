#!/usr/bin/env python3
"""
race_sim.py

Deterministic single-lap race between the ego stack and scripted NPCs.

One loop iteration is one physics tick at t = i / physics_rate:
  1. LiDAR tick (i > 0, every physics/lidar ticks): scan, perceive, update
     occupancy and run the planner.
  2. Control tick (every physics/control ticks, including i = 0): publish
     the trajectory segment of the active lane and solve the MPC.
  3. Record one trace row per agent.
  4. Check ego/NPC box overlap (edge-triggered penalties).
  5. Integrate every vehicle by one physics step.
  6. Update arc progress; the lap ends when the ego has covered one
     perimeter, with the finish time interpolated inside the tick.

Usage:
    scenario = load_scenario("config/scenarios/default.json")
    result, trace = run_race(scenario)
    trace.write_csv("runs/trace.csv")
"""

import logging
import math
import time
import uuid
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from racestack.behavior_planner import (
    DecisionKind,
    Mode,
    PlannerState,
    Thresholds,
    brake_reference,
    decide,
    effective_lane,
    parse_decision,
    publish_trajectory,
)
from racestack.lidar_sim import OrientedBox, scan
from racestack.mpc_control import ControlCommand, MpcConfig, VehicleState, dynamics, solve
from racestack.perception import LaneOccupancy, make_sparse, perceive, update_occupancy, SparseLaneSet
from racestack.raceline_opt import RacelineResult, build_lane_set
from racestack.scenario import Scenario
from racestack.track_geometry import (
    Lane,
    LaneId,
    Pose,
    TrackModel,
    arc_position,
    pose_at_arc,
    project,
    track_edges,
)
from racestack.utils.common import SimulationDivergedError, TraceFormatError, validate_dataframe
from racestack.utils.progress import progress_context

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "agent", "x", "y", "yaw", "v", "lane", "decision",
                 "l0", "l1", "l2", "accel", "delta_cmd", "cost"]
EGO = "ego"
OFF_TRACK_FACTOR = 2.0


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    npc_index: int
    penalty: float = 5.0


@dataclass(frozen=True)
class ArcProgress:
    arc: float
    distance: float
    off_track: bool = False


@dataclass(frozen=True)
class NpcDriverConfig:
    lookahead_min: float = 5.0
    lookahead_gain: float = 0.6
    speed_gain: float = 2.0
    delta_rate_max: float = 4.0
    vehicle: MpcConfig = field(default_factory=MpcConfig)

    @property
    def model(self) -> MpcConfig:
        return replace(self.vehicle, delta_rate_max=self.delta_rate_max)


@dataclass(eq=False)
class RaceWorld:
    """Everything about the track that stays fixed during a race."""

    track: TrackModel
    lanes: Dict[LaneId, Lane]
    raceline: RacelineResult
    walls: Tuple[np.ndarray, np.ndarray]
    sparse: SparseLaneSet


@dataclass
class RaceResult:
    raw_lap_time: float
    collisions: List[CollisionEvent]
    total_time: float
    overtakes_completed: int
    peak_speed: float
    mean_speed: float
    finished: bool
    max_tracking_error: float = 0.0

    @property
    def collision_count(self) -> int:
        return len(self.collisions)

    def to_dict(self) -> Dict:
        summary = asdict(self)
        summary["collision_count"] = self.collision_count
        return summary


@dataclass(eq=False)
class Trace:
    rows: List[Dict]
    timings: Dict[str, List[float]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRACE_COLUMNS)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.9g")
        return path


def read_trace(path: Union[str, Path]) -> pd.DataFrame:
    """Load a trace CSV, checking columns and that it has rows."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, keep_default_na=True)
    except pd.errors.EmptyDataError as e:
        raise TraceFormatError(f"{path}: empty trace") from e
    return check_trace_frame(frame, str(path))


def check_trace_frame(frame: pd.DataFrame, source: str = "trace") -> pd.DataFrame:
    is_valid, errors = validate_dataframe(frame, TRACE_COLUMNS, min_rows=1)
    if not is_valid:
        raise TraceFormatError(f"{source}: " + "; ".join(errors))
    frame = frame.copy()
    frame["decision"] = frame["decision"].fillna("").astype(str)
    return frame


def vehicle_box(state: VehicleState, length: float, width: float) -> OrientedBox:
    return OrientedBox(state.x, state.y, state.yaw, length, width)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test; touching boxes do not overlap."""
    corners_a, corners_b = a.corners(), b.corners()
    for axis in np.vstack([a.axes(), b.axes()]):
        pa = corners_a @ axis
        pb = corners_b @ axis
        if pa.max() <= pb.min() or pb.max() <= pa.min():
            return False
    return True


def check_collisions(ego_box: OrientedBox, npc_boxes: Sequence[OrientedBox],
                     contacts: FrozenSet[int], now: float,
                     penalty: float = 5.0) -> Tuple[List[CollisionEvent], FrozenSet[int]]:
    """
    New contact episodes at `now`.

    `contacts` holds the NPC indices overlapping on the previous check; an
    event is only emitted on the transition into overlap.
    """
    overlapping = frozenset(i for i, box in enumerate(npc_boxes) if boxes_overlap(ego_box, box))
    events = [CollisionEvent(now, i, penalty) for i in sorted(overlapping - contacts)]
    return events, overlapping


def npc_command(state: VehicleState, lane: Lane, target_speed: float,
                config: NpcDriverConfig = NpcDriverConfig()) -> ControlCommand:
    """Pure-pursuit steering and proportional speed control on `lane`."""
    n = lane.n
    index = project(lane, (state.x, state.y)).index
    lookahead = max(config.lookahead_min, config.lookahead_gain * state.v)
    covered = np.cumsum(np.roll(lane.segment_lengths, -index))
    ahead = min(int(np.searchsorted(covered, lookahead)) + 1, n - 1)
    tx, ty = lane.xy[(index + ahead) % n]
    dx, dy = tx - state.x, ty - state.y
    alpha = math.atan2(dy, dx) - state.yaw
    distance = max(math.hypot(dx, dy), 1e-6)
    wheelbase = config.vehicle.wheelbase
    delta = math.atan2(2.0 * wheelbase * math.sin(alpha), distance)
    return ControlCommand(config.speed_gain * (target_speed - state.v), delta)


def step_npc(state: VehicleState, lane: Lane, target_speed: float, dt: float,
             config: NpcDriverConfig = NpcDriverConfig(),
             command: Optional[ControlCommand] = None) -> VehicleState:
    """Advance an NPC one physics step; `command` reuses an already computed npc_command."""
    if command is None:
        command = npc_command(state, lane, target_speed, config)
    return dynamics(state, command, dt, config.model)


def progress(xy: Sequence[float], track: TrackModel, previous: Optional[float] = None) -> ArcProgress:
    """
    Centerline arc length of `xy`, unwrapped against `previous` so it never
    jumps at the seam. Projections farther than twice the track width are
    flagged off-track.
    """
    raw, distance = arc_position(track, xy)
    arc = raw
    if previous is not None:
        perimeter = track.perimeter
        arc = raw + perimeter * round((previous - raw) / perimeter)
    track_width = 2.0 * track.min_half_width
    return ArcProgress(float(arc), float(distance), distance >= OFF_TRACK_FACTOR * track_width)


def progress_from(xy: Sequence[float], track: TrackModel, origin: float) -> ArcProgress:
    """Initial progress of `xy`, placed within one lap ahead of the arc `origin`."""
    first = progress(xy, track)
    return replace(first, arc=float(origin + (first.arc - origin) % track.perimeter))


def build_world(scenario: Scenario) -> RaceWorld:
    track = scenario.track.build()
    lanes, raceline = build_lane_set(track, scenario.limits, scenario.raceline.problem(track))
    return RaceWorld(
        track=track,
        lanes=lanes,
        raceline=raceline,
        walls=track_edges(track),
        sparse=make_sparse(lanes, scenario.perception.stride),
    )


def _npc_driver(scenario: Scenario) -> NpcDriverConfig:
    race = scenario.race
    return NpcDriverConfig(
        lookahead_min=race.npc_lookahead_min,
        lookahead_gain=race.npc_lookahead_gain,
        speed_gain=race.npc_speed_gain,
        delta_rate_max=race.npc_delta_rate_max,
        vehicle=scenario.mpc,
    )


def _state_row(t: float, agent: str, state: VehicleState, lane: int, command: ControlCommand,
               decision: str = "", counts: Optional[Sequence[int]] = None,
               cost: float = math.nan) -> Dict:
    l0, l1, l2 = counts if counts is not None else (math.nan, math.nan, math.nan)
    return {
        "t": t, "agent": agent, "x": state.x, "y": state.y, "yaw": state.yaw, "v": state.v,
        "lane": int(lane), "decision": decision, "l0": l0, "l1": l1, "l2": l2,
        "accel": command.accel, "delta_cmd": command.delta_cmd, "cost": cost,
    }


def run_race(scenario: Scenario, world: Optional[RaceWorld] = None, show_progress: bool = False,
             run_logger=None, events=None, run_id: Optional[str] = None) -> Tuple[RaceResult, Trace]:
    """
    Race one lap.

    Args:
        scenario: Race configuration
        world: Prebuilt track and lanes (built from the scenario when omitted)
        show_progress: Display a lap-progress bar
        run_logger: Optional RaceLogger for checkpoints
        events: Optional StructuredLogger for decision/collision events
        run_id: Identifier used in structured events

    Returns:
        (RaceResult, Trace)

    Raises:
        SimulationDivergedError: a vehicle state became non-finite
    """
    world = world or build_world(scenario)
    run_id = run_id or uuid.uuid4().hex[:8]
    lanes, track = world.lanes, world.track
    rates, race, planner_cfg = scenario.rates, scenario.race, scenario.planner
    dt = rates.dt
    driver = _npc_driver(scenario)

    start_lane = lanes[scenario.ego.lane]
    pose = pose_at_arc(start_lane, track, scenario.ego.start_arc)
    ego = VehicleState(pose.x, pose.y, pose.yaw, scenario.ego.initial_speed, 0.0)
    if scenario.ego.lane == LaneId.OPTIMIZED:
        planner = PlannerState(mode=Mode.OPTIMIZED, current_lane=effective_lane(pose[:2], lanes))
    else:
        planner = PlannerState(mode=Mode.LANE_FOLLOW, current_lane=int(scenario.ego.lane))

    npcs: List[VehicleState] = []
    for spec in scenario.npcs:
        npc_pose = pose_at_arc(lanes[spec.lane], track, spec.start_arc)
        npcs.append(VehicleState(npc_pose.x, npc_pose.y, npc_pose.yaw, spec.target_speed, 0.0))

    occupancy = LaneOccupancy()
    command = ControlCommand()
    pending_segment = None
    contacts: FrozenSet[int] = frozenset()
    collisions: List[CollisionEvent] = []
    rows: List[Dict] = []
    timings: Dict[str, List[float]] = {"perception_ms": [], "mpc_ms": []}
    tracking_errors: List[float] = []
    speeds: List[float] = []
    off_track_reported = set()

    ego_progress = progress((ego.x, ego.y), track)
    start_arc = ego_progress.arc
    finish_arc = start_arc + track.perimeter
    # NPC arcs are measured from the ego start so overtakes compare within one lap.
    npc_progress = [progress_from((s.x, s.y), track, start_arc) for s in npcs]

    finished = False
    elapsed = 0.0
    n_ticks = int(math.ceil(race.max_time * rates.physics - 1e-9))
    if events:
        events.log_race_start(run_id, scenario.name, scenario.seed, npcs=len(npcs))

    with progress_context(desc=f"Racing {scenario.name}", disable=not show_progress) as bar:
        for i in range(n_ticks):
            t = i * dt
            decision_text, counts, cost = "", None, math.nan

            if i > 0 and i % rates.lidar_every == 0:
                ego_pose = Pose(ego.x, ego.y, ego.yaw)
                boxes = [vehicle_box(s, race.car_length, race.car_width) for s in npcs]
                cloud = scan(ego_pose, boxes, world.walls, scenario.lidar, stamp=t)
                started = time.perf_counter()
                counts = perceive(cloud, ego_pose, world.sparse, scenario.perception.crop)
                timings["perception_ms"].append((time.perf_counter() - started) * 1000.0)
                occupancy = update_occupancy(occupancy, counts, t)
                if planner.mode == Mode.OPTIMIZED:
                    planner = replace(planner, current_lane=effective_lane((ego.x, ego.y), lanes))
                planner, decision = decide(planner, occupancy, scenario.thresholds, t, planner_cfg)
                decision_text = str(decision)
                if decision.kind != DecisionKind.STAY:
                    logger.debug(f"t={t:.2f}s {decision_text} counts={counts}")
                    if events:
                        events.log_decision(run_id, t, decision_text, counts, mode=planner.mode.value)

            if i % rates.control_every == 0:
                active = lanes[LaneId.OPTIMIZED] if planner.mode == Mode.OPTIMIZED else lanes[planner.current_lane]
                segment = publish_trajectory(active, (ego.x, ego.y), planner_cfg.horizon_m)
                if planner.last_decision.is_braking:
                    segment = brake_reference(segment, planner_cfg.brake_factor, planner_cfg.v_min_follow)
                if race.inject_latency:
                    segment, pending_segment = pending_segment or segment, segment
                started = time.perf_counter()
                solution = solve(ego, segment, scenario.mpc, command)
                timings["mpc_ms"].append((time.perf_counter() - started) * 1000.0)
                command, cost = solution.command, solution.cost
                tracking_errors.append(abs(project(active, (ego.x, ego.y)).lateral))

            ego_lane = int(LaneId.OPTIMIZED) if planner.mode == Mode.OPTIMIZED else planner.current_lane
            rows.append(_state_row(t, EGO, ego, ego_lane, command, decision_text, counts, cost))
            npc_commands = []
            npc_lanes = []
            for k, (spec, state) in enumerate(zip(scenario.npcs, npcs)):
                lane_id = spec.lane_at(t)
                npc_cmd = npc_command(state, lanes[lane_id], spec.target_speed, driver)
                npc_commands.append(npc_cmd)
                npc_lanes.append(lanes[lane_id])
                rows.append(_state_row(t, f"npc{k}", state, lane_id, npc_cmd))
            speeds.append(ego.v)

            new_events, contacts = check_collisions(
                vehicle_box(ego, race.car_length, race.car_width),
                [vehicle_box(s, race.car_length, race.car_width) for s in npcs],
                contacts, t, race.collision_penalty,
            )
            for event in new_events:
                logger.info(f"Collision with npc{event.npc_index} at t={t:.2f}s (+{event.penalty:.1f}s)")
                if events:
                    events.log_collision(run_id, t, event.npc_index, event.penalty)
            collisions.extend(new_events)

            ego = dynamics(ego, command, dt, scenario.mpc)
            npcs = [step_npc(s, lane, spec.target_speed, dt, driver, c)
                    for s, lane, spec, c in zip(npcs, npc_lanes, scenario.npcs, npc_commands)]
            if not (ego.is_finite and all(s.is_finite for s in npcs)):
                if events:
                    events.log_error(run_id, "race", "non-finite vehicle state", sim_time=t + dt)
                raise SimulationDivergedError(
                    f"Non-finite vehicle state at t={t + dt:.2f}s",
                    trace=Trace(rows, timings), time_s=t + dt,
                )

            previous_arc = ego_progress.arc
            ego_progress = progress((ego.x, ego.y), track, previous_arc)
            npc_progress = [progress((s.x, s.y), track, p.arc) for s, p in zip(npcs, npc_progress)]
            for agent, p in [(EGO, ego_progress)] + [(f"npc{k}", p) for k, p in enumerate(npc_progress)]:
                if p.off_track and agent not in off_track_reported:
                    off_track_reported.add(agent)
                    logger.warning(f"{agent} is off track at t={t + dt:.2f}s ({p.distance:.1f} m from centerline)")

            elapsed = t + dt
            fraction = (ego_progress.arc - start_arc) / track.perimeter
            bar.update_to(fraction, postfix={"v": f"{ego.v:.1f}"})
            if run_logger and i % (10 * rates.physics) == 0:
                run_logger.log_checkpoint("race", fraction, sim_time=t)

            if ego_progress.arc >= finish_arc:
                step = ego_progress.arc - previous_arc
                elapsed = t + dt * ((finish_arc - previous_arc) / step if step > 0 else 1.0)
                finished = True
                rows.append(_state_row(t + dt, EGO, ego, ego_lane, command))
                for k, (spec, state) in enumerate(zip(scenario.npcs, npcs)):
                    rows.append(_state_row(t + dt, f"npc{k}", state, spec.lane_at(t + dt), npc_commands[k]))
                break

    if not finished:
        logger.warning(f"Race timed out after {elapsed:.1f}s of simulated time")

    overtakes = sum(1 for p in npc_progress if p.arc < ego_progress.arc)
    result = RaceResult(
        raw_lap_time=float(elapsed),
        collisions=collisions,
        total_time=float(elapsed) + sum(event.penalty for event in collisions),
        overtakes_completed=int(overtakes),
        peak_speed=float(max(speeds)) if speeds else 0.0,
        mean_speed=float(np.mean(speeds)) if speeds else 0.0,
        finished=finished,
        max_tracking_error=float(max(tracking_errors)) if tracking_errors else 0.0,
    )
    if events:
        events.log_race_end(run_id, result.total_time, "finished" if finished else "timeout",
                            collisions=result.collision_count, overtakes=overtakes)
    logger.info(
        f"Race {scenario.name}: raw {result.raw_lap_time:.3f}s, total {result.total_time:.3f}s, "
        f"{result.collision_count} collisions, {overtakes} overtakes"
    )
    return result, Trace(rows, timings)


def run_baseline(scenario: Scenario, world: Optional[RaceWorld] = None,
                 **kwargs) -> Tuple[RaceResult, Trace]:
    """Same race with lane switching disabled: the ego keeps its lane and only brakes."""
    return run_race(scenario.with_overrides(switching_enabled=False), world, **kwargs)


def verify_trace(frame: pd.DataFrame, thresholds: Thresholds, pause_s: float = 10.0) -> List[str]:
    """
    Re-check the planner decisions recorded in a trace.

    Returns one message per violation: decisions that start a pause closer
    than `pause_s` together, switches whose logged occupancy does not allow
    them, and engagements without an all-clear scan.
    """
    frame = check_trace_frame(frame)
    ego = frame[(frame["agent"] == EGO) & (frame["decision"] != "")]
    violations: List[str] = []
    prev_counts = (0, 0, 0)
    last_pause = -math.inf
    theta_o, theta_e = thresholds.theta_o, thresholds.theta_e

    for row in ego.itertuples(index=False):
        decision = parse_decision(row.decision)
        counts = tuple(int(c) for c in (row.l0, row.l1, row.l2))
        t = float(row.t)
        if decision.starts_pause:
            if t - last_pause < pause_s - 1e-9:
                violations.append(f"t={t:.2f}: {decision} only {t - last_pause:.2f}s after the previous pause start")
            last_pause = t
        if decision.kind == DecisionKind.SWITCH:
            s, target = decision.source, decision.target
            if not counts[s] > theta_o:
                violations.append(f"t={t:.2f}: {decision} but source lane count {counts[s]} <= {theta_o}")
            if not (counts[target] < theta_e and prev_counts[target] < theta_e):
                violations.append(f"t={t:.2f}: {decision} into a lane with counts {counts[target]}/{prev_counts[target]}")
            if abs(target - s) == 2 and not counts[LaneId.CENTER] < theta_o:
                violations.append(f"t={t:.2f}: {decision} across an occupied center lane")
        elif decision.kind == DecisionKind.ENGAGE_OPTIMIZED:
            if not all(c < theta_e for c in counts):
                violations.append(f"t={t:.2f}: EngageOptimized with counts {counts}")
        prev_counts = counts
    return violations
