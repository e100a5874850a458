#!/usr/bin/env python3
"""
behavior_planner.py

Lane-switching overtake state machine and trajectory publisher.

`decide` runs once per LiDAR scan. Rules, in order:
  1. During the pause window only Stay (or BrakeDuringPause when enabled and
     the current lane is occupied).
  2. After `engage_streak` consecutive all-clear scans in LaneFollow mode,
     engage the optimized raceline.
  3. In Optimized mode, fall back to LaneFollow when the effective lane is
     occupied and evaluate rule 4 on the same scan.
  4. When the current lane is occupied, switch to the first admissible
     neighbour (Center preferred; from Center the emptier side, Inner on a
     tie), otherwise Brake.
  5. Otherwise Stay.
Switches and engagement open a pause window.
"""

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from racestack.perception import LaneOccupancy
from racestack.track_geometry import BASE_LANES, Lane, LaneId, project
from racestack.utils.common import GeometryError, TraceFormatError

TIE_TOLERANCE = 1e-9


class Mode(str, Enum):
    LANE_FOLLOW = "LaneFollow"
    OPTIMIZED = "Optimized"


class DecisionKind(str, Enum):
    STAY = "Stay"
    SWITCH = "Switch"
    ENGAGE_OPTIMIZED = "EngageOptimized"
    BRAKE = "Brake"
    BRAKE_DURING_PAUSE = "BrakeDuringPause"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    source: Optional[int] = None
    target: Optional[int] = None

    def __post_init__(self):
        if self.kind == DecisionKind.SWITCH:
            if self.target is None or self.source is None:
                raise GeometryError("Switch needs source and target lanes")
            if self.target == self.source:
                raise GeometryError("Switch target must differ from the current lane")

    @property
    def is_braking(self) -> bool:
        return self.kind in (DecisionKind.BRAKE, DecisionKind.BRAKE_DURING_PAUSE)

    @property
    def starts_pause(self) -> bool:
        return self.kind in (DecisionKind.SWITCH, DecisionKind.ENGAGE_OPTIMIZED)

    def __str__(self) -> str:
        if self.kind == DecisionKind.SWITCH:
            return f"Switch({self.source}->{self.target})"
        return self.kind.value


STAY = Decision(DecisionKind.STAY)
_SWITCH_PATTERN = re.compile(r"^Switch\((\d)->(\d)\)$")


def parse_decision(text: str) -> Decision:
    """Inverse of str(Decision) for trace replay."""
    text = str(text).strip()
    match = _SWITCH_PATTERN.match(text)
    if match:
        return Decision(DecisionKind.SWITCH, int(match.group(1)), int(match.group(2)))
    try:
        kind = DecisionKind(text)
    except ValueError as e:
        raise TraceFormatError(f"Unknown decision {text!r}") from e
    if kind == DecisionKind.SWITCH:
        raise TraceFormatError("Switch decision without lanes")
    return Decision(kind)


@dataclass(frozen=True)
class Thresholds:
    theta_o: int = 9
    theta_e: int = 3

    def __post_init__(self):
        if not 0 < self.theta_e <= self.theta_o:
            raise GeometryError(f"Need 0 < theta_e <= theta_o, got {self.theta_e}, {self.theta_o}")


@dataclass(frozen=True)
class PlannerConfig:
    pause_s: float = 10.0
    engage_streak: int = 5
    horizon_m: float = 90.0
    brake_factor: float = 0.6
    v_min_follow: float = 15.0
    brake_during_pause: bool = False
    switching_enabled: bool = True

    def __post_init__(self):
        if self.pause_s < 0:
            raise GeometryError("pause_s must be >= 0")
        if self.engage_streak < 1:
            raise GeometryError("engage_streak must be >= 1")
        if not self.horizon_m > 0:
            raise GeometryError("horizon_m must be positive")
        if not 0 < self.brake_factor <= 1:
            raise GeometryError("brake_factor must be in (0, 1]")
        if self.v_min_follow < 0:
            raise GeometryError("v_min_follow must be >= 0")


@dataclass(frozen=True)
class PlannerState:
    mode: Mode = Mode.LANE_FOLLOW
    current_lane: int = int(LaneId.OUTER)
    pause_until: float = -math.inf
    clear_streak: int = 0
    last_decision: Decision = STAY


def _candidates(current: int, counts: Sequence[int]) -> Tuple[int, ...]:
    if current == LaneId.CENTER:
        inner, outer = int(LaneId.INNER), int(LaneId.OUTER)
        # Emptier side first; Inner on a tie.
        return (inner, outer) if counts[inner] <= counts[outer] else (outer, inner)
    far = int(LaneId.INNER) if current == LaneId.OUTER else int(LaneId.OUTER)
    return int(LaneId.CENTER), far


def _admissible(target: int, current: int, occ: LaneOccupancy, thresholds: Thresholds) -> bool:
    counts, prev = occ.counts, occ.prev
    if not (counts[target] < thresholds.theta_e and prev[target] < thresholds.theta_e):
        return False
    if abs(target - current) == 2:
        return counts[LaneId.CENTER] < thresholds.theta_o
    return True


def decide(state: PlannerState, occ: LaneOccupancy, thresholds: Thresholds, now: float,
           config: PlannerConfig = PlannerConfig()) -> Tuple[PlannerState, Decision]:
    """One planner step; a pure function of its arguments."""
    counts = occ.counts
    all_clear = all(c < thresholds.theta_e for c in counts)
    streak = state.clear_streak + 1 if all_clear else 0
    current = int(state.current_lane)
    occupied = counts[current] > thresholds.theta_o

    def _finish(new_state: PlannerState, decision: Decision):
        return replace(new_state, clear_streak=streak, last_decision=decision), decision

    if now < state.pause_until:
        if config.brake_during_pause and occupied:
            return _finish(state, Decision(DecisionKind.BRAKE_DURING_PAUSE))
        return _finish(state, STAY)

    if (config.switching_enabled and state.mode == Mode.LANE_FOLLOW
            and streak >= config.engage_streak):
        engaged = replace(state, mode=Mode.OPTIMIZED, pause_until=now + config.pause_s)
        return _finish(engaged, Decision(DecisionKind.ENGAGE_OPTIMIZED))

    mode = state.mode
    if mode == Mode.OPTIMIZED:
        if not occupied:
            return _finish(state, STAY)
        mode = Mode.LANE_FOLLOW

    if occupied:
        if config.switching_enabled:
            for target in _candidates(current, counts):
                if _admissible(target, current, occ, thresholds):
                    switched = replace(state, mode=mode, current_lane=target,
                                       pause_until=now + config.pause_s)
                    return _finish(switched, Decision(DecisionKind.SWITCH, current, target))
        return _finish(replace(state, mode=mode), Decision(DecisionKind.BRAKE))

    return _finish(replace(state, mode=mode), STAY)


def effective_lane(position: Sequence[float], lanes: Mapping[LaneId, Lane]) -> int:
    """Base lane nearest to `position`; ties go to the lower index."""
    distances = np.array([project(lanes[lane_id], position).distance for lane_id in BASE_LANES])
    return int(np.flatnonzero(distances <= distances.min() + TIE_TOLERANCE)[0])


@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    lane_id: LaneId
    indices: np.ndarray
    xy: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    target_speed: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def arc_lengths(self) -> np.ndarray:
        steps = np.linalg.norm(np.diff(self.xy, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])


def publish_trajectory(lane: Lane, position: Sequence[float], horizon_length: float) -> TrajectorySegment:
    """
    Cyclic slice of `lane` starting at the waypoint after the ego projection and
    covering at least `horizon_length` of arc measured from the projection.
    """
    if not horizon_length > 0:
        raise GeometryError("horizon_length must be positive")
    n = lane.n
    start = project(lane, position).index
    ds = lane.segment_lengths
    steps = np.roll(ds, -start)
    covered = np.cumsum(steps)
    count = int(np.searchsorted(covered, horizon_length - 1e-9)) + 1
    count = min(count, n)
    indices = (start + 1 + np.arange(count)) % n
    return TrajectorySegment(
        lane_id=lane.id,
        indices=indices,
        xy=lane.xy[indices],
        heading=lane.heading[indices],
        curvature=lane.curvature[indices],
        target_speed=lane.target_speed[indices],
    )


def brake_reference(segment: TrajectorySegment, brake_factor: float = 0.6,
                    v_min_follow: float = 15.0) -> TrajectorySegment:
    """Scale target speeds by `brake_factor`, floored at `v_min_follow`, never raised."""
    v = segment.target_speed
    braked = np.minimum(v, np.maximum(v * brake_factor, v_min_follow))
    return replace(segment, target_speed=braked)
