#!/usr/bin/env python3
"""
scenario.py

Race scenario documents.

A scenario is a JSON document with the sections of config/settings.yaml
(track, raceline, limits, lidar, perception, thresholds, planner, mpc,
rates, race) plus `npcs`, `ego` and a top-level `seed`. Every section is
merged over the settings defaults; keys the defaults do not know are
rejected, so a typo never silently falls back to a default.

Usage:
    scenario = load_scenario("config/scenarios/default.json")
    scenario = scenario.with_overrides(seed=7, inject_latency=True)
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from racestack.behavior_planner import PlannerConfig, Thresholds
from racestack.lidar_sim import LidarConfig
from racestack.mpc_control import MpcConfig
from racestack.perception import CropConfig
from racestack.raceline_opt import RacelineProblem, SpeedLimits
from racestack.track_geometry import LaneId, TrackModel, generate_oval, load_centerline
from racestack.utils.common import (
    ControlError,
    GeometryError,
    ScenarioError,
    load_config,
)
from racestack.utils.config_validator import ScenarioValidator

logger = logging.getLogger(__name__)

SETTINGS_SECTIONS = ("track", "raceline", "limits", "lidar", "perception", "thresholds",
                     "planner", "mpc", "rates", "race")
SCENARIO_KEYS = set(SETTINGS_SECTIONS) | {"name", "seed", "npcs", "ego"}
NPC_KEYS = {"lane", "target_speed", "start_arc", "lane_changes"}
EGO_KEYS = {"lane", "start_arc", "initial_speed"}
EGO_DEFAULTS = {"lane": "outer", "start_arc": 0.0, "initial_speed": 30.0}


def parse_lane(value: Union[str, int, LaneId], allow_optimized: bool = False) -> LaneId:
    """Lane from its name ("inner", "Center", ...) or index."""
    try:
        lane = LaneId[value.strip().upper()] if isinstance(value, str) else LaneId(int(value))
    except (KeyError, ValueError) as e:
        raise ScenarioError(f"Unknown lane {value!r}") from e
    if lane == LaneId.OPTIMIZED and not allow_optimized:
        raise ScenarioError("Only inner, center or outer lanes are allowed here")
    return lane


@dataclass(frozen=True)
class TrackSpec:
    straight_length: float = 300.0
    turn_radius: float = 100.0
    track_width: float = 15.0
    spacing: float = 2.0
    csv_path: Optional[str] = None

    def build(self) -> TrackModel:
        if self.csv_path:
            return load_centerline(self.csv_path, self.spacing)
        return generate_oval(self.straight_length, self.turn_radius, self.track_width, self.spacing)


@dataclass(frozen=True)
class RacelineSettings:
    car_half_width: float = 0.95
    alpha_max: Optional[float] = None
    iterations: int = 2000
    step_size: float = 1.0
    tolerance: float = 1e-9
    method: str = "newton"

    def problem(self, track: TrackModel) -> RacelineProblem:
        return RacelineProblem(track, **asdict(self))


@dataclass(frozen=True)
class PerceptionSettings:
    crop: CropConfig = field(default_factory=CropConfig)
    stride: int = 4


@dataclass(frozen=True)
class Rates:
    physics: float = 100.0
    control: float = 50.0
    lidar: float = 10.0

    def __post_init__(self):
        if not (self.physics > 0 and self.control > 0 and self.lidar > 0):
            raise ScenarioError("All rates must be positive")
        if not self.physics >= self.control >= self.lidar:
            raise ScenarioError("Rates must satisfy physics >= control >= lidar")
        for name in ("control", "lidar"):
            ratio = self.physics / getattr(self, name)
            if abs(ratio - round(ratio)) > 1e-9:
                raise ScenarioError(f"physics rate must be an integer multiple of the {name} rate")

    @property
    def dt(self) -> float:
        return 1.0 / self.physics

    @property
    def control_every(self) -> int:
        return int(round(self.physics / self.control))

    @property
    def lidar_every(self) -> int:
        return int(round(self.physics / self.lidar))


@dataclass(frozen=True)
class RaceSettings:
    inject_latency: bool = False
    max_time: float = 120.0
    car_length: float = 5.0
    car_width: float = 1.9
    collision_penalty: float = 5.0
    npc_lookahead_min: float = 5.0
    npc_lookahead_gain: float = 0.6
    npc_speed_gain: float = 2.0
    npc_delta_rate_max: float = 4.0


@dataclass(frozen=True)
class NpcSpec:
    lane: LaneId
    target_speed: float
    start_arc: float
    lane_changes: Tuple[Tuple[float, LaneId], ...] = ()

    def __post_init__(self):
        if self.target_speed < 0:
            raise ScenarioError("NPC target_speed must be >= 0")
        times = [t for t, _ in self.lane_changes]
        if times != sorted(times):
            raise ScenarioError("NPC lane changes must be in time order")

    def lane_at(self, t: float) -> LaneId:
        lane = self.lane
        for time, new_lane in self.lane_changes:
            if t >= time:
                lane = new_lane
        return lane


@dataclass(frozen=True)
class EgoSpec:
    lane: LaneId = LaneId.OUTER
    start_arc: float = 0.0
    initial_speed: float = 30.0


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 42
    track: TrackSpec = field(default_factory=TrackSpec)
    raceline: RacelineSettings = field(default_factory=RacelineSettings)
    limits: SpeedLimits = field(default_factory=SpeedLimits)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    perception: PerceptionSettings = field(default_factory=PerceptionSettings)
    thresholds: Thresholds = field(default_factory=Thresholds)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    rates: Rates = field(default_factory=Rates)
    race: RaceSettings = field(default_factory=RaceSettings)
    npcs: Tuple[NpcSpec, ...] = ()
    ego: EgoSpec = field(default_factory=EgoSpec)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], settings: Optional[Dict[str, Any]] = None,
                  name: str = "scenario") -> "Scenario":
        """Merge a scenario document over the settings defaults and build it."""
        merged = merge_scenario(data, settings)
        validator = ScenarioValidator()
        is_valid, errors, warnings = validator.validate_all(merged)
        for warning in warnings:
            logger.warning(f"Scenario warning: {warning}")
        if not is_valid:
            raise ScenarioError("; ".join(errors))
        return _build(merged, data.get("name", name))

    def with_overrides(self, seed: Optional[int] = None, inject_latency: Optional[bool] = None,
                       switching_enabled: Optional[bool] = None) -> "Scenario":
        scenario = self
        if seed is not None:
            scenario = replace(scenario, seed=int(seed), lidar=replace(scenario.lidar, seed=int(seed)))
        if inject_latency is not None:
            scenario = replace(scenario, race=replace(scenario.race, inject_latency=bool(inject_latency)))
        if switching_enabled is not None:
            scenario = replace(scenario, planner=replace(scenario.planner,
                                                         switching_enabled=bool(switching_enabled)))
        return scenario

    def to_dict(self) -> Dict[str, Any]:
        """JSON-friendly echo of every resolved value."""
        return _plain(asdict(self))


def _plain(value):
    if isinstance(value, Enum):
        return value.name.lower() if isinstance(value, LaneId) else value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def merge_scenario(data: Mapping[str, Any], settings: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Settings defaults with the scenario's sections merged in; unknown keys raise."""
    if not isinstance(data, Mapping):
        raise ScenarioError("Scenario document must be a JSON object")
    unknown = sorted(set(data) - SCENARIO_KEYS)
    if unknown:
        raise ScenarioError(f"Unknown scenario keys: {unknown}")

    base = copy.deepcopy(settings) if settings is not None else load_config()
    merged: Dict[str, Any] = {section: dict(base.get(section, {})) for section in SETTINGS_SECTIONS}
    for section in SETTINGS_SECTIONS:
        values = data.get(section)
        if values is None:
            continue
        if not isinstance(values, Mapping):
            raise ScenarioError(f"Section {section!r} must be an object")
        bad = sorted(set(values) - set(merged[section]))
        if bad:
            raise ScenarioError(f"Unknown keys in {section!r}: {bad}")
        merged[section].update(values)

    if "seed" in data:
        merged["race"]["seed"] = data["seed"]

    npcs = data.get("npcs", [])
    if not isinstance(npcs, list):
        raise ScenarioError("'npcs' must be a list")
    for i, npc in enumerate(npcs):
        if not isinstance(npc, Mapping):
            raise ScenarioError(f"npcs[{i}] must be an object")
        bad = sorted(set(npc) - NPC_KEYS)
        if bad:
            raise ScenarioError(f"Unknown keys in npcs[{i}]: {bad}")
        missing = sorted({"lane", "target_speed", "start_arc"} - set(npc))
        if missing:
            raise ScenarioError(f"npcs[{i}] is missing {missing}")
    merged["npcs"] = [dict(npc) for npc in npcs]

    ego = data.get("ego", {})
    if not isinstance(ego, Mapping):
        raise ScenarioError("'ego' must be an object")
    bad = sorted(set(ego) - EGO_KEYS)
    if bad:
        raise ScenarioError(f"Unknown keys in 'ego': {bad}")
    merged["ego"] = {**EGO_DEFAULTS, **ego}
    return merged


def _build(merged: Dict[str, Any], name: str) -> Scenario:
    try:
        seed = int(merged["race"]["seed"])
        race_values = {k: v for k, v in merged["race"].items() if k != "seed"}
        rates = Rates(**{k: float(v) for k, v in merged["rates"].items()})
        perception = dict(merged["perception"])
        stride = int(perception.pop("stride"))
        npcs = tuple(
            NpcSpec(
                lane=parse_lane(npc["lane"]),
                target_speed=float(npc["target_speed"]),
                start_arc=float(npc["start_arc"]),
                lane_changes=tuple((float(t), parse_lane(lane)) for t, lane in npc.get("lane_changes", [])),
            )
            for npc in merged["npcs"]
        )
        ego = merged["ego"]
        return Scenario(
            name=str(name),
            seed=seed,
            track=TrackSpec(**merged["track"]),
            raceline=RacelineSettings(**merged["raceline"]),
            limits=SpeedLimits(**merged["limits"]),
            lidar=LidarConfig(rate=rates.lidar, seed=seed, **merged["lidar"]),
            perception=PerceptionSettings(CropConfig(**perception), stride),
            thresholds=Thresholds(**merged["thresholds"]),
            planner=PlannerConfig(**merged["planner"]),
            mpc=MpcConfig(**merged["mpc"]),
            rates=rates,
            race=RaceSettings(**race_values),
            npcs=npcs,
            ego=EgoSpec(
                lane=parse_lane(ego["lane"], allow_optimized=True),
                start_arc=float(ego["start_arc"]),
                initial_speed=float(ego["initial_speed"]),
            ),
        )
    except ScenarioError:
        raise
    except (GeometryError, ControlError) as e:
        raise ScenarioError(str(e)) from e
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"Invalid scenario value: {e}") from e


def load_scenario(path: Union[str, Path], settings_path: Union[str, Path, None] = None,
                  seed: Optional[int] = None) -> Scenario:
    """Read a scenario JSON file; `seed` overrides the document's seed."""
    path = Path(path)
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ScenarioError(f"Scenario file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: invalid JSON: {e}") from e
    scenario = Scenario.from_dict(data, load_config(settings_path), name=path.stem)
    if seed is not None:
        scenario = scenario.with_overrides(seed=seed)
    logger.info(f"Loaded scenario {scenario.name}: {len(scenario.npcs)} NPCs, seed {scenario.seed}")
    return scenario


def default_npcs() -> List[Dict[str, Any]]:
    """Five NPCs, slowest in front, alternating Outer/Inner."""
    lanes = ["outer", "inner", "outer", "inner", "outer"]
    return [
        {"lane": lane, "target_speed": 30.0 - i, "start_arc": 50.0 + 70.0 * i}
        for i, lane in enumerate(lanes)
    ]
