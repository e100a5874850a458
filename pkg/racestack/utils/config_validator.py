#!/usr/bin/env python3
"""
config_validator.py

Scenario validation for the racing stack.
Checks a merged scenario dictionary (settings defaults plus the scenario
document) before any model object is built, collecting every problem
instead of stopping at the first one.
"""

import logging
import math
from typing import Any, Dict, List, Tuple

logger = logging.getLogger(__name__)

LANE_NAMES = ("inner", "center", "outer")
EXPECTED_NPC_COUNT = 5


def _lane_index(value: Any, allow_optimized: bool = False):
    names = LANE_NAMES + (("optimized",) if allow_optimized else ())
    if isinstance(value, str):
        key = value.strip().lower()
        return names.index(key) if key in names else None
    try:
        index = int(value)
    except (TypeError, ValueError):
        return None
    return index if 0 <= index < len(names) else None


def _number(value: Any):
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def _oval_perimeter(track: Dict):
    """Closed-form centerline length of the generated oval; None for CSV tracks."""
    if track.get("csv_path"):
        return None
    straight, radius = _number(track.get("straight_length")), _number(track.get("turn_radius"))
    if straight is None or radius is None or straight < 0 or radius <= 0:
        return None
    return 2.0 * straight + 2.0 * math.pi * radius


class ScenarioValidator:
    """Validates a merged scenario dictionary."""

    def __init__(self):
        self.errors = []
        self.warnings = []

    def _positive(self, section: Dict, key: str, prefix: str) -> bool:
        value = _number(section.get(key))
        if value is None or not value > 0:
            self.errors.append(f"{prefix}.{key} must be a positive number (got {section.get(key)!r})")
            return False
        return True

    def validate_track(self, config: Dict) -> bool:
        """Oval parameters must be positive unless a CSV centerline is given."""
        track = config.get("track", {})
        if track.get("csv_path"):
            return self._positive(track, "spacing", "track")
        is_valid = all([
            self._positive(track, "turn_radius", "track"),
            self._positive(track, "track_width", "track"),
            self._positive(track, "spacing", "track"),
        ])
        straight = _number(track.get("straight_length"))
        if straight is None or straight < 0:
            self.errors.append("track.straight_length must be >= 0")
            is_valid = False
        return is_valid

    def validate_rates(self, config: Dict) -> bool:
        """physics >= control >= lidar, all positive, integer ratios."""
        rates = config.get("rates", {})
        if not all(self._positive(rates, key, "rates") for key in ("physics", "control", "lidar")):
            return False
        physics, control, lidar = (float(rates[k]) for k in ("physics", "control", "lidar"))
        if not physics >= control >= lidar:
            self.errors.append(f"Rates must satisfy physics >= control >= lidar ({physics}, {control}, {lidar})")
            return False
        is_valid = True
        for name, rate in (("control", control), ("lidar", lidar)):
            ratio = physics / rate
            if abs(ratio - round(ratio)) > 1e-9:
                self.errors.append(f"physics rate {physics} is not an integer multiple of {name} rate {rate}")
                is_valid = False
        return is_valid

    def validate_thresholds(self, config: Dict) -> bool:
        thresholds = config.get("thresholds", {})
        theta_o = _number(thresholds.get("theta_o"))
        theta_e = _number(thresholds.get("theta_e"))
        if theta_o is None or theta_e is None or not 0 < theta_e <= theta_o:
            self.errors.append(f"Thresholds need 0 < theta_e <= theta_o (got {theta_e}, {theta_o})")
            return False
        if theta_o / theta_e < 2:
            self.warnings.append("theta_o is less than twice theta_e; switches may oscillate")
        return True

    def validate_agents(self, config: Dict) -> bool:
        """
        Lane ids, speeds and the ego-behind-every-NPC start order.

        On an oval, start arcs are compared around the loop, so an NPC at 30 m
        is 50 m ahead of an ego starting 20 m before the seam. CSV tracks have
        no closed-form length; their start arcs are compared directly.
        """
        is_valid = True
        ego = config.get("ego", {})
        if _lane_index(ego.get("lane"), allow_optimized=True) is None:
            self.errors.append(f"ego.lane {ego.get('lane')!r} is not a known lane")
            is_valid = False
        ego_arc = _number(ego.get("start_arc"))
        ego_speed = _number(ego.get("initial_speed"))
        if ego_arc is None:
            self.errors.append("ego.start_arc must be a number")
            is_valid = False
        if ego_speed is None or ego_speed < 0:
            self.errors.append("ego.initial_speed must be >= 0")
            is_valid = False

        npcs = config.get("npcs", [])
        car_length = _number(config.get("race", {}).get("car_length")) or 5.0
        perimeter = _oval_perimeter(config.get("track", {}))
        for i, npc in enumerate(npcs):
            if _lane_index(npc.get("lane")) is None:
                self.errors.append(f"npcs[{i}].lane {npc.get('lane')!r} is not a base lane")
                is_valid = False
            speed = _number(npc.get("target_speed"))
            if speed is None or speed < 0:
                self.errors.append(f"npcs[{i}].target_speed must be >= 0")
                is_valid = False
            arc = _number(npc.get("start_arc"))
            if arc is None:
                self.errors.append(f"npcs[{i}].start_arc must be a number")
                is_valid = False
            elif ego_arc is not None:
                ahead = arc - ego_arc if perimeter is None else (arc - ego_arc) % perimeter
                if ahead <= 0.0:
                    self.errors.append(f"npcs[{i}] starts at {arc} m, not ahead of the ego ({ego_arc} m)")
                    is_valid = False
                elif ahead < 2.0 * car_length:
                    self.warnings.append(f"npcs[{i}] starts only {ahead:.1f} m ahead of the ego")
                elif perimeter is not None and perimeter - ahead < 2.0 * car_length:
                    self.warnings.append(f"npcs[{i}] starts only {perimeter - ahead:.1f} m behind the ego")
            for change in npc.get("lane_changes", []):
                if (not isinstance(change, (list, tuple)) or len(change) != 2
                        or _number(change[0]) is None or _lane_index(change[1]) is None):
                    self.errors.append(f"npcs[{i}] has a malformed lane change {change!r}")
                    is_valid = False

        if len(npcs) != EXPECTED_NPC_COUNT:
            self.warnings.append(f"{len(npcs)} NPCs configured (race format uses {EXPECTED_NPC_COUNT})")
        return is_valid

    def validate_race(self, config: Dict) -> bool:
        race = config.get("race", {})
        is_valid = self._positive(race, "max_time", "race")
        is_valid = self._positive(race, "car_length", "race") and is_valid
        is_valid = self._positive(race, "car_width", "race") and is_valid
        penalty = _number(race.get("collision_penalty"))
        if penalty is None or penalty < 0:
            self.errors.append("race.collision_penalty must be >= 0")
            is_valid = False
        seed = race.get("seed")
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            self.errors.append(f"seed must be a non-negative integer (got {seed!r})")
            is_valid = False
        return is_valid

    def validate_all(self, config: Dict) -> Tuple[bool, List[str], List[str]]:
        """Validate all scenario aspects."""
        self.errors = []
        self.warnings = []

        validations = [
            self.validate_track(config),
            self.validate_rates(config),
            self.validate_thresholds(config),
            self.validate_agents(config),
            self.validate_race(config),
        ]

        is_valid = all(validations)

        return is_valid, self.errors, self.warnings

    def print_validation_report(self, is_valid: bool, errors: List[str], warnings: List[str]):
        """Print a formatted validation report."""
        print("\n" + "=" * 60)
        print("SCENARIO VALIDATION REPORT")
        print("=" * 60)

        if is_valid:
            print("✅ Scenario is valid!")
        else:
            print("❌ Scenario has errors:")
            for error in errors:
                print(f"   • {error}")

        if warnings:
            print("\n⚠️  Warnings:")
            for warning in warnings:
                print(f"   • {warning}")

        print("=" * 60 + "\n")


def validate_scenario_config(config: Dict) -> bool:
    """
    Convenience function to validate and report on a merged scenario.

    Args:
        config: Merged scenario dictionary

    Returns:
        True if the scenario is valid, False otherwise
    """
    validator = ScenarioValidator()
    is_valid, errors, warnings = validator.validate_all(config)
    validator.print_validation_report(is_valid, errors, warnings)
    return is_valid
