#!/usr/bin/env python3
"""
common.py

Common utilities and shared functions for the racing stack.
Holds the exception hierarchy, settings loading with environment overrides,
report persistence and small numeric helpers used across modules.
"""

import copy
import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    # dotenv not available, continue without it
    pass

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config" / "settings.yaml"


class RaceStackError(Exception):
    """Base class for all racing stack errors."""


class TrackFormatError(RaceStackError, ValueError):
    """Malformed track or lane file."""


class GeometryError(RaceStackError, ValueError):
    """Degenerate or out-of-bounds geometry."""


class ControlError(RaceStackError, ValueError):
    """Controller evaluated outside its valid domain."""


class ScenarioError(RaceStackError, ValueError):
    """Invalid scenario document or configuration value."""


class StaleStampError(RaceStackError, ValueError):
    """Occupancy update with a non-increasing timestamp."""


class TraceFormatError(RaceStackError, ValueError):
    """Trace file missing columns or rows."""


class SimulationDivergedError(RaceStackError, RuntimeError):
    """Non-finite vehicle state; carries the trace recorded so far."""

    def __init__(self, message: str, trace: Any = None, time_s: Optional[float] = None):
        super().__init__(message)
        self.trace = trace
        self.time_s = time_s


DEFAULT_SETTINGS: Dict[str, Dict[str, Any]] = {
    "track": {
        "straight_length": 300.0,
        "turn_radius": 100.0,
        "track_width": 15.0,
        "spacing": 2.0,
        "csv_path": None,
    },
    "raceline": {
        "car_half_width": 0.95,
        "alpha_max": None,
        "iterations": 2000,
        "step_size": 1.0,
        "tolerance": 1e-9,
        "method": "newton",
    },
    "limits": {
        "v_cap": 50.0,
        "a_lat_max": 12.0,
        "a_accel_max": 6.0,
        "a_brake_max": 10.0,
    },
    "lidar": {
        "beam_count": 720,
        "fov": 2.0 * math.pi,
        "max_range": 120.0,
        "noise_sigma": 0.02,
    },
    "perception": {
        "x_min": -10.0,
        "x_max": 100.0,
        "lane_reject_halfwidth": 1.25,
        "stride": 4,
    },
    "thresholds": {
        "theta_o": 9,
        "theta_e": 3,
    },
    "planner": {
        "pause_s": 10.0,
        "engage_streak": 5,
        "horizon_m": 90.0,
        "brake_factor": 0.6,
        "v_min_follow": 15.0,
        "brake_during_pause": True,
        "switching_enabled": True,
    },
    "mpc": {
        "horizon": 25,
        "dt": 0.06,
        "w_pos": 0.75,
        "w_yaw": 0.75,
        "w_v": 1.0,
        "w_accel": 0.1,
        "w_delta": 500.0,
        "a_cmd_max": 10.0,
        "delta_max": 0.35,
        "delta_rate_max": 0.8,
        "v_max": 60.0,
        "wheelbase": 3.0,
    },
    "rates": {
        "physics": 100.0,
        "control": 50.0,
        "lidar": 10.0,
    },
    "race": {
        "seed": 42,
        "inject_latency": False,
        "max_time": 120.0,
        "car_length": 5.0,
        "car_width": 1.9,
        "collision_penalty": 5.0,
        "npc_lookahead_min": 5.0,
        "npc_lookahead_gain": 0.6,
        "npc_speed_gain": 2.0,
        "npc_delta_rate_max": 4.0,
    },
    "output": {
        "log_dir": "logs",
        "output_dir": "runs",
        "progress": True,
        "log_level": "INFO",
    },
}


def load_config(config_path: Union[str, Path, None] = None, section: Optional[str] = None) -> Dict[str, Any]:
    """
    Load settings from YAML with fallback defaults.
    Environment variables override output paths, log level and seed.

    Args:
        config_path: Path to settings file (defaults to config/settings.yaml)
        section: Return only this section ('track', 'mpc', ...)

    Returns:
        Dictionary containing configuration settings
    """
    config = copy.deepcopy(DEFAULT_SETTINGS)
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH

    try:
        with open(path, "r") as file:
            loaded = yaml.safe_load(file) or {}
        # Merge with defaults section by section
        for name, values in loaded.items():
            if isinstance(values, dict) and name in config:
                config[name].update(values)
            else:
                config[name] = values
    except FileNotFoundError:
        logging.warning(f"Config file {path} not found, using defaults")
    except yaml.YAMLError as e:
        logging.error(f"Error parsing config file: {e}")

    config = _override_with_env_vars(config)

    if section is not None:
        if section not in config:
            raise ScenarioError(f"Unknown settings section: {section}")
        return config[section]
    return config


def _override_with_env_vars(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Override configuration values with environment variables.

    Args:
        config: Configuration dictionary

    Returns:
        Updated configuration dictionary
    """
    output = config.setdefault("output", {})
    if os.environ.get("RACESTACK_LOG_LEVEL"):
        output["log_level"] = os.environ["RACESTACK_LOG_LEVEL"]
    if os.environ.get("RACESTACK_LOG_DIR"):
        output["log_dir"] = os.environ["RACESTACK_LOG_DIR"]
    if os.environ.get("RACESTACK_OUTPUT_DIR"):
        output["output_dir"] = os.environ["RACESTACK_OUTPUT_DIR"]
    if os.environ.get("RACESTACK_PROGRESS"):
        output["progress"] = os.environ["RACESTACK_PROGRESS"].strip().lower() in ("1", "true", "yes", "on")

    if os.environ.get("RACESTACK_SEED"):
        try:
            config.setdefault("race", {})["seed"] = int(os.environ["RACESTACK_SEED"])
        except ValueError:
            logging.warning(f"Invalid RACESTACK_SEED value: {os.environ['RACESTACK_SEED']}")

    return config


def save_metadata_to_file(metadata: Dict[str, Any], path: Union[str, Path]) -> str:
    """Write a JSON report, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(metadata, f, indent=2, default=str)
    logging.info(f"Report saved to {path}")
    return str(path)


def validate_dataframe(df: pd.DataFrame, required_columns: List[str],
                       min_rows: int = 0) -> Tuple[bool, List[str]]:
    """Validate DataFrame structure and content."""
    errors = []

    missing_columns = [col for col in required_columns if col not in df.columns]
    if missing_columns:
        errors.append(f"Missing required columns: {missing_columns}")

    if len(df) < min_rows:
        errors.append(f"DataFrame has {len(df)} rows, minimum required: {min_rows}")

    return len(errors) == 0, errors


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """Safely divide two numbers, returning default if denominator is zero."""
    if denominator == 0:
        return default
    return numerator / denominator


def summarize_timings(samples_ms: Sequence[float]) -> Dict[str, float]:
    """Mean/max/count summary of a list of stage durations in milliseconds."""
    count = len(samples_ms)
    if count == 0:
        return {"mean_ms": 0.0, "max_ms": 0.0, "count": 0}
    return {
        "mean_ms": safe_divide(float(sum(samples_ms)), count),
        "max_ms": float(max(samples_ms)),
        "count": count,
    }


def memory_snapshot() -> Dict[str, Any]:
    """Resident memory of this process and system availability."""
    try:
        import psutil
        process = psutil.Process(os.getpid())
        memory = psutil.virtual_memory()
        return {
            "rss_mb": process.memory_info().rss / (1024 ** 2),
            "available_gb": memory.available / (1024 ** 3),
            "percent_used": memory.percent,
        }
    except ImportError:
        return {"error": "psutil not available"}
