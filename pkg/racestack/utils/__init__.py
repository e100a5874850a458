#!/usr/bin/env python3
"""
racestack.utils

Configuration, logging, progress and validation helpers shared by the stack.
"""

from .common import (
    RaceStackError,
    TrackFormatError,
    GeometryError,
    ControlError,
    ScenarioError,
    StaleStampError,
    SimulationDivergedError,
    TraceFormatError,
    load_config,
    save_metadata_to_file,
    validate_dataframe,
    safe_divide,
    summarize_timings,
    memory_snapshot,
)
from .logger import get_logger, get_structured_logger, RaceLogger, StructuredLogger
from .progress import progress_context, LapProgressTracker, format_time
from .config_validator import ScenarioValidator, validate_scenario_config
