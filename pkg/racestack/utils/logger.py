#!/usr/bin/env python3
"""
logger.py

Run logging for the racing stack.

RaceLogger mirrors one race (or lane build) to stderr and <log_dir>/<name>.log,
one line per stage boundary or lap checkpoint, with the keyword fields of the
call appended as JSON. StructuredLogger appends race events (start, non-Stay
decisions, collisions, divergence, end) to a dated JSONL file under
<log_dir>/structured/ for offline analysis.

Usage:
    run_logger = get_logger("race_default", "logs")
    run_logger.log_stage_start("race", seed=42)
    events = get_structured_logger("race_events", "logs")
    events.log_decision(run_id, 12.3, "Switch(2->1)", (0, 3, 14))
"""

import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _test_dir(log_dir: str, test_mode: bool) -> Path:
    return Path(log_dir) / "test" if test_mode else Path(log_dir)


class RaceLogger:
    """Stage and checkpoint lines for one run, to console and file."""

    def __init__(self, name: str, log_dir: str = "logs", test_mode: bool = False, level: str = "INFO"):
        self.name = name
        self.test_mode = test_mode
        self.level = getattr(logging, str(level).upper(), logging.INFO)
        self.log_dir = _test_dir(log_dir, test_mode)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_file = self.log_dir / f"{name}.log"

        self.logger = logging.getLogger(f"racestack.run.{name}")
        if not self.logger.handlers:
            formatter = logging.Formatter(LOG_FORMAT)
            for handler in (logging.FileHandler(self.log_file), logging.StreamHandler(sys.stderr)):
                handler.setLevel(self.level)
                handler.setFormatter(formatter)
                self.logger.addHandler(handler)
            self.logger.setLevel(self.level)
            # Run lines must not repeat through the root handler
            self.logger.propagate = False

    def log(self, level: int, message: str, **fields):
        if fields:
            message = f"{message} | {json.dumps(fields, default=str)}"
        self.logger.log(level, message)

    def log_stage_start(self, stage: str, **fields):
        self.log(logging.INFO, f"STAGE_START: {stage}", stage=stage, **fields)

    def log_stage_end(self, stage: str, duration: float, status: str = "completed", **fields):
        level = logging.INFO if status in ("completed", "finished") else logging.WARNING
        self.log(level, f"STAGE_END: {stage} | {status} | {duration:.2f}s",
                 stage=stage, duration=duration, status=status, **fields)

    def log_checkpoint(self, stage: str, fraction: float, **fields):
        """Lap progress; the race loop logs one every 10 s of simulated time."""
        self.log(logging.INFO, f"CHECKPOINT: {stage} | {fraction * 100.0:.1f}%",
                 stage=stage, fraction=fraction, **fields)

    def close(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


class StructuredLogger:
    """Race events as JSON lines."""

    def __init__(self, name: str, log_dir: str = "logs", test_mode: bool = False):
        self.name = name
        self.test_mode = test_mode
        self.log_dir = _test_dir(log_dir, test_mode) / "structured"
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.log_file = self.log_dir / f"{name}_{datetime.now().strftime('%Y-%m-%d')}.jsonl"

    def log_event(self, event_type: str, run_id: str, data: Dict[str, Any],
                  timestamp: Optional[datetime] = None):
        record = {
            "timestamp": (timestamp or datetime.now()).isoformat(),
            "logger": self.name,
            "event_type": event_type,
            "run_id": run_id,
            "test_mode": self.test_mode,
            **data,
        }
        with open(self.log_file, "a") as f:
            f.write(json.dumps(record, default=str) + "\n")

    def log_race_start(self, run_id: str, scenario: str, seed: int, **fields):
        self.log_event("race_start", run_id, {"scenario": scenario, "seed": seed, **fields})

    def log_race_end(self, run_id: str, duration: float, status: str, **fields):
        self.log_event("race_end", run_id, {"duration": duration, "status": status, **fields})

    def log_decision(self, run_id: str, sim_time: float, decision: str, counts: Sequence[int], **fields):
        """A non-Stay planner decision with the lane counts behind it."""
        self.log_event("decision", run_id, {"sim_time": sim_time, "decision": decision,
                                            "counts": [int(c) for c in counts], **fields})

    def log_collision(self, run_id: str, sim_time: float, npc_index: int, penalty: float):
        self.log_event("collision", run_id, {"sim_time": sim_time, "npc_index": npc_index, "penalty": penalty})

    def log_error(self, run_id: str, stage: str, error: str, **fields):
        self.log_event("error", run_id, {"stage": stage, "error": error, **fields})


def get_logger(name: str, log_dir: str = "logs", test_mode: bool = False, level: str = "INFO") -> RaceLogger:
    return RaceLogger(name, log_dir, test_mode, level)


def get_structured_logger(name: str, log_dir: str = "logs", test_mode: bool = False) -> StructuredLogger:
    return StructuredLogger(name, log_dir, test_mode)
