#!/usr/bin/env python3
"""
progress.py

Lap progress display for race runs, backed by tqdm. The bar counts percent
of the lap; without tqdm it stays silent.

Usage:
    from racestack.utils.progress import progress_context

    with progress_context(desc="Racing") as tracker:
        tracker.update_to(0.25, postfix={"v": 41.2})
"""

import logging
from contextlib import contextmanager
from typing import Any, Dict, Optional

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False
    logging.warning("tqdm not available. Lap progress will not be shown.")

LAP_STEPS = 100


class LapProgressTracker:
    """Percent-of-lap progress bar."""

    def __init__(self, desc: str = "Racing", disable: bool = False, **tqdm_kwargs):
        self.desc = desc
        self.disable = disable or not TQDM_AVAILABLE
        self.tqdm_kwargs = tqdm_kwargs
        self.pbar = None
        self.position = 0

    def __enter__(self):
        if not self.disable:
            self.pbar = tqdm(total=LAP_STEPS, desc=self.desc, unit="%", **self.tqdm_kwargs)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.pbar:
            self.pbar.close()

    def update_to(self, fraction: float, postfix: Optional[Dict[str, Any]] = None):
        """Advance the bar to the given lap fraction (never backwards)."""
        target = int(min(max(fraction, 0.0), 1.0) * LAP_STEPS)
        if target <= self.position:
            return
        if self.pbar:
            if postfix:
                self.pbar.set_postfix(postfix)
            self.pbar.update(target - self.position)
        self.position = target


@contextmanager
def progress_context(desc: str = "Racing", disable: bool = False, **tqdm_kwargs):
    with LapProgressTracker(desc, disable, **tqdm_kwargs) as tracker:
        yield tracker


def format_time(seconds: float) -> str:
    """Wall-clock duration as 12.3s, 4.5m or 1.2h."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    if seconds < 3600:
        return f"{seconds / 60:.1f}m"
    return f"{seconds / 3600:.1f}h"
