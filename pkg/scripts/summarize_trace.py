#!/usr/bin/env python3
"""
summarize_trace.py

Summarize a race trace: per-agent speed and distance, time spent in each
lane by the ego, and the planner decisions it took.

Usage:
    python3 scripts/summarize_trace.py runs/default/trace.csv [--csv OUT]
"""
import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent.parent))
from racestack.race_sim import EGO, read_trace  # noqa: E402
from racestack.track_geometry import LaneId  # noqa: E402
from racestack.utils.common import RaceStackError  # noqa: E402

LANE_NAMES = {int(lane): lane.name.lower() for lane in LaneId}


def print_section(title):
    print(f"\n{'='*10} {title} {'='*10}")


def agent_summary(frame: pd.DataFrame) -> pd.DataFrame:
    """Speed statistics and distance driven per agent."""
    def per_agent(rows: pd.DataFrame) -> pd.Series:
        steps = np.hypot(rows["x"].diff(), rows["y"].diff()).fillna(0.0)
        return pd.Series({
            "rows": len(rows),
            "v_mean": rows["v"].mean(),
            "v_max": rows["v"].max(),
            "distance_m": steps.sum(),
        })
    return frame.groupby("agent", sort=False)[["x", "y", "v"]].apply(per_agent)


def lane_time(frame: pd.DataFrame) -> pd.Series:
    """Seconds the ego spent following each lane."""
    ego = frame[frame["agent"] == EGO]
    dt = ego["t"].diff().median() if len(ego) > 1 else 0.0
    counts = ego["lane"].map(LANE_NAMES).value_counts()
    return (counts * dt).rename("seconds")


def decision_counts(frame: pd.DataFrame) -> pd.Series:
    decisions = frame.loc[(frame["agent"] == EGO) & (frame["decision"] != ""), "decision"]
    return decisions.value_counts().rename("count")


def main():
    parser = argparse.ArgumentParser(description="Summarize a race trace CSV.")
    parser.add_argument('trace', help='Path to trace.csv')
    parser.add_argument('--csv', default=None, help='Also write the per-agent summary to this CSV')
    args = parser.parse_args()

    try:
        frame = read_trace(args.trace)
    except (RaceStackError, FileNotFoundError) as e:
        print(f"[ERROR] {e}")
        sys.exit(1)

    print_section("Trace")
    print(f"Loaded: {args.trace}")
    print(f"Rows: {len(frame):,}, agents: {frame['agent'].nunique()}, duration: {frame['t'].max():.2f}s")

    summary = agent_summary(frame)
    print_section("Agents")
    print(summary.round(3))

    print_section("Ego Lane Time")
    print(lane_time(frame).round(2))

    print_section("Planner Decisions")
    counts = decision_counts(frame)
    print(counts if not counts.empty else "No planner decisions recorded.")

    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        summary.to_csv(args.csv)
        print(f"\nAgent summary exported to: {args.csv}")


if __name__ == "__main__":
    main()
