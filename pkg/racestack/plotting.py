#!/usr/bin/env python3
"""
plotting.py

Static SVG summary of a race trace: lanes with driven paths, the ego's
lateral error against its active lane, and the planner decision timeline.
"""

from pathlib import Path
from typing import Dict, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from racestack.behavior_planner import DecisionKind, parse_decision  # noqa: E402
from racestack.race_sim import EGO, check_trace_frame  # noqa: E402
from racestack.track_geometry import Lane, LaneId, project  # noqa: E402

LANE_STYLES = {
    LaneId.INNER: dict(color="0.6", linestyle="--", linewidth=0.8),
    LaneId.CENTER: dict(color="0.4", linestyle="--", linewidth=0.8),
    LaneId.OUTER: dict(color="0.6", linestyle="--", linewidth=0.8),
    LaneId.OPTIMIZED: dict(color="tab:green", linestyle="-", linewidth=1.2),
}
DECISION_MARKERS = {
    DecisionKind.SWITCH: ("tab:blue", "^"),
    DecisionKind.ENGAGE_OPTIMIZED: ("tab:green", "*"),
    DecisionKind.BRAKE: ("tab:red", "v"),
    DecisionKind.BRAKE_DURING_PAUSE: ("tab:orange", "v"),
}

plt.rcParams["svg.hashsalt"] = "racestack"


def lateral_errors(frame: pd.DataFrame, lanes: Dict[LaneId, Lane]) -> pd.DataFrame:
    """Signed lateral offset of every ego row from the lane it was following."""
    frame = check_trace_frame(frame)
    ego = frame[frame["agent"] == EGO]
    errors = [
        project(lanes[LaneId(int(row.lane))], (row.x, row.y)).lateral
        for row in ego.itertuples(index=False)
    ]
    return pd.DataFrame({"t": ego["t"].to_numpy(dtype=float), "lateral_m": np.asarray(errors, dtype=float)})


def render_race_svg(frame: pd.DataFrame, lanes: Dict[LaneId, Lane],
                    out_path: Union[str, Path], title: str = "Race") -> Path:
    """Write the three-panel SVG and return its path."""
    frame = check_trace_frame(frame)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    fig = plt.figure(figsize=(10, 12))
    grid = fig.add_gridspec(3, 1, height_ratios=[3, 1, 1])
    ax_map = fig.add_subplot(grid[0])
    ax_err = fig.add_subplot(grid[1])
    ax_dec = fig.add_subplot(grid[2], sharex=ax_err)

    for lane_id, lane in lanes.items():
        xy = np.vstack([lane.xy, lane.xy[:1]])
        ax_map.plot(xy[:, 0], xy[:, 1], label=lane_id.name.title(), **LANE_STYLES[lane_id])
    for agent, rows in frame.groupby("agent", sort=True):
        if agent == EGO:
            ax_map.plot(rows["x"], rows["y"], color="tab:red", linewidth=1.5, label="Ego")
        else:
            ax_map.plot(rows["x"], rows["y"], color="tab:purple", linewidth=0.7, alpha=0.7)
    ax_map.set_aspect("equal")
    ax_map.set_xlabel("x [m]")
    ax_map.set_ylabel("y [m]")
    ax_map.set_title(f"{title}: lanes and trajectories")
    ax_map.legend(loc="upper right", fontsize=8)
    ax_map.grid(True, linewidth=0.3)

    errors = lateral_errors(frame, lanes)
    ax_err.plot(errors["t"], errors["lateral_m"], color="tab:red", linewidth=0.8)
    ax_err.axhline(0.0, color="0.5", linewidth=0.5)
    ax_err.set_ylabel("lateral error [m]")
    ax_err.set_title("Control error")
    ax_err.grid(True, linewidth=0.3)

    ego = frame[(frame["agent"] == EGO) & (frame["decision"] != "")]
    ax_dec.step(ego["t"], ego["lane"], where="post", color="0.3", linewidth=0.8)
    for kind, (color, marker) in DECISION_MARKERS.items():
        hits = ego[[parse_decision(d).kind == kind for d in ego["decision"]]]
        if len(hits):
            ax_dec.scatter(hits["t"], hits["lane"], color=color, marker=marker, s=30, label=kind.value, zorder=3)
    ax_dec.set_yticks([int(lane_id) for lane_id in LaneId])
    ax_dec.set_yticklabels([lane_id.name.title() for lane_id in LaneId])
    ax_dec.set_xlabel("t [s]")
    ax_dec.set_title("Decisions")
    ax_dec.legend(loc="upper right", fontsize=8)
    ax_dec.grid(True, linewidth=0.3)

    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path
