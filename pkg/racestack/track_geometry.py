#!/usr/bin/env python3
"""
track_geometry.py

Closed race track model and the lanes derived from it.

A TrackModel is a cyclic centerline with per-sample half-widths. Lanes are
arc-length-resampled offsets of that centerline along its left normal, so a
positive offset on a counter-clockwise oval moves toward the infield (Inner).
Every other module indexes lanes cyclically and relies on `project` and
`arc_position` for nearest-waypoint queries.

Usage:
    track = generate_oval(300.0, 100.0, 15.0, 2.0)
    lanes = build_base_lanes(track)
    index, distance, lateral = project(lanes[LaneId.CENTER], (0.0, -99.0))
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from racestack.utils.common import GeometryError, TrackFormatError

logger = logging.getLogger(__name__)

TRACK_COLUMNS = ["x_m", "y_m", "w_tr_right_m", "w_tr_left_m"]
LANE_COLUMNS = ["x_m", "y_m", "heading_rad", "kappa_1pm", "v_mps"]
MIN_SAMPLES = 64
CLOSURE_FACTOR = 1.5
OPEN_LOOP_FACTOR = 10.0
# Placeholder speed until velocity_profile fills the lane.
DEFAULT_TARGET_SPEED = 20.0
TIE_TOLERANCE = 1e-9
# Arc positions this close to the perimeter wrap to 0.
SEAM_TOLERANCE = 1e-6


class LaneId(IntEnum):
    INNER = 0
    CENTER = 1
    OUTER = 2
    OPTIMIZED = 3


BASE_LANES = (LaneId.INNER, LaneId.CENTER, LaneId.OUTER)


class Pose(NamedTuple):
    x: float
    y: float
    yaw: float


class Projection(NamedTuple):
    index: int
    distance: float
    lateral: float


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)


def cyclic_headings(xy: np.ndarray) -> np.ndarray:
    """Heading at each sample from the central difference of its neighbours."""
    delta = np.roll(xy, -1, axis=0) - np.roll(xy, 1, axis=0)
    return np.arctan2(delta[:, 1], delta[:, 0])


def cyclic_curvature(xy: np.ndarray) -> np.ndarray:
    """Signed circumscribed-circle curvature of every cyclic triple (left turns positive)."""
    a = np.roll(xy, 1, axis=0)
    c = np.roll(xy, -1, axis=0)
    ab = xy - a
    bc = c - xy
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = np.linalg.norm(ab, axis=1) * np.linalg.norm(bc, axis=1) * np.linalg.norm(c - a, axis=1)
    kappa = np.zeros(len(xy))
    valid = denom > 0.0
    kappa[valid] = 2.0 * cross[valid] / denom[valid]
    return kappa


def left_normals(heading: np.ndarray) -> np.ndarray:
    return np.column_stack([-np.sin(heading), np.cos(heading)])


def _closed_spline(xy: np.ndarray) -> Tuple[CubicSpline, np.ndarray, float]:
    """Periodic cubic spline over chord length; duplicate samples are dropped."""
    seg = np.linalg.norm(np.diff(np.vstack([xy, xy[:1]]), axis=0), axis=1)
    keep = seg > 1e-9
    if keep.sum() < 3:
        raise GeometryError("Polyline collapses to fewer than 3 distinct points")
    pts = xy[keep]
    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(seg)])
    spline = CubicSpline(knots, np.vstack([pts, pts[:1]]), axis=0, bc_type="periodic")
    return spline, knots, float(knots[-1])


def resample_closed(xy: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a closed polyline to uniform arc steps close to `spacing`."""
    if spacing <= 0:
        raise GeometryError(f"spacing must be positive, got {spacing}")
    spline, _, perimeter = _closed_spline(np.asarray(xy, dtype=float))
    n = max(3, int(round(perimeter / spacing)))
    return spline(np.arange(n) * perimeter / n)


@dataclass(frozen=True, eq=False)
class TrackModel:
    """Closed centerline with per-sample half-widths."""

    centerline: np.ndarray
    half_width_left: np.ndarray
    half_width_right: np.ndarray
    spacing: float
    heading: np.ndarray = field(init=False, repr=False)
    curvature: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        xy = np.array(self.centerline, dtype=float)
        n = len(xy)
        wl = np.broadcast_to(np.asarray(self.half_width_left, dtype=float), (n,)).copy()
        wr = np.broadcast_to(np.asarray(self.half_width_right, dtype=float), (n,)).copy()

        if xy.ndim != 2 or xy.shape[1] != 2:
            raise GeometryError("centerline must be an (N, 2) array")
        if n < MIN_SAMPLES:
            raise GeometryError(f"Track needs at least {MIN_SAMPLES} samples, got {n}")
        if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(wl)) and np.all(np.isfinite(wr))):
            raise GeometryError("Track contains non-finite values")
        if np.any(wl <= 0) or np.any(wr <= 0):
            raise GeometryError("All half-widths must be positive")
        if not self.spacing > 0:
            raise GeometryError(f"spacing must be positive, got {self.spacing}")
        gap = float(np.linalg.norm(xy[-1] - xy[0]))
        if gap > CLOSURE_FACTOR * self.spacing:
            raise GeometryError(f"Track is not closed: endpoint gap {gap:.3f} m")
        steps = np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)
        if np.any(steps < 0.8 * self.spacing) or np.any(steps > 1.2 * self.spacing):
            raise GeometryError(
                f"Sample spacing {steps.min():.3f}..{steps.max():.3f} m outside 20% of {self.spacing:.3f} m"
            )

        for arr in (xy, wl, wr):
            arr.setflags(write=False)
        heading = cyclic_headings(xy)
        curvature = cyclic_curvature(xy)
        heading.setflags(write=False)
        curvature.setflags(write=False)
        object.__setattr__(self, "centerline", xy)
        object.__setattr__(self, "half_width_left", wl)
        object.__setattr__(self, "half_width_right", wr)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "heading", heading)
        object.__setattr__(self, "curvature", curvature)

    @classmethod
    def from_points(cls, xy: np.ndarray, half_width_left, half_width_right,
                    spacing: float) -> "TrackModel":
        """Resample an arbitrary closed polyline (and its widths) to `spacing`."""
        xy = np.asarray(xy, dtype=float)
        spline, knots, perimeter = _closed_spline(xy)
        n = max(3, int(round(perimeter / spacing)))
        s = np.arange(n) * perimeter / n
        seg = np.linalg.norm(np.diff(np.vstack([xy, xy[:1]]), axis=0), axis=1)
        keep = seg > 1e-9

        def _resample_width(w):
            w = np.broadcast_to(np.asarray(w, dtype=float), (len(xy),))[keep]
            return np.interp(s, knots, np.append(w, w[0]))

        return cls(spline(s), _resample_width(half_width_left),
                   _resample_width(half_width_right), perimeter / n)

    @property
    def xy(self) -> np.ndarray:
        return self.centerline

    @property
    def n(self) -> int:
        return len(self.centerline)

    @property
    def normals(self) -> np.ndarray:
        return left_normals(self.heading)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.roll(self.centerline, -1, axis=0) - self.centerline, axis=1)

    @property
    def arc_lengths(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)[:-1]])

    @property
    def perimeter(self) -> float:
        return float(self.segment_lengths.sum())

    @property
    def min_half_width(self) -> float:
        return float(min(self.half_width_left.min(), self.half_width_right.min()))


@dataclass(frozen=True, eq=False)
class Lane:
    """Cyclic waypoint sequence: position, heading, curvature, target speed."""

    id: LaneId
    xy: np.ndarray
    heading: np.ndarray
    curvature: np.ndarray
    target_speed: np.ndarray

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float)
        n = len(xy)
        if n < 3:
            raise GeometryError("A lane needs at least 3 waypoints")
        arrays = {}
        for name in ("heading", "curvature", "target_speed"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise GeometryError(f"Lane {name} must have shape ({n},), got {arr.shape}")
            arrays[name] = arr
        if np.any(arrays["target_speed"] <= 0):
            raise GeometryError("Lane target speeds must be positive")
        object.__setattr__(self, "id", LaneId(self.id))
        for name, arr in [("xy", xy)] + list(arrays.items()):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_xy(cls, lane_id: LaneId, xy: np.ndarray,
                target_speed: Union[float, np.ndarray, None] = None) -> "Lane":
        xy = np.asarray(xy, dtype=float)
        if target_speed is None:
            target_speed = DEFAULT_TARGET_SPEED
        speed = np.broadcast_to(np.asarray(target_speed, dtype=float), (len(xy),))
        return cls(lane_id, xy, cyclic_headings(xy), cyclic_curvature(xy), speed)

    def with_speeds(self, speeds: np.ndarray) -> "Lane":
        return replace(self, target_speed=np.asarray(speeds, dtype=float))

    @property
    def n(self) -> int:
        return len(self.xy)

    @property
    def waypoints(self) -> np.ndarray:
        """(N, 5) array of x, y, heading, curvature, target speed."""
        return np.column_stack([self.xy, self.heading, self.curvature, self.target_speed])

    @property
    def segment_lengths(self) -> np.ndarray:
        """Length of segment i -> i+1, cyclic."""
        return np.linalg.norm(np.roll(self.xy, -1, axis=0) - self.xy, axis=1)

    @property
    def arc_lengths(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)[:-1]])

    @property
    def total_length(self) -> float:
        return float(self.segment_lengths.sum())


def generate_oval(straight_length: float, turn_radius: float, track_width: float,
                  spacing: float) -> TrackModel:
    """
    Counter-clockwise stadium: two straights parallel to x and two semicircles.

    Arc length 0 sits at (0, -turn_radius) on the bottom straight, heading +x.
    A zero straight length gives a circle.
    """
    values = {"straight_length": straight_length, "turn_radius": turn_radius,
              "track_width": track_width, "spacing": spacing}
    for name, value in values.items():
        if not math.isfinite(value):
            raise GeometryError(f"{name} must be finite, got {value}")
    if straight_length < 0:
        raise GeometryError(f"straight_length must be >= 0, got {straight_length}")
    for name in ("turn_radius", "track_width", "spacing"):
        if values[name] <= 0:
            raise GeometryError(f"{name} must be positive, got {values[name]}")
    if spacing >= turn_radius / 4.0:
        raise GeometryError(f"spacing {spacing} must be below turn_radius/4 = {turn_radius / 4.0}")
    if track_width / 2.0 >= turn_radius:
        raise GeometryError("track_width/2 must be smaller than turn_radius")

    S, R = float(straight_length), float(turn_radius)
    perimeter = 2.0 * S + 2.0 * math.pi * R
    n = int(round(perimeter / spacing))
    if n < MIN_SAMPLES:
        raise GeometryError(f"Oval yields {n} samples, need at least {MIN_SAMPLES}")
    s = np.arange(n) * perimeter / n

    b1 = S / 2.0
    b2 = b1 + math.pi * R
    b3 = b2 + S
    b4 = b3 + math.pi * R
    theta_right = (s - b1) / R
    theta_left = (s - b3) / R
    x = np.select(
        [s < b1, s < b2, s < b3, s < b4],
        [s, b1 + R * np.sin(theta_right), b1 - (s - b2), -b1 - R * np.sin(theta_left)],
        default=-b1 + (s - b4),
    )
    y = np.select(
        [s < b1, s < b2, s < b3, s < b4],
        [np.full(n, -R), -R * np.cos(theta_right), np.full(n, R), R * np.cos(theta_left)],
        default=-R,
    )
    half = track_width / 2.0
    return TrackModel(np.column_stack([x, y]), np.full(n, half), np.full(n, half), perimeter / n)


def load_centerline(path: Union[str, Path], spacing: Optional[float] = None) -> TrackModel:
    """
    Read a `x_m,y_m,w_tr_right_m,w_tr_left_m` CSV and resample it.

    Lines starting with '#' are ignored. A repeated first point at the end is
    dropped; an endpoint gap above 10x the spacing is an open loop.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, comment="#", skipinitialspace=True, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TrackFormatError(f"{path}: cannot parse track CSV: {e}") from e

    columns = [str(c).strip() for c in df.columns]
    if columns != TRACK_COLUMNS:
        raise TrackFormatError(f"{path}: expected header {','.join(TRACK_COLUMNS)}, got {','.join(columns)}")
    df.columns = columns

    numeric = df.apply(pd.to_numeric, errors="coerce")
    bad_rows = numeric.index[numeric.isna().any(axis=1)]
    if len(bad_rows) > 0:
        raise TrackFormatError(f"{path}: malformed row {int(bad_rows[0]) + 2}")
    if len(numeric) < MIN_SAMPLES:
        raise TrackFormatError(f"{path}: {len(numeric)} rows, need at least {MIN_SAMPLES}")

    values = numeric.to_numpy(dtype=float)
    if np.linalg.norm(values[-1, :2] - values[0, :2]) < 1e-6:
        values = values[:-1]
    xy = values[:, :2]
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    nominal = float(spacing) if spacing else float(np.median(seg))
    if nominal <= 0:
        raise TrackFormatError(f"{path}: degenerate sample spacing")
    gap = float(np.linalg.norm(xy[-1] - xy[0]))
    if gap > OPEN_LOOP_FACTOR * nominal:
        raise TrackFormatError(f"{path}: open loop, endpoint gap {gap:.2f} m exceeds {OPEN_LOOP_FACTOR * nominal:.2f} m")

    try:
        track = TrackModel.from_points(xy, values[:, 3], values[:, 2], nominal)
    except GeometryError as e:
        raise TrackFormatError(f"{path}: {e}") from e
    logger.info(f"Loaded track {path.name}: {track.n} samples, perimeter {track.perimeter:.1f} m")
    return track


def lane_offset(track: TrackModel, offset: float, spacing: Optional[float] = None,
                lane_id: LaneId = LaneId.CENTER) -> Lane:
    """Displace the centerline along its left normal by `offset`, then resample."""
    bound = track.half_width_left if offset >= 0 else track.half_width_right
    if abs(offset) >= float(bound.min()):
        raise GeometryError(f"Offset {offset} m leaves the track (half-width {float(bound.min()):.3f} m)")
    points = track.centerline + offset * track.normals
    return Lane.from_xy(lane_id, resample_closed(points, spacing or track.spacing))


def base_lane_offsets(track: TrackModel) -> Dict[LaneId, float]:
    third = track.min_half_width / 3.0
    return {LaneId.INNER: third, LaneId.CENTER: 0.0, LaneId.OUTER: -third}


def build_base_lanes(track: TrackModel, spacing: Optional[float] = None) -> Dict[LaneId, Lane]:
    """Inner/Center/Outer lanes at +w/3, 0, -w/3 of the narrowest half-width."""
    return {lane_id: lane_offset(track, offset, spacing, lane_id)
            for lane_id, offset in base_lane_offsets(track).items()}


def track_edges(track: TrackModel) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right boundary polylines (closed)."""
    normals = track.normals
    left = track.centerline + track.half_width_left[:, None] * normals
    right = track.centerline - track.half_width_right[:, None] * normals
    return left, right


def project(lane, point: Sequence[float]) -> Projection:
    """
    Nearest waypoint of `lane` (anything with `xy` and `heading`) to `point`.

    Returns the cyclic index, the euclidean distance and the lateral offset,
    positive to the left of the waypoint heading. Ties go to the lowest index.
    """
    px, py = float(point[0]), float(point[1])
    d = lane.xy - np.array([px, py])
    dist = np.hypot(d[:, 0], d[:, 1])
    best = dist.min()
    index = int(np.flatnonzero(dist <= best + TIE_TOLERANCE)[0])
    x, y = lane.xy[index]
    h = lane.heading[index]
    lateral = math.cos(h) * (py - y) - math.sin(h) * (px - x)
    return Projection(index, float(dist[index]), float(lateral))


def arc_position(lane, point: Sequence[float]) -> Tuple[float, float]:
    """
    Arc length of `point` along `lane`, refined onto the neighbouring segments.

    Returns (arc length in [0, total_length), distance to the polyline). A point
    on the first waypoint gives exactly 0.
    """
    xy = lane.xy
    n = len(xy)
    seg_len = np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)
    arcs = np.concatenate([[0.0], np.cumsum(seg_len)[:-1]])
    total = float(seg_len.sum())
    index = project(lane, point).index
    p = np.array([float(point[0]), float(point[1])])
    best = None
    for start in ((index - 1) % n, index):
        a = xy[start]
        b = xy[(start + 1) % n]
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        dist = float(np.linalg.norm(a + t * ab - p))
        if best is None or dist < best[1] - TIE_TOLERANCE:
            best = ((arcs[start] + t * seg_len[start]) % total, dist)
    arc, dist = best
    if total - arc < SEAM_TOLERANCE:
        arc = 0.0
    return arc, dist


def curvature_profile(lane) -> np.ndarray:
    """Signed three-point curvature at each waypoint."""
    if len(lane.xy) < 3:
        raise GeometryError("curvature_profile needs at least 3 waypoints")
    return cyclic_curvature(np.asarray(lane.xy, dtype=float))


def lane_ideal_time(lane: Lane) -> float:
    """Time to drive the lane once at its target speeds (trapezoidal in speed)."""
    v = lane.target_speed
    v_next = np.roll(v, -1)
    return float(np.sum(2.0 * lane.segment_lengths / (v + v_next)))


def pose_at_arc(lane: Lane, track: TrackModel, arc: float) -> Pose:
    """Pose on `lane` level with centerline arc length `arc`."""
    s = np.mod(arc, track.perimeter)
    arcs = track.arc_lengths
    xs = np.append(track.centerline[:, 0], track.centerline[0, 0])
    ys = np.append(track.centerline[:, 1], track.centerline[0, 1])
    knots = np.append(arcs, track.perimeter)
    center_point = (float(np.interp(s, knots, xs)), float(np.interp(s, knots, ys)))
    index = project(lane, center_point).index
    x, y = lane.xy[index]
    return Pose(float(x), float(y), float(lane.heading[index]))


def write_lane_csv(lane: Lane, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(lane.waypoints, columns=LANE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.12g")
    return path


def read_lane_csv(path: Union[str, Path], lane_id: LaneId) -> Lane:
    path = Path(path)
    df = pd.read_csv(path, comment="#")
    missing = [c for c in LANE_COLUMNS if c not in df.columns]
    if missing:
        raise TrackFormatError(f"{path}: missing lane columns {missing}")
    values = df[LANE_COLUMNS].to_numpy(dtype=float)
    return Lane(lane_id, values[:, :2], values[:, 2], values[:, 3], values[:, 4])


LANE_FILES = {
    LaneId.INNER: "inner.csv",
    LaneId.CENTER: "center.csv",
    LaneId.OUTER: "outer.csv",
    LaneId.OPTIMIZED: "optimized.csv",
}


def write_lane_set(lanes: Dict[LaneId, Lane], directory: Union[str, Path]) -> Dict[LaneId, Path]:
    directory = Path(directory)
    return {lane_id: write_lane_csv(lanes[lane_id], directory / name)
            for lane_id, name in LANE_FILES.items() if lane_id in lanes}


def read_lane_set(directory: Union[str, Path]) -> Dict[LaneId, Lane]:
    """All four lane CSVs from `directory`."""
    directory = Path(directory)
    missing = [name for name in LANE_FILES.values() if not (directory / name).exists()]
    if missing:
        raise TrackFormatError(f"{directory}: missing lane files {missing}")
    return {lane_id: read_lane_csv(directory / name, lane_id) for lane_id, name in LANE_FILES.items()}
