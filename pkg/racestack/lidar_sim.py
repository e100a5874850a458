#!/usr/bin/env python3
"""
lidar_sim.py

Planar raycast LiDAR.

Every beam is intersected with all NPC box edges and wall segments in range;
the nearest hit becomes one point in the ego frame (x forward, y left), with
gaussian range noise. Beams that hit nothing return no point. Noise comes from
a generator seeded with (seed, scan index), so a scan depends only on the
world snapshot, the seed and the stamp.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from racestack.track_geometry import Pose
from racestack.utils.common import GeometryError

NOISE_CLIP_SIGMAS = 5.0


@dataclass(frozen=True)
class LidarConfig:
    beam_count: int = 720
    fov: float = 2.0 * math.pi
    max_range: float = 120.0
    rate: float = 10.0
    noise_sigma: float = 0.02
    seed: int = 42

    def __post_init__(self):
        if self.beam_count < 36:
            raise GeometryError(f"beam_count must be >= 36, got {self.beam_count}")
        if not 0 < self.fov <= 2.0 * math.pi + 1e-12:
            raise GeometryError(f"fov must be in (0, 2pi], got {self.fov}")
        if not self.max_range > 0:
            raise GeometryError(f"max_range must be positive, got {self.max_range}")
        if not self.rate > 0:
            raise GeometryError(f"rate must be positive, got {self.rate}")
        if self.noise_sigma < 0:
            raise GeometryError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.seed < 0:
            raise GeometryError(f"seed must be >= 0, got {self.seed}")

    @property
    def full_circle(self) -> bool:
        return self.fov >= 2.0 * math.pi - 1e-12

    def beam_angles(self) -> np.ndarray:
        """Beam azimuths relative to the ego heading, in beam-index order."""
        if self.full_circle:
            step = self.fov / self.beam_count
        else:
            step = self.fov / (self.beam_count - 1)
        return -self.fov / 2.0 + step * np.arange(self.beam_count)

    def scan_index(self, stamp: float) -> int:
        return int(round(stamp * self.rate))


@dataclass(frozen=True)
class OrientedBox:
    """Vehicle footprint: center, heading and full length/width."""

    x: float
    y: float
    yaw: float
    length: float = 5.0
    width: float = 1.9

    def axes(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        """Counter-clockwise corners starting front-left."""
        forward, left = self.axes()
        hl, hw = self.length / 2.0, self.width / 2.0
        center = np.array([self.x, self.y])
        return np.array([
            center + hl * forward + hw * left,
            center - hl * forward + hw * left,
            center - hl * forward - hw * left,
            center + hl * forward - hw * left,
        ])

    def edges(self) -> np.ndarray:
        """(4, 2, 2) array of edge start/end points."""
        corners = self.corners()
        return np.stack([corners, np.roll(corners, -1, axis=0)], axis=1)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    stamp: float
    beams: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, stamp: float = 0.0) -> "PointCloud":
        return cls(np.zeros((0, 2)), stamp, np.zeros(0, dtype=int))


def polyline_segments(polyline: np.ndarray, closed: bool = True) -> np.ndarray:
    pts = np.asarray(polyline, dtype=float)
    ends = np.roll(pts, -1, axis=0) if closed else pts[1:]
    starts = pts if closed else pts[:-1]
    return np.stack([starts, ends], axis=1)


def _segments_in_range(segments: np.ndarray, origin: np.ndarray, max_range: float) -> np.ndarray:
    if len(segments) == 0:
        return segments
    lengths = np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1)
    d_start = np.linalg.norm(segments[:, 0] - origin, axis=1)
    d_end = np.linalg.norm(segments[:, 1] - origin, axis=1)
    near = np.minimum(d_start, d_end) <= max_range + lengths
    return segments[near]


def cast_rays(origin: np.ndarray, directions: np.ndarray, segments: np.ndarray,
              max_range: float) -> np.ndarray:
    """Distance to the first segment hit for every ray; inf where nothing is hit."""
    hits = np.full(len(directions), np.inf)
    if len(segments) == 0:
        return hits
    p = segments[:, 0]
    e = segments[:, 1] - p
    w = p - origin
    dx, dy = directions[:, 0:1], directions[:, 1:2]
    denom = dx * e[:, 1] - dy * e[:, 0]
    w_cross_e = w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]
    w_cross_d = w[:, 0] * dy - w[:, 1] * dx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = w_cross_e / denom
        u = w_cross_d / denom
    valid = (denom != 0.0) & (t >= 0.0) & (t <= max_range) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    return t.min(axis=1)


def scan(ego_pose: Pose, npc_boxes: Iterable[OrientedBox], wall_polylines: Sequence[np.ndarray],
         config: LidarConfig, stamp: float = 0.0) -> PointCloud:
    """
    One sweep from `ego_pose` against NPC boxes and closed wall polylines.

    Returns points in the ego frame ordered by beam index.
    """
    origin = np.array([ego_pose.x, ego_pose.y], dtype=float)
    pieces: List[np.ndarray] = [box.edges() for box in npc_boxes]
    pieces.extend(polyline_segments(wall) for wall in wall_polylines)
    segments = np.concatenate(pieces, axis=0) if pieces else np.zeros((0, 2, 2))
    segments = _segments_in_range(segments, origin, config.max_range)

    angles = config.beam_angles()
    world_angles = ego_pose.yaw + angles
    directions = np.column_stack([np.cos(world_angles), np.sin(world_angles)])
    ranges = cast_rays(origin, directions, segments, config.max_range)

    hit = np.isfinite(ranges)
    if config.noise_sigma > 0:
        rng = np.random.default_rng([config.seed, config.scan_index(stamp)])
        noise = np.clip(rng.normal(size=config.beam_count), -NOISE_CLIP_SIGMAS, NOISE_CLIP_SIGMAS)
        ranges = np.where(hit, np.maximum(ranges + config.noise_sigma * noise, 0.0), ranges)

    beams = np.flatnonzero(hit)
    r = ranges[beams]
    points = np.column_stack([r * np.cos(angles[beams]), r * np.sin(angles[beams])])
    return PointCloud(points, float(stamp), beams)


def to_world(points: np.ndarray, pose: Pose) -> np.ndarray:
    """Ego-frame points to world frame."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.column_stack([
        pose.x + c * pts[:, 0] - s * pts[:, 1],
        pose.y + s * pts[:, 0] + c * pts[:, 1],
    ])
