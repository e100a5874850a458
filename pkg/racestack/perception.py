#!/usr/bin/env python3
"""
perception.py

Lane occupancy from a planar point cloud.

Points are cropped longitudinally in the ego frame, moved to the world frame
and assigned to the base lane whose sparse centerline is nearest; points
farther than the rejection half-width from every lane (walls, panels) are
discarded. The per-lane point counts feed the lane-switching planner.

Nearest-lane search uses one KD-tree over the sparse Center polyline. The
Center vertex found for a point is mapped to the corresponding vertex of
every lane (precomputed anchors), and the exact point-to-segment distance is
evaluated on the few segments around it. Base lanes are parallel offsets, so
the true nearest segment is always among those examined.
"""

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from racestack.lidar_sim import PointCloud, to_world
from racestack.track_geometry import BASE_LANES, Lane, LaneId, Pose
from racestack.utils.common import GeometryError, StaleStampError

REJECTED = -1
# Segments examined on each side of the anchor vertex.
ANCHOR_WINDOW = 2


@dataclass(frozen=True)
class CropConfig:
    x_min: float = -10.0
    x_max: float = 100.0
    lane_reject_halfwidth: float = 1.25

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise GeometryError(f"x_min {self.x_min} must be below x_max {self.x_max}")
        if not self.lane_reject_halfwidth > 0:
            raise GeometryError("lane_reject_halfwidth must be positive")


@dataclass(frozen=True, eq=False)
class SparseLaneSet:
    """Decimated Inner/Center/Outer polylines in the world frame."""

    polylines: Tuple[np.ndarray, ...]
    stride: int
    tree: cKDTree = field(init=False, repr=False)
    anchors: Tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.stride < 1:
            raise GeometryError(f"stride must be >= 1, got {self.stride}")
        if len(self.polylines) != len(BASE_LANES):
            raise GeometryError("SparseLaneSet needs exactly three lanes")
        polylines = tuple(np.asarray(p, dtype=float) for p in self.polylines)
        if any(len(p) < 2 for p in polylines):
            raise GeometryError("Sparse polylines need at least two vertices")
        center = polylines[LaneId.CENTER]
        tree = cKDTree(center)
        anchors = tuple(cKDTree(p).query(center)[1].astype(int) for p in polylines)
        object.__setattr__(self, "polylines", polylines)
        object.__setattr__(self, "tree", tree)
        object.__setattr__(self, "anchors", anchors)

    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(p) for p in self.polylines)


@dataclass(frozen=True)
class LaneOccupancy:
    counts: Tuple[int, int, int] = (0, 0, 0)
    prev: Tuple[int, int, int] = (0, 0, 0)
    stamp: float = -math.inf

    def __post_init__(self):
        if any(c < 0 for c in self.counts) or any(c < 0 for c in self.prev):
            raise GeometryError("Lane counts must be non-negative")


def crop(cloud: PointCloud, ego_pose: Pose, config: CropConfig) -> PointCloud:
    """Keep points with x_min <= x <= x_max in the ego frame."""
    x = cloud.points[:, 0] if len(cloud) else np.zeros(0)
    keep = (x >= config.x_min) & (x <= config.x_max)
    beams = cloud.beams[keep] if cloud.beams is not None else None
    return PointCloud(cloud.points[keep], cloud.stamp, beams)


def make_sparse(lanes: Union[Mapping[LaneId, Lane], Sequence[Lane]], stride: int) -> SparseLaneSet:
    """Every `stride`-th waypoint of the three base lanes."""
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if isinstance(lanes, Mapping):
        ordered = [lanes[lane_id] for lane_id in BASE_LANES]
    else:
        ordered = list(lanes)
    return SparseLaneSet(tuple(np.asarray(lane.xy)[::stride] for lane in ordered), stride)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    ap = points - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, np.einsum("ij,ij->i", ap, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.hypot(points[:, 0] - closest[:, 0], points[:, 1] - closest[:, 1])


def lane_distances(world_points: np.ndarray, sparse: SparseLaneSet) -> np.ndarray:
    """(3, M) distance from each point to each sparse lane polyline."""
    m = len(world_points)
    distances = np.full((len(sparse.polylines), m), np.inf)
    if m == 0:
        return distances
    _, center_index = sparse.tree.query(world_points)
    for lane, (polyline, anchor) in enumerate(zip(sparse.polylines, sparse.anchors)):
        n = len(polyline)
        base = anchor[center_index]
        for offset in range(-ANCHOR_WINDOW, ANCHOR_WINDOW):
            start = (base + offset) % n
            d = _segment_distance(world_points, polyline[start], polyline[(start + 1) % n])
            np.minimum(distances[lane], d, out=distances[lane])
    return distances


def label_points(cloud: PointCloud, ego_pose: Pose, sparse: SparseLaneSet,
                 reject_halfwidth: float) -> np.ndarray:
    """Lane index per point (ties to the lower index), REJECTED beyond the half-width."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=int)
    distances = lane_distances(to_world(cloud.points, ego_pose), sparse)
    labels = np.argmin(distances, axis=0)
    nearest = distances[labels, np.arange(distances.shape[1])]
    labels[nearest > reject_halfwidth] = REJECTED
    return labels


def classify(cloud: PointCloud, ego_pose: Pose, sparse: SparseLaneSet,
             reject_halfwidth: float) -> Tuple[int, int, int]:
    """Per-lane point counts [l0, l1, l2] of an already cropped cloud."""
    labels = label_points(cloud, ego_pose, sparse, reject_halfwidth)
    counts = np.bincount(labels[labels != REJECTED], minlength=len(BASE_LANES))
    return tuple(int(c) for c in counts[:len(BASE_LANES)])


def update_occupancy(state: LaneOccupancy, counts: Sequence[int], stamp: float) -> LaneOccupancy:
    """Shift current counts into prev and store the new scan."""
    if not stamp > state.stamp:
        raise StaleStampError(f"Occupancy stamp {stamp} is not after {state.stamp}")
    new_counts = tuple(int(c) for c in counts)
    if len(new_counts) != len(BASE_LANES):
        raise GeometryError(f"Expected {len(BASE_LANES)} lane counts, got {len(new_counts)}")
    return LaneOccupancy(counts=new_counts, prev=state.counts, stamp=float(stamp))


def perceive(cloud: PointCloud, ego_pose: Pose, sparse: SparseLaneSet,
             config: CropConfig) -> Tuple[int, int, int]:
    """Crop then classify."""
    return classify(crop(cloud, ego_pose, config), ego_pose, sparse, config.lane_reject_halfwidth)
