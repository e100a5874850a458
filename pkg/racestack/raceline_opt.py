#!/usr/bin/env python3
"""
raceline_opt.py

Minimum-curvature raceline and curvature-limited speed profiles.

The raceline is the centerline displaced by alpha[i] along the left normal.
Curvature is linearized in alpha,

    kappa(alpha) ~= kappa0 + (diag(kappa0^2) + D / ds^2) alpha

with D the cyclic second-difference operator, and the sum of squared
curvatures is minimized over the box |alpha| <= alpha_max. The default solver
is a box-projected Newton method with Armijo backtracking on the projection
arc; a projected-gradient variant is kept for comparison. Both only accept
steps that lower the cost, so the cost history is non-increasing.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from racestack.track_geometry import (
    BASE_LANES,
    Lane,
    LaneId,
    TrackModel,
    build_base_lanes,
    resample_closed,
)
from racestack.utils.common import GeometryError

logger = logging.getLogger(__name__)

METHODS = ("newton", "gradient")
ARMIJO_SIGMA = 1e-4
MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class SpeedLimits:
    v_cap: float = 50.0
    a_lat_max: float = 12.0
    a_accel_max: float = 6.0
    a_brake_max: float = 10.0

    def __post_init__(self):
        for name in ("v_cap", "a_lat_max", "a_accel_max", "a_brake_max"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(eq=False)
class RacelineProblem:
    track: TrackModel
    alpha_max: Union[float, np.ndarray, None] = None
    car_half_width: float = 0.95
    iterations: int = 2000
    step_size: float = 1.0
    tolerance: float = 1e-9
    method: str = "newton"

    def __post_init__(self):
        room = np.minimum(self.track.half_width_left, self.track.half_width_right) - self.car_half_width
        if self.alpha_max is None:
            self.alpha_max = np.maximum(room, 0.0)
        bound = np.broadcast_to(np.asarray(self.alpha_max, dtype=float), (self.track.n,)).copy()
        if np.any(bound < 0):
            raise GeometryError("alpha_max must be non-negative")
        if np.any(bound > room + 1e-9):
            raise GeometryError("alpha_max exceeds half-width minus car half-width")
        if self.iterations < 1:
            raise GeometryError(f"iterations must be >= 1, got {self.iterations}")
        if not self.step_size > 0:
            raise GeometryError(f"step_size must be positive, got {self.step_size}")
        if self.method not in METHODS:
            raise GeometryError(f"Unknown method {self.method!r}, expected one of {METHODS}")
        self.alpha_max = bound


@dataclass(eq=False)
class RacelineResult:
    lane: Lane
    alpha: np.ndarray
    converged: bool
    iterations: int
    cost_history: List[float] = field(default_factory=list)

    @property
    def initial_cost(self) -> float:
        return self.cost_history[0]

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]


def curvature_operator(track: TrackModel) -> sp.csr_matrix:
    """Sparse K with kappa(alpha) ~= kappa0 + K alpha."""
    n = track.n
    ds = track.spacing
    second_diff = sp.diags(
        [np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="lil"
    )
    second_diff[0, n - 1] = 1.0
    second_diff[n - 1, 0] = 1.0
    return (sp.diags(track.curvature ** 2) + second_diff.tocsr() / ds ** 2).tocsr()


def squared_curvature(lane_or_track) -> float:
    """Sum of kappa^2 * ds over a closed polyline."""
    xy = lane_or_track.xy
    kappa = lane_or_track.curvature
    ds = np.linalg.norm(np.roll(xy, -1, axis=0) - xy, axis=1)
    return float(np.sum(kappa ** 2 * ds))


class _CurvatureObjective:
    """f(alpha) = 0.5 * ds * ||kappa0 + K alpha||^2."""

    def __init__(self, track: TrackModel):
        self.kappa0 = np.asarray(track.curvature, dtype=float)
        self.ds = track.spacing
        self.K = curvature_operator(track)
        H = (self.K.T @ self.K) * self.ds
        reg = 1e-12 * max(float(H.diagonal().max()), 1e-30)
        self.H = (H + reg * sp.identity(track.n)).tocsr()

    def value(self, alpha: np.ndarray) -> float:
        r = self.kappa0 + self.K @ alpha
        return 0.5 * self.ds * float(r @ r)

    def gradient(self, alpha: np.ndarray) -> np.ndarray:
        return self.ds * (self.K.T @ (self.kappa0 + self.K @ alpha))


def _projected_search(objective: _CurvatureObjective, alpha: np.ndarray, f: float, g: np.ndarray,
                      direction: np.ndarray, t0: float, lo: np.ndarray,
                      hi: np.ndarray) -> Optional[Tuple[np.ndarray, float]]:
    """Armijo backtracking along the projection arc; only strict decreases are accepted."""
    t = t0
    for _ in range(MAX_BACKTRACKS):
        candidate = np.clip(alpha + t * direction, lo, hi)
        fc = objective.value(candidate)
        if fc < f and fc <= f + ARMIJO_SIGMA * float(g @ (candidate - alpha)):
            return candidate, fc
        t *= 0.5
    return None


def optimize_min_curvature(problem: RacelineProblem) -> RacelineResult:
    """
    Minimize squared curvature of centerline + alpha * normal within the box.

    Non-convergence within `iterations` is not an error: the best iterate is
    returned with `converged=False` and a warning is logged.
    """
    track = problem.track
    hi = np.asarray(problem.alpha_max, dtype=float)
    lo = -hi
    objective = _CurvatureObjective(track)
    alpha = np.zeros(track.n)
    f = objective.value(alpha)
    history = [f]
    diag = objective.H.diagonal()
    lipschitz = float(np.abs(objective.H).sum(axis=1).max())

    converged = False
    iteration = 0
    for iteration in range(1, problem.iterations + 1):
        g = objective.gradient(alpha)
        pg_norm = float(np.abs(alpha - np.clip(alpha - g, lo, hi)).max())
        if pg_norm <= problem.tolerance:
            converged = True
            iteration -= 1
            break

        step = None
        if problem.method == "newton":
            eps = min(1e-3, pg_norm)
            active = ((alpha <= lo + eps) & (g > 0)) | ((alpha >= hi - eps) & (g < 0))
            free = ~active
            direction = -g / np.maximum(diag, 1e-30)
            idx = np.flatnonzero(free)
            if idx.size:
                H_ff = objective.H[idx][:, idx].tocsc()
                try:
                    with np.errstate(all="ignore"):
                        newton = np.atleast_1d(spsolve(H_ff, -g[idx]))
                except RuntimeError:
                    newton = np.full(idx.size, np.nan)
                if np.all(np.isfinite(newton)):
                    direction[idx] = newton
            step = _projected_search(objective, alpha, f, g, direction, problem.step_size, lo, hi)

        if step is None:
            step = _projected_search(objective, alpha, f, g, -g, problem.step_size / lipschitz, lo, hi)
        if step is None:
            # No representable decrease left along either direction.
            converged = pg_norm <= max(problem.tolerance, 1e-7)
            break

        alpha, f = step
        history.append(f)

    if not converged:
        logger.warning(
            f"Raceline optimizer stopped after {iteration} iterations without converging; "
            f"returning best iterate (cost {f:.6e})"
        )

    points = track.centerline + alpha[:, None] * track.normals
    lane = Lane.from_xy(LaneId.OPTIMIZED, resample_closed(points, track.spacing))
    return RacelineResult(lane=lane, alpha=alpha, converged=converged,
                          iterations=iteration, cost_history=history)


def velocity_profile(lane: Lane, limits: SpeedLimits, max_sweeps: int = 50) -> Lane:
    """
    Curvature-capped speeds shaped by cyclic forward/backward passes.

    v[i] <= min(v_cap, sqrt(a_lat_max / |kappa[i]|)),
    v[i+1]^2 <= v[i]^2 + 2 a_accel_max ds, v[i]^2 <= v[i+1]^2 + 2 a_brake_max ds,
    repeated around the loop until nothing changes.
    """
    kappa = np.abs(np.asarray(lane.curvature, dtype=float))
    v = np.full(lane.n, limits.v_cap)
    curved = kappa > 1e-12
    v[curved] = np.minimum(limits.v_cap, np.sqrt(limits.a_lat_max / kappa[curved]))
    ds = lane.segment_lengths
    n = lane.n

    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            j = (i + 1) % n
            reach = np.sqrt(v[i] ** 2 + 2.0 * limits.a_accel_max * ds[i])
            if v[j] > reach:
                v[j] = reach
                changed = True
        for i in range(n - 1, -1, -1):
            j = (i + 1) % n
            reach = np.sqrt(v[j] ** 2 + 2.0 * limits.a_brake_max * ds[i])
            if v[i] > reach:
                v[i] = reach
                changed = True
        if not changed:
            break
    else:
        logger.warning("velocity_profile hit the sweep limit before reaching a fixed point")

    return lane.with_speeds(v)


def build_lane_set(track: TrackModel, limits: SpeedLimits,
                   problem: Optional[RacelineProblem] = None) -> Tuple[Dict[LaneId, Lane], RacelineResult]:
    """Inner/Center/Outer plus the optimized raceline, all with speed profiles."""
    lanes = {lane_id: velocity_profile(lane, limits) for lane_id, lane in build_base_lanes(track).items()}
    result = optimize_min_curvature(problem or RacelineProblem(track))
    lanes[LaneId.OPTIMIZED] = velocity_profile(result.lane, limits)
    logger.info(
        f"Built {len(BASE_LANES)} base lanes and optimized raceline "
        f"(cost {result.initial_cost:.3e} -> {result.final_cost:.3e}, {result.iterations} iterations)"
    )
    return lanes, result
