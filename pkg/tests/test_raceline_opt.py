#!/usr/bin/env python3
"""
Tests for the minimum-curvature raceline and the speed profile.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))
from racestack.raceline_opt import (  # noqa: E402
    RacelineProblem,
    SpeedLimits,
    build_lane_set,
    curvature_operator,
    optimize_min_curvature,
    squared_curvature,
    velocity_profile,
)
from racestack.track_geometry import (  # noqa: E402
    LaneId,
    build_base_lanes,
    curvature_profile,
    generate_oval,
)
from racestack.utils.common import GeometryError  # noqa: E402


@pytest.fixture(scope="module")
def stadium():
    return generate_oval(300.0, 100.0, 15.0, 2.0)


@pytest.fixture(scope="module")
def circle():
    return generate_oval(0.0, 100.0, 15.0, 2.0)


@pytest.fixture(scope="module")
def stadium_result(stadium):
    return optimize_min_curvature(RacelineProblem(stadium))


@pytest.mark.quick
def test_annulus_raceline_hugs_outer_bound(circle):
    """On a circle the widest radius is the least curved line."""
    print("=== Testing Annulus Raceline ===")
    result = optimize_min_curvature(RacelineProblem(circle, alpha_max=5.0))

    assert np.allclose(result.alpha, -5.0, atol=1e-6)
    assert np.allclose(curvature_profile(result.lane), 1.0 / 105.0, rtol=0.02)
    assert squared_curvature(result.lane) < squared_curvature(circle)
    print(f"✅ Annulus raceline radius ~105 m after {result.iterations} iterations")


@pytest.mark.quick
def test_zero_bound_reproduces_centerline(stadium):
    result = optimize_min_curvature(RacelineProblem(stadium, alpha_max=0.0))
    center = build_base_lanes(stadium)[LaneId.CENTER]

    assert result.converged
    assert np.all(result.alpha == 0.0)
    assert np.allclose(result.lane.xy, center.xy, atol=1e-9)


@pytest.mark.quick
def test_stadium_raceline_shape(stadium, stadium_result):
    """Wide on the straights, tight at the turn apex."""
    alpha = stadium_result.alpha
    bound = RacelineProblem(stadium).alpha_max
    apex = int(round((150.0 + math.pi * 100.0 / 2.0) / stadium.spacing))

    assert np.all(np.abs(alpha) <= bound + 1e-12)
    assert alpha[0] < 0.0
    assert alpha[apex] > 0.0
    assert stadium_result.final_cost < stadium_result.initial_cost
    print(f"✅ Raceline alpha: straight {alpha[0]:.2f} m, apex {alpha[apex]:.2f} m")


@pytest.mark.quick
def test_cost_history_is_non_increasing(stadium, stadium_result):
    history = np.asarray(stadium_result.cost_history)
    assert np.all(np.diff(history) <= 0.0)

    gradient = optimize_min_curvature(RacelineProblem(stadium, method="gradient", iterations=200))
    history = np.asarray(gradient.cost_history)
    assert len(history) > 1
    assert np.all(np.diff(history) <= 0.0)
    assert gradient.final_cost >= stadium_result.final_cost - 1e-9
    print("✅ Both solvers only accept decreasing steps")


@pytest.mark.quick
def test_curvature_operator_shape(stadium):
    K = curvature_operator(stadium)
    assert K.shape == (stadium.n, stadium.n)
    # Constant alpha on a straight leaves curvature unchanged.
    row = K.getrow(10).toarray().ravel()
    assert row.sum() == pytest.approx(0.0, abs=1e-9)


@pytest.mark.quick
@pytest.mark.parametrize("kwargs", [
    {"alpha_max": 7.0},
    {"alpha_max": -1.0},
    {"method": "simplex"},
    {"iterations": 0},
])
def test_invalid_problem(circle, kwargs):
    with pytest.raises(GeometryError):
        RacelineProblem(circle, **kwargs)


@pytest.mark.quick
def test_velocity_profile_on_circle(circle):
    limits = SpeedLimits()
    lane = velocity_profile(build_base_lanes(circle)[LaneId.CENTER], limits)
    assert np.allclose(lane.target_speed, math.sqrt(12.0 / 0.01), rtol=1e-3)


@pytest.mark.quick
def test_velocity_profile_constraints(stadium):
    print("\n=== Testing Velocity Profile ===")
    limits = SpeedLimits()
    lane = velocity_profile(build_base_lanes(stadium)[LaneId.CENTER], limits)
    v = lane.target_speed
    kappa = np.abs(lane.curvature)
    ds = lane.segment_lengths
    v_next = np.roll(v, -1)

    cap = np.where(kappa > 1e-12, np.sqrt(limits.a_lat_max / np.maximum(kappa, 1e-12)), np.inf)
    assert np.all(v <= np.minimum(limits.v_cap, cap) + 1e-9)
    assert np.all(v_next ** 2 <= v ** 2 + 2 * limits.a_accel_max * ds + 1e-9)
    assert np.all(v ** 2 <= v_next ** 2 + 2 * limits.a_brake_max * ds + 1e-9)
    assert v.max() == pytest.approx(limits.v_cap)
    assert v.min() == pytest.approx(math.sqrt(12.0 * 100.0), rel=0.01)

    again = velocity_profile(lane, limits)
    assert np.array_equal(again.target_speed, v)
    print(f"✅ Speed profile between {v.min():.2f} and {v.max():.2f} m/s")


@pytest.mark.quick
def test_speed_limits_validation():
    with pytest.raises(GeometryError):
        SpeedLimits(v_cap=0.0)


@pytest.mark.quick
def test_build_lane_set(stadium):
    lanes, result = build_lane_set(stadium, SpeedLimits())
    assert set(lanes) == set(LaneId)
    assert lanes[LaneId.OPTIMIZED].id == LaneId.OPTIMIZED
    for lane in lanes.values():
        assert np.all(lane.target_speed <= 50.0 + 1e-9)
    assert squared_curvature(lanes[LaneId.OPTIMIZED]) < squared_curvature(lanes[LaneId.CENTER])
