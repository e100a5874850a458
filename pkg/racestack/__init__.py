#!/usr/bin/env python3
"""
racestack

Deterministic 2D racing simulator and overtaking stack: lane geometry,
minimum-curvature raceline, planar LiDAR, lane-occupancy perception,
lane-switching planner and MPC tracking.
"""

__version__ = "1.0.0"
__author__ = "RaceStack Team"
