#!/usr/bin/env python3
"""
mpc_control.py

Receding-horizon tracking controller on a kinematic bicycle model.

State z = [x, y, yaw, v], input u = [accel, delta]. The reference segment is
resampled by predicted travel distance, the model is linearized about the
reference and its feed-forward input, and the unconstrained quadratic
problem over the horizon is solved with a backward Riccati recursion
(time-varying LQR on the error system). Only the first input is applied,
clamped to the actuator limits.

Usage:
    config = MpcConfig()
    solution = solve(state, segment, config)
    state = dynamics(state, solution.command, 1.0 / 100, config)
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from racestack.behavior_planner import TrajectorySegment
from racestack.track_geometry import wrap_angle
from racestack.utils.common import ControlError

STATE_DIM = 4
INPUT_DIM = 2
YAW = 2
MIN_REFERENCE_SPEED = 0.5


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    yaw: float
    v: float
    delta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.v], dtype=float)

    @property
    def is_finite(self) -> bool:
        return all(math.isfinite(value) for value in (self.x, self.y, self.yaw, self.v, self.delta))


@dataclass(frozen=True)
class ControlCommand:
    accel: float = 0.0
    delta_cmd: float = 0.0


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 25
    dt: float = 0.06
    w_pos: float = 0.75
    w_yaw: float = 0.75
    w_v: float = 1.0
    w_accel: float = 0.1
    w_delta: float = 500.0
    a_cmd_max: float = 10.0
    delta_max: float = 0.35
    delta_rate_max: float = 0.8
    v_max: float = 60.0
    wheelbase: float = 3.0

    def __post_init__(self):
        if self.horizon < 2:
            raise ControlError(f"horizon must be >= 2, got {self.horizon}")
        if not self.dt > 0:
            raise ControlError(f"dt must be positive, got {self.dt}")
        weights = (self.w_pos, self.w_yaw, self.w_v, self.w_accel, self.w_delta)
        if any(w < 0 for w in weights):
            raise ControlError("MPC weights must be non-negative")
        if not self.w_pos + self.w_yaw + self.w_v > 0:
            raise ControlError("At least one state weight must be positive")
        if not 0 < self.delta_max < math.pi / 2:
            raise ControlError(f"delta_max must be in (0, pi/2), got {self.delta_max}")
        for name in ("a_cmd_max", "delta_rate_max", "v_max", "wheelbase"):
            if not getattr(self, name) > 0:
                raise ControlError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def Q(self) -> np.ndarray:
        return np.diag([self.w_pos, self.w_pos, self.w_yaw, self.w_v])

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.w_accel, self.w_delta])


@dataclass(eq=False)
class MpcSolution:
    command: ControlCommand
    predicted: np.ndarray
    cost: float
    degenerate: bool = False
    raw: Optional[ControlCommand] = None


def _f(z: np.ndarray, u: np.ndarray, wheelbase: float) -> np.ndarray:
    """Continuous bicycle derivatives; broadcasts over leading axes."""
    yaw, v = z[..., 2], z[..., 3]
    accel, delta = u[..., 0], u[..., 1]
    return np.stack([
        v * np.cos(yaw),
        v * np.sin(yaw),
        v * np.tan(delta) / wheelbase,
        accel * np.ones_like(v),
    ], axis=-1)


def _f_jacobians(z: np.ndarray, u: np.ndarray, wheelbase: float) -> Tuple[np.ndarray, np.ndarray]:
    n = z.shape[0]
    yaw, v = z[:, 2], z[:, 3]
    delta = u[:, 1]
    Fz = np.zeros((n, STATE_DIM, STATE_DIM))
    Fz[:, 0, 2] = -v * np.sin(yaw)
    Fz[:, 1, 2] = v * np.cos(yaw)
    Fz[:, 0, 3] = np.cos(yaw)
    Fz[:, 1, 3] = np.sin(yaw)
    Fz[:, 2, 3] = np.tan(delta) / wheelbase
    Fu = np.zeros((n, STATE_DIM, INPUT_DIM))
    Fu[:, 3, 0] = 1.0
    Fu[:, 2, 1] = v / (wheelbase * np.cos(delta) ** 2)
    return Fz, Fu


def _rk4(z: np.ndarray, u: np.ndarray, dt: float, wheelbase: float) -> np.ndarray:
    k1 = _f(z, u, wheelbase)
    k2 = _f(z + 0.5 * dt * k1, u, wheelbase)
    k3 = _f(z + 0.5 * dt * k2, u, wheelbase)
    k4 = _f(z + dt * k3, u, wheelbase)
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_jacobians(z: np.ndarray, u: np.ndarray, dt: float,
                   wheelbase: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact jacobians of one RK4 step (input held), batched over rows of z and u."""
    eye = np.eye(STATE_DIM)[None]
    k1 = _f(z, u, wheelbase)
    Fz, Fu = _f_jacobians(z, u, wheelbase)
    dk1_dz, dk1_du = Fz, Fu

    z2 = z + 0.5 * dt * k1
    k2 = _f(z2, u, wheelbase)
    Fz, Fu = _f_jacobians(z2, u, wheelbase)
    dk2_dz = Fz @ (eye + 0.5 * dt * dk1_dz)
    dk2_du = Fz @ (0.5 * dt * dk1_du) + Fu

    z3 = z + 0.5 * dt * k2
    k3 = _f(z3, u, wheelbase)
    Fz, Fu = _f_jacobians(z3, u, wheelbase)
    dk3_dz = Fz @ (eye + 0.5 * dt * dk2_dz)
    dk3_du = Fz @ (0.5 * dt * dk2_du) + Fu

    z4 = z + dt * k3
    Fz, Fu = _f_jacobians(z4, u, wheelbase)
    dk4_dz = Fz @ (eye + dt * dk3_dz)
    dk4_du = Fz @ (dt * dk3_du) + Fu

    A = eye + dt / 6.0 * (dk1_dz + 2.0 * dk2_dz + 2.0 * dk3_dz + dk4_dz)
    B = dt / 6.0 * (dk1_du + 2.0 * dk2_du + 2.0 * dk3_du + dk4_du)
    return A, B


def applied_steering(state: VehicleState, command: ControlCommand, dt: float,
                     config: MpcConfig) -> float:
    """Steering angle after slewing toward the command for one step."""
    target = float(np.clip(command.delta_cmd, -config.delta_max, config.delta_max))
    max_change = config.delta_rate_max * dt
    delta = state.delta + float(np.clip(target - state.delta, -max_change, max_change))
    return float(np.clip(delta, -config.delta_max, config.delta_max))


def dynamics(state: VehicleState, command: ControlCommand, dt: float,
             config: MpcConfig = MpcConfig()) -> VehicleState:
    """One RK4 step of the kinematic bicycle with steering slew and speed clamp."""
    if not dt > 0:
        raise ControlError(f"dt must be positive, got {dt}")
    accel = float(np.clip(command.accel, -config.a_cmd_max, config.a_cmd_max))
    delta = applied_steering(state, command, dt, config)
    z = _rk4(state.as_array(), np.array([accel, delta]), dt, config.wheelbase)
    return VehicleState(
        x=float(z[0]),
        y=float(z[1]),
        yaw=float(wrap_angle(z[2])),
        v=float(np.clip(z[3], 0.0, config.v_max)),
        delta=delta,
    )


def linearize(ref_state: VehicleState, ref_command: ControlCommand, dt: float,
              config: MpcConfig = MpcConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Discrete jacobians (A 4x4, B 4x2) of one step about the reference.

    The applied steering is taken equal to ``ref_command.delta_cmd``, so the
    slew limit is inactive at the linearization point.
    """
    delta = ref_command.delta_cmd
    if abs(delta) >= math.pi / 2:
        raise ControlError(f"Cannot linearize at |delta| >= pi/2 (got {delta})")
    z = ref_state.as_array()[None]
    u = np.array([[ref_command.accel, delta]])
    A, B = _rk4_jacobians(z, u, dt, config.wheelbase)
    return A[0], B[0]


def riccati_solve(A_seq: np.ndarray, B_seq: np.ndarray, c_seq: np.ndarray, Q: np.ndarray,
                  R: np.ndarray, e0: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Minimize sum_{k=1..N} e_k' Q e_k + sum_{k=0..N-1} w_k' R w_k
    subject to e_{k+1} = A_k e_k + B_k w_k + c_k with e_0 given.

    Returns the optimal input sequence (N, 2), the error trajectory (N+1, 4)
    and the cost.
    """
    n = len(A_seq)
    P = Q.copy()
    p = np.zeros(STATE_DIM)
    gains = np.zeros((n, INPUT_DIM, STATE_DIM))
    offsets = np.zeros((n, INPUT_DIM))

    for k in reversed(range(n)):
        A, B, c = A_seq[k], B_seq[k], c_seq[k]
        M = R + B.T @ P @ B
        try:
            K = -np.linalg.solve(M, B.T @ P @ A)
            kff = -np.linalg.solve(M, B.T @ (P @ c + p))
        except np.linalg.LinAlgError as e:
            raise ControlError(f"Singular Riccati step at k={k}") from e
        gains[k], offsets[k] = K, kff
        A_cl = A + B @ K
        d = B @ kff + c
        Q_k = Q if k > 0 else np.zeros_like(Q)
        P_next = Q_k + K.T @ R @ K + A_cl.T @ P @ A_cl
        p = K.T @ R @ kff + A_cl.T @ (P @ d + p)
        P = 0.5 * (P_next + P_next.T)

    w_seq = np.zeros((n, INPUT_DIM))
    e_seq = np.zeros((n + 1, STATE_DIM))
    e_seq[0] = e0
    cost = 0.0
    for k in range(n):
        w_seq[k] = gains[k] @ e_seq[k] + offsets[k]
        e_seq[k + 1] = A_seq[k] @ e_seq[k] + B_seq[k] @ w_seq[k] + c_seq[k]
        cost += float(w_seq[k] @ R @ w_seq[k] + e_seq[k + 1] @ Q @ e_seq[k + 1])
    return w_seq, e_seq, cost


def _extrapolated_xy(arc: np.ndarray, xy: np.ndarray, heading: np.ndarray,
                     s: np.ndarray) -> np.ndarray:
    out = np.column_stack([np.interp(s, arc, xy[:, 0]), np.interp(s, arc, xy[:, 1])])
    before = s < arc[0]
    after = s > arc[-1]
    for mask, i in ((before, 0), (after, -1)):
        if np.any(mask):
            ds = s[mask] - arc[i]
            out[mask] = xy[i] + ds[:, None] * np.array([math.cos(heading[i]), math.sin(heading[i])])
    return out


def reference_horizon(state: VehicleState, segment: TrajectorySegment,
                      config: MpcConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reference states (N+1, 4) and feed-forward inputs (N, 2).

    Sample k sits at the arc reached by travelling at the reference speed
    for k steps from the ego projection onto the segment.
    """
    arc = segment.arc_lengths
    heading = np.unwrap(segment.heading)
    xy = segment.xy
    t0 = np.array([math.cos(heading[0]), math.sin(heading[0])])
    s = np.empty(config.horizon + 1)
    s[0] = float((np.array([state.x, state.y]) - xy[0]) @ t0)
    for k in range(config.horizon):
        v_ref = float(np.interp(s[k], arc, segment.target_speed))
        s[k + 1] = s[k] + max(v_ref, MIN_REFERENCE_SPEED) * config.dt

    ref = np.empty((config.horizon + 1, STATE_DIM))
    ref[:, :2] = _extrapolated_xy(arc, xy, heading, s)
    ref[:, 2] = np.interp(s, arc, heading)
    ref[:, 3] = np.interp(s, arc, segment.target_speed)
    kappa = np.interp(s[:-1], arc, segment.curvature)

    feed_forward = np.empty((config.horizon, INPUT_DIM))
    feed_forward[:, 0] = np.clip(np.diff(ref[:, 3]) / config.dt, -config.a_cmd_max, config.a_cmd_max)
    feed_forward[:, 1] = np.clip(np.arctan(config.wheelbase * kappa), -config.delta_max, config.delta_max)
    return ref, feed_forward


def solve(state: VehicleState, segment: TrajectorySegment, config: MpcConfig = MpcConfig(),
          prev_command: Optional[ControlCommand] = None) -> MpcSolution:
    """
    First command of the horizon-optimal input sequence, with the predicted
    states and the quadratic cost. A zero-length segment holds the previous
    command and marks the solution degenerate.
    """
    if len(segment) < 2 or float(segment.arc_lengths[-1]) < 1e-9:
        held = prev_command or ControlCommand()
        predicted = np.tile(state.as_array(), (config.horizon + 1, 1))
        return MpcSolution(held, predicted, math.nan, degenerate=True, raw=held)

    ref, u_ff = reference_horizon(state, segment, config)
    A_seq, B_seq = _rk4_jacobians(ref[:-1], u_ff, config.dt, config.wheelbase)
    c_seq = _rk4(ref[:-1], u_ff, config.dt, config.wheelbase) - ref[1:]
    c_seq[:, YAW] = wrap_angle(c_seq[:, YAW])

    e0 = state.as_array() - ref[0]
    e0[YAW] = wrap_angle(e0[YAW])
    w_seq, e_seq, cost = riccati_solve(A_seq, B_seq, c_seq, config.Q, config.R, e0)

    raw = ControlCommand(float(u_ff[0, 0] + w_seq[0, 0]), float(u_ff[0, 1] + w_seq[0, 1]))
    command = ControlCommand(
        float(np.clip(raw.accel, -config.a_cmd_max, config.a_cmd_max)),
        float(np.clip(raw.delta_cmd, -config.delta_max, config.delta_max)),
    )
    return MpcSolution(command, ref + e_seq, cost, degenerate=False, raw=raw)
