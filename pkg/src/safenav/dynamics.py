"""Velocity-controlled quadrotor model.

The control input is a commanded linear velocity; an onboard inner loop is
assumed to handle thrust/attitude stabilization. For the position sub-state
this is a single integrator (f = 0, g = I), which is what the barrier
machinery differentiates against. An optional first-order velocity lag tau
models imperfect inner-loop tracking and is used only as a stress test; the
barrier math always assumes tau = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .world import Vec3, vec3


@dataclass(frozen=True)
class DynamicsParams:
    tau: float = 0.0      # inner-loop velocity lag, s (0 = exact velocity tracking)
    v_max: float = 2.0    # per-axis speed limit, m/s
    dt: float = 0.2       # control period, s (5 Hz)

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau >= 0")
        if self.v_max <= 0:
            raise ValueError("v_max > 0")
        if self.dt <= 0:
            raise ValueError("dt > 0")


@dataclass(frozen=True)
class DroneState:
    """Full 12-component state. Only position, linear velocity and yaw evolve
    nontrivially at this abstraction; roll/pitch and angular rates are kept
    for fidelity and logging."""
    position: Vec3
    orientation: Vec3          # roll, pitch, yaw (rad)
    linear_velocity: Vec3
    angular_velocity: Vec3

    @property
    def yaw(self) -> float:
        return float(self.orientation[2])

    @staticmethod
    def at_rest(position: Vec3, yaw: float = 0.0) -> "DroneState":
        return DroneState(
            position=np.asarray(position, dtype=np.float64).copy(),
            orientation=vec3(0.0, 0.0, yaw),
            linear_velocity=np.zeros(3),
            angular_velocity=np.zeros(3),
        )


def clamp_command(u: np.ndarray, v_max: float) -> np.ndarray:
    """Per-axis clamp of a velocity command to the box [-v_max, v_max]^3."""
    return np.clip(np.asarray(u, dtype=np.float64), -v_max, v_max)


def lie_terms(state: DroneState) -> tuple[Vec3, np.ndarray]:
    """Drift and input terms (f, g) of the position dynamics.

    Under pure velocity control the position sub-state is a single integrator:
    f = 0 and g = I, so L_f h = 0 and L_g h u = grad(h) . u for any
    position-dependent barrier h.
    """
    del state  # state-independent at this abstraction
    return np.zeros(3), np.eye(3)


def step(state: DroneState, u: np.ndarray, params: DynamicsParams) -> DroneState:
    """Advance one control period.

    With tau = 0 the velocity is set to u and position takes an Euler step.
    With tau > 0 velocity relaxes toward u with the exact first-order-lag
    solution and position integrates that solution in closed form:
        v' = u + (v - u) e^(-dt/tau)
        p' = p + u dt + (v - u) tau (1 - e^(-dt/tau))
    Yaw tracks the horizontal velocity direction when moving faster than
    0.05 m/s; roll/pitch stay 0.
    """
    u = clamp_command(u, params.v_max)
    v0 = state.linear_velocity
    if params.tau == 0.0:
        v1 = u.copy()
        p1 = state.position + u * params.dt
    else:
        decay = math.exp(-params.dt / params.tau)
        v1 = u + (v0 - u) * decay
        p1 = state.position + u * params.dt + (v0 - u) * params.tau * (1.0 - decay)
    v1 = np.clip(v1, -params.v_max, params.v_max)

    speed_xy = math.hypot(v1[0], v1[1])
    yaw = math.atan2(v1[1], v1[0]) if speed_xy > 0.05 else state.yaw
    return DroneState(
        position=p1,
        orientation=vec3(0.0, 0.0, yaw),
        linear_velocity=v1,
        angular_velocity=np.zeros(3),
    )


def predict_nominal(state: DroneState, u_seq: list[np.ndarray],
                    params: DynamicsParams) -> list[DroneState]:
    """Roll the model forward through a command sequence; element t is the
    state after applying u_0..u_t."""
    out: list[DroneState] = []
    s = state
    for u in u_seq:
        s = step(s, u, params)
        out.append(s)
    return out
