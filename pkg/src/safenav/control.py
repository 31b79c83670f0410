"""Controllers: PID baseline, reactive barrier-QP filter, barrier-aware MPC,
and the language-agnostic ground-truth-barrier variant.

The MPC is condensed: with single-integrator propagation x_{k+1} = x_k +
u_k*dt the predicted states are affine in the stacked input sequence U, so
the tracking cost sum ||x_k - r_k||^2 + rho*||u_{k-1}||^2 is a dense QP in U
alone. Barrier rows are linearized once per cycle along the previous
solution's trajectory (warm start), with obstacles extrapolated at constant
estimated velocity over the horizon; only the first input is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .planner import PlannedPath, reference_at
from .qp import QpError, QpProblem, QpSolution, solve_qp
from .safety import (ANGLE_ACTIVATION_FACTOR, ObstacleObservation,
                     angle_theta, constraint_rows, direction_vectors,
                     obstacle_priority_order, side_bias_direction)
from .world import SafetyParams, Vec3

MAX_OBSTACLES_PER_CYCLE = 4
HEADON_BIAS_GAIN = 0.5


@dataclass(frozen=True)
class PidParams:
    kp: float = 1.0
    kd: float = 0.4

    def __post_init__(self):
        if self.kp <= 0:
            raise ValueError("kp > 0")
        if self.kd < 0:
            raise ValueError("kd >= 0")


@dataclass(frozen=True)
class MpcParams:
    H: int = 10
    dt: float = 0.2
    rho: float = 0.1               # control-effort weight in the tracking cost
    gamma: float | None = None     # class-K gain override (None = safety value)
    v_max: float = 2.0             # per-axis input bound

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H >= 1")
        if self.rho < 0:
            raise ValueError("rho >= 0")


def pid_nominal(state, x_r: Vec3, v_r: Vec3, pid: PidParams,
                v_max: float = 2.0) -> np.ndarray:
    u = pid.kp * (x_r - state.position) + pid.kd * (v_r - state.linear_velocity)
    return np.clip(u, -v_max, v_max)


def headon_bias(p_curr: Vec3, p_target: Vec3,
                observations: list[ObstacleObservation],
                safety: SafetyParams, drone_radius: float = 0.0) -> np.ndarray:
    """Deterministic lateral nudge away from a nearly head-on obstacle.

    The bearing row steers around obstacles off the target line, but exactly
    head-on its gradient is singular and the distance row alone just stops
    the drone. The side sign picks an escape side (collinear ties resolve
    +1), breaking the deadlock the same way every run.
    """
    for obs in obstacle_priority_order(observations, p_curr):
        pair = direction_vectors(p_curr, p_target, obs.p_obs)
        dist = float(np.linalg.norm(pair.d_obs))
        if dist == 0.0 or dist > ANGLE_ACTIVATION_FACTOR * safety.d_safe \
                + obs.radius + drone_radius:
            continue
        if float(pair.d_target @ pair.d_obs) <= 0.0:
            continue
        if np.linalg.norm(pair.d_target) < 1e-9:
            continue
        if angle_theta(pair) < safety.theta_safe:
            return HEADON_BIAS_GAIN * side_bias_direction(pair)
    return np.zeros(3)


def reactive_filter(u_nom: np.ndarray, rows, v_max: float = 2.0
                    ) -> tuple[np.ndarray, QpSolution | None]:
    """Minimally modify u_nom to satisfy all barrier rows (soft) and the
    per-axis speed box. Returns (u, qp solution); on solver failure the drone
    hovers (u = 0) and None is returned for the caller to log."""
    u_nom = np.asarray(u_nom, dtype=np.float64)
    if not rows:
        return np.clip(u_nom, -v_max, v_max), None
    G = np.stack([-r.a[:3] for r in rows])
    h = np.array([-r.b for r in rows])
    qp = QpProblem(P=2.0 * np.eye(3), q=-2.0 * u_nom, G=G, h_vec=h,
                   lb=-v_max * np.ones(3), ub=v_max * np.ones(3),
                   soft_rows=tuple(range(len(rows))))
    try:
        sol = solve_qp(qp)
    except QpError:
        return np.zeros(3), None
    return sol.z_star.copy(), sol


def _nearest_within_sensing(observations, p_curr, sensing_range):
    ordered = obstacle_priority_order(observations, p_curr)
    kept = [o for o in ordered
            if np.linalg.norm(o.p_obs - p_curr) <= sensing_range]
    return kept[:MAX_OBSTACLES_PER_CYCLE]


def sa_cbf_mpc(p_curr: Vec3, x_plan: PlannedPath,
               observations: list[ObstacleObservation],
               mpc: MpcParams, safety: SafetyParams,
               warm_start: np.ndarray | None = None,
               drone_radius: float = 0.0,
               t_ref: float = 0.0,
               p_target: Vec3 | None = None
               ) -> tuple[np.ndarray, np.ndarray, QpSolution | None]:
    """One receding-horizon step. Returns (u_0, full input sequence, qp sol).

    warm_start is the previous cycle's input sequence (3H,); pass the
    returned sequence back in next cycle. p_target anchors the bearing rows
    (defaults to the final waypoint).
    """
    H, dt = mpc.H, mpc.dt
    n = 3 * H
    gamma = safety.gamma if mpc.gamma is None else mpc.gamma
    saf = safety if gamma == safety.gamma else replace(safety, gamma=gamma)

    refs = np.concatenate([reference_at(x_plan, t_ref + (k + 1) * dt)[0]
                           for k in range(H)])
    if p_target is None:
        p_target = x_plan.waypoints[-1].position

    # condensed tracking cost: X = 1 (x) p_curr + dt*T U
    T = np.kron(np.tril(np.ones((H, H))), np.eye(3))
    e0 = refs - np.tile(p_curr, H)
    P = 2.0 * (dt * dt * (T.T @ T) + mpc.rho * np.eye(n))
    q = -2.0 * dt * (T.T @ e0)

    # linearization trajectory from the warm start
    if warm_start is None or warm_start.shape != (n,):
        u_warm = np.zeros((H, 3))
    else:
        u_warm = np.concatenate([warm_start[3:], warm_start[-3:]]).reshape(H, 3)
    x_hat = np.empty((H, 3))
    x = np.asarray(p_curr, dtype=np.float64).copy()
    for k in range(H):
        x_hat[k] = x
        x = x + u_warm[k] * dt

    near = _nearest_within_sensing(observations, p_curr, saf.sensing_range)
    G_rows, h_rows = [], []
    for k in range(H):
        moved = [replace(o, p_obs=o.p_obs + (o.velocity if o.velocity is not None
                                             else 0.0) * (k * dt))
                 for o in near]
        for row in constraint_rows(x_hat[k], p_target, moved, saf,
                                   drone_radius=drone_radius):
            a_full = np.zeros(n)
            a_full[3 * k:3 * k + 3] = row.a[:3]
            G_rows.append(-a_full)
            h_rows.append(-row.b)

    G = np.stack(G_rows) if G_rows else None
    h = np.array(h_rows) if G_rows else None
    qp = QpProblem(P=P, q=q, G=G, h_vec=h,
                   lb=-mpc.v_max * np.ones(n), ub=mpc.v_max * np.ones(n),
                   soft_rows=tuple(range(len(G_rows))))
    try:
        sol = solve_qp(qp, max_iter=300)
    except QpError:
        return np.zeros(3), np.zeros(n), None
    u_seq = sol.z_star.copy()
    return u_seq[:3].copy(), u_seq, sol


def cbf_only_nominal(state, goal: Vec3,
                     observations: list[ObstacleObservation],
                     safety: SafetyParams, v_max: float = 2.0,
                     drone_radius: float = 0.0, kp: float = 1.0
                     ) -> tuple[np.ndarray, QpSolution | None]:
    """Straight-to-goal proportional command filtered through the barrier QP
    using ground-truth obstacle observations; no grounding, no planner."""
    u_nom = np.clip(kp * (goal - state.position), -v_max, v_max)
    near = _nearest_within_sensing(observations, state.position,
                                   safety.sensing_range)
    u_nom = np.clip(u_nom + headon_bias(state.position, goal, near, safety,
                                        drone_radius), -v_max, v_max)
    rows = constraint_rows(state.position, goal, near, safety,
                           drone_radius=drone_radius)
    return reactive_filter(u_nom, rows, v_max)
