"""Scene-aware control-barrier math.

Two barrier components per obstacle:
  h1 = |d_obs| - r_obs - r_drone - d_safe   (surface clearance margin)
  h2 = theta - theta_safe                   (bearing separation from the
                                             target direction)
with d_target = p_target - p_curr, d_obs = p_obs - p_curr and theta the angle
between them. Controls are constrained so hdot + gamma*h >= 0 (linear
class-K), which for the single-integrator position model expands to
grad(h).u >= -gamma*h - (obstacle-motion feedforward).

Gradients returned here are the exact analytic derivatives with respect to
the drone position; the side sign sigma_d (z component of d_target x d_obs,
z-down frame: +1 = obstacle right of the target direction) is carried
separately for deterministic side selection in the degenerate head-on case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import SafetyParams, Vec3

# below this angle (rad) from 0 or pi the bearing gradient is singular and the
# angle row is dropped for the cycle
THETA_SINGULAR_GUARD = 1e-3
# angle rows only engage inside this multiple of d_safe
ANGLE_ACTIVATION_FACTOR = 2.0
# the bearing demand fades in over this distance at the activation boundary so
# the row does not appear at full strength in a single cycle (no input jumps)
ANGLE_RAMP_WIDTH = 1.0
ANGLE_RAMP_RELAX = 2.0  # rad added to h2 at zero ramp weight (fully relaxed)


@dataclass(frozen=True)
class ObstacleObservation:
    id: int
    p_obs: Vec3
    radius: float
    source: str = "detection"          # detection | ground_truth
    last_seen: float = 0.0
    velocity: Vec3 | None = None       # global velocity estimate, if tracked


@dataclass(frozen=True)
class DirectionPair:
    d_target: Vec3
    d_obs: Vec3


@dataclass(frozen=True)
class CbfValue:
    h1: float
    h2: float
    sigma_d: int
    theta: float


@dataclass(frozen=True)
class CbfConstraintRow:
    a: Vec3                 # coefficient of u in a.u >= b
    b: float
    obstacle_id: int
    component: str          # distance | angle


def direction_vectors(p_curr: Vec3, p_target: Vec3, p_obs: Vec3) -> DirectionPair:
    return DirectionPair(d_target=np.asarray(p_target, dtype=np.float64) - p_curr,
                         d_obs=np.asarray(p_obs, dtype=np.float64) - p_curr)


def obstacle_priority_order(observations: list[ObstacleObservation],
                            p_curr: Vec3) -> list[ObstacleObservation]:
    """Nearest first (priority 1/|d_obs| decreasing); ties broken by id."""
    return sorted(observations,
                  key=lambda o: (float(np.linalg.norm(o.p_obs - p_curr)), o.id))


def sigma_d(pair: DirectionPair) -> int:
    """Side sign: z of d_target x d_obs. Collinear (exact zero) returns +1."""
    z = pair.d_target[0] * pair.d_obs[1] - pair.d_target[1] * pair.d_obs[0]
    if z > 0.0:
        return 1
    if z < 0.0:
        return -1
    return 1


def angle_theta(pair: DirectionPair) -> float:
    nt = float(np.linalg.norm(pair.d_target))
    no = float(np.linalg.norm(pair.d_obs))
    if nt == 0.0 or no == 0.0:
        raise ValueError("zero-length direction vector")
    c = float(pair.d_target @ pair.d_obs) / (nt * no)
    return math.acos(min(1.0, max(-1.0, c)))


def cbf_value(p_curr: Vec3, p_target: Vec3, obs: ObstacleObservation,
              params: SafetyParams, drone_radius: float = 0.0) -> CbfValue:
    pair = direction_vectors(p_curr, p_target, obs.p_obs)
    dist = float(np.linalg.norm(pair.d_obs))
    if dist == 0.0:
        raise ValueError("degenerate observation: obstacle at drone position")
    theta = angle_theta(pair)
    return CbfValue(
        h1=dist - obs.radius - drone_radius - params.d_safe,
        h2=theta - params.theta_safe,
        sigma_d=sigma_d(pair),
        theta=theta,
    )


def cbf_gradient(p_curr: Vec3, p_target: Vec3,
                 obs: ObstacleObservation) -> tuple[Vec3, Vec3 | None]:
    """Exact gradients of (h1, h2) with respect to the drone position.

    grad h1 = -d_obs_hat (the radii and d_safe are constants).
    grad h2 = -csc(theta) * grad cos(theta), with both d_target and d_obs
    depending on position. Returns grad_h2 = None inside the singularity
    guard (theta near 0 or pi), where the angle row is dropped.
    """
    pair = direction_vectors(p_curr, p_target, obs.p_obs)
    a, b = pair.d_target, pair.d_obs
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if nb == 0.0:
        raise ValueError("degenerate observation: obstacle at drone position")
    b_hat = b / nb
    grad_h1 = -b_hat
    if na == 0.0:
        return grad_h1, None
    a_hat = a / na
    c = float(a_hat @ b_hat)
    theta = math.acos(min(1.0, max(-1.0, c)))
    if theta < THETA_SINGULAR_GUARD or theta > math.pi - THETA_SINGULAR_GUARD:
        return grad_h1, None
    grad_cos = -(b_hat - c * a_hat) / na - (a_hat - c * b_hat) / nb
    grad_h2 = -grad_cos / math.sin(theta)
    return grad_h1, grad_h2


def _obstacle_motion_terms(pair: DirectionPair, obs: ObstacleObservation):
    """Time-derivative contributions of the obstacle's own motion to h1, h2.

    h depends on t through p_obs(t); the rows must account for it or a
    closing obstacle erodes the barrier even with the control side satisfied.
    d(h1)/dt|_obs = d_obs_hat . v_obs;  d(h2)/dt|_obs uses d(theta)/d(p_obs).
    """
    if obs.velocity is None:
        return 0.0, 0.0
    v = obs.velocity
    a, b = pair.d_target, pair.d_obs
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    b_hat = b / nb
    ff1 = float(b_hat @ v)
    if na == 0.0:
        return ff1, 0.0
    a_hat = a / na
    c = float(a_hat @ b_hat)
    theta = math.acos(min(1.0, max(-1.0, c)))
    if theta < THETA_SINGULAR_GUARD or theta > math.pi - THETA_SINGULAR_GUARD:
        return ff1, 0.0
    dtheta_dpobs = -((a_hat - c * b_hat) / nb) / math.sin(theta)
    return ff1, float(dtheta_dpobs @ v)


def constraint_rows(p_curr: Vec3, p_target: Vec3,
                    observations: list[ObstacleObservation],
                    params: SafetyParams, drone_radius: float = 0.0,
                    u_dim: int = 3,
                    trigger: str = "always") -> list[CbfConstraintRow]:
    """Linear rows a.u >= b enforcing hdot + gamma*h >= 0 per obstacle/component.

    Distance rows are emitted for every obstacle within sensing range
    (trigger="violation_only" reproduces the barrier-on-violation variant,
    which only constrains after h has already gone negative). Angle rows
    engage only for obstacles in the front hemisphere closer than
    ANGLE_ACTIVATION_FACTOR * d_safe and outside the bearing singularity.
    """
    rows: list[CbfConstraintRow] = []
    for obs in obstacle_priority_order(observations, p_curr):
        pair = direction_vectors(p_curr, p_target, obs.p_obs)
        dist = float(np.linalg.norm(pair.d_obs))
        if dist == 0.0 or dist > params.sensing_range:
            continue
        val = cbf_value(p_curr, p_target, obs, params, drone_radius)
        if trigger == "violation_only" and val.h1 >= 0.0:
            continue
        grad_h1, grad_h2 = cbf_gradient(p_curr, p_target, obs)
        ff1, ff2 = _obstacle_motion_terms(pair, obs)

        a1 = np.zeros(u_dim)
        a1[:3] = grad_h1
        rows.append(CbfConstraintRow(a=a1, b=-params.gamma * val.h1 - ff1,
                                     obstacle_id=obs.id, component="distance"))

        in_front = float(pair.d_target @ pair.d_obs) > 0.0
        act_dist = ANGLE_ACTIVATION_FACTOR * params.d_safe
        if grad_h2 is not None and in_front and dist < act_dist:
            # fade the demand in across the activation shell: near the
            # boundary the barrier is treated as (h2 + relax), i.e. inactive
            w = min(1.0, (act_dist - dist) / ANGLE_RAMP_WIDTH)
            h2_eff = val.h2 + (1.0 - w) * ANGLE_RAMP_RELAX
            a2 = np.zeros(u_dim)
            a2[:3] = grad_h2
            rows.append(CbfConstraintRow(a=a2, b=-params.gamma * h2_eff - w * ff2,
                                         obstacle_id=obs.id, component="angle"))
    return rows


def side_bias_direction(pair: DirectionPair) -> Vec3:
    """Horizontal unit vector pointing away from the obstacle's side.

    sigma_d = +1 means the obstacle sits right of the target direction, so the
    escape direction is left (and vice versa); the collinear convention
    sigma_d = +1 breaks the head-on tie deterministically. Used by controllers
    to nudge the nominal command when the bearing gradient is singular.
    """
    d = pair.d_target
    nd = float(math.hypot(d[0], d[1]))
    if nd == 0.0:
        return np.zeros(3)
    fwd = np.array([d[0] / nd, d[1] / nd, 0.0])
    left = np.array([fwd[1], -fwd[0], 0.0])  # rotate -90 deg about +z (z down)
    return left * float(sigma_d(pair))
