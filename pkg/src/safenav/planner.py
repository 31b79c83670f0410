"""Waypoint path generation from grounded landmarks.

Paths are straight waypoint chains resampled into a time-indexed reference
trajectory; obstacle avoidance is entirely the barrier layer's job, so the
planner stays geometric. Waypoints are lifted from bbox centers + id-filtered
median depth through the pixel -> camera -> global chain, then adjusted by
the clause relation ("past" overshoots, "before" stops short), shifted
laterally for side modifiers, and held at cruise altitude except for
land/ascend actions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grounding import LandmarkClause, Match
from .perception import (BBox, Frame, camera_to_global, crop_depth_median,
                         pixel_to_camera)
from .world import CameraIntrinsics, Pose, Vec3


class PlanError(ValueError):
    """No grounded landmarks to build a path from."""


@dataclass(frozen=True)
class PlannerParams:
    v_ref: float = 1.0
    dt: float = 0.2
    cruise_z: float = -1.5         # z-down frame: 1.5 m altitude
    side_clearance: float = 1.5
    past_extension: float = 2.0
    before_standoff: float = 2.0
    at_standoff: float = 1.0       # "go to X": park in front, don't kiss it
    pass_clearance: float = 1.5    # lateral berth when flying past a landmark
    land_z: float = -0.2           # ground + 0.2 m
    ascend_z: float = -4.0


@dataclass(frozen=True)
class Waypoint:
    position: Vec3
    tag: int                       # clause order_index
    terminal_action: str = "none"  # none | land | ascend
    anchor: Vec3 | None = None     # raw lifted landmark point, pre-adjustment


@dataclass(frozen=True)
class PlannedPath:
    waypoints: tuple[Waypoint, ...]
    reference: tuple[tuple[float, Vec3, Vec3], ...]  # (t, x_r, v_r)
    v_ref: float


def _lift(bbox: BBox, frame: Frame, pose: Pose, intr: CameraIntrinsics) -> Vec3:
    i, j = bbox.center
    d = crop_depth_median(frame, bbox)
    return camera_to_global(pixel_to_camera(i, j, d, intr), pose)


def _side_dir(approach: Vec3, side: str) -> Vec3:
    f = np.array([approach[0], approach[1], 0.0])
    n = np.linalg.norm(f)
    if n < 1e-9:
        return np.zeros(3)
    f = f / n
    if side == "left":
        return np.array([f[1], -f[0], 0.0])
    if side == "right":
        return np.array([-f[1], f[0], 0.0])
    return np.zeros(3)


def lift_anchor(clause: LandmarkClause, match: Match, frame: Frame,
                pose: Pose, intr: CameraIntrinsics) -> Vec3:
    """Raw global point a match lifts to (midpoint of the pair for 'between'),
    before any relation/side/altitude adjustment."""
    p = _lift(match.bbox, frame, pose, intr)
    if clause.relation == "between" and match.partner is not None:
        p = 0.5 * (p + _lift(match.partner, frame, pose, intr))
    return p


def _waypoint_from_match(clause: LandmarkClause, match: Match, frame: Frame,
                         pose: Pose, intr: CameraIntrinsics,
                         prev: Vec3, params: PlannerParams,
                         next_anchor: Vec3 | None = None) -> Waypoint:
    p = lift_anchor(clause, match, frame, pose, intr)
    anchor = p.copy()
    approach = p - prev
    approach[2] = 0.0
    n = np.linalg.norm(approach)
    if n < 1e-9:
        approach = pose.R @ np.array([1.0, 0.0, 0.0])
    else:
        approach = approach / n
    if clause.relation == "past":
        p = p + params.past_extension * approach
        if clause.side_modifier == "none":
            # give the landmark a lateral berth instead of overflying it;
            # prefer the side that shortens the leg to the next landmark
            left = _side_dir(approach, "left")
            if next_anchor is not None and float(
                    np.linalg.norm((p + params.pass_clearance * left)
                                   - next_anchor)) > float(
                    np.linalg.norm((p - params.pass_clearance * left)
                                   - next_anchor)):
                left = -left
            p = p + params.pass_clearance * left
    elif clause.relation == "before":
        p = p - params.before_standoff * approach
    elif clause.action == "goto" and clause.relation in ("none", "at"):
        p = p - params.at_standoff * approach
    p = p + params.side_clearance * _side_dir(approach, clause.side_modifier)
    if clause.action == "land":
        z = params.land_z
    elif clause.action == "ascend":
        z = params.ascend_z
    else:
        z = params.cruise_z
    terminal = clause.action if clause.action in ("land", "ascend") else "none"
    return Waypoint(position=np.array([p[0], p[1], z]), tag=clause.order_index,
                    terminal_action=terminal, anchor=anchor)


def _resample(start: Vec3, waypoints: tuple[Waypoint, ...],
              params: PlannerParams) -> tuple[tuple[float, Vec3, Vec3], ...]:
    """Walk the polyline start -> w0 -> w1 ... sampling every v_ref*dt of arc
    length, inserting a sample at each waypoint corner; final sample carries
    v_r = 0."""
    step = params.v_ref * params.dt
    samples: list[Vec3] = [np.asarray(start, dtype=np.float64).copy()]
    vels: list[Vec3] = []
    pos = samples[0]
    for wp in waypoints:
        seg = wp.position - pos
        length = float(np.linalg.norm(seg))
        if length < 1e-9:
            continue
        d = seg / length
        n_full = int(math.floor(length / step - 1e-12))
        for k in range(1, n_full + 1):
            samples.append(pos + d * (k * step))
            vels.append(d * params.v_ref)
        samples.append(wp.position.copy())
        vels.append(d * params.v_ref)
        pos = wp.position
    vels.append(np.zeros(3))
    return tuple((k * params.dt, s, v) for k, (s, v) in enumerate(zip(samples, vels)))


def straight_path(start: Vec3, goal: Vec3,
                  params: PlannerParams = PlannerParams(),
                  terminal_action: str = "none") -> PlannedPath:
    """Single-segment path used by control-level rollouts and demos."""
    wp = Waypoint(position=np.asarray(goal, dtype=np.float64).copy(), tag=0,
                  terminal_action=terminal_action)
    return PlannedPath(waypoints=(wp,),
                       reference=_resample(start, (wp,), params),
                       v_ref=params.v_ref)


def generate_path(clauses: list[LandmarkClause], matches: list[Match],
                  frame: Frame, drone_pose: Pose, intr: CameraIntrinsics,
                  params: PlannerParams = PlannerParams()) -> PlannedPath:
    """Build the waypoint chain for all currently grounded clauses, in clause
    order, and resample the reference from the drone position."""
    if not matches:
        raise PlanError("no grounded landmarks: empty path")
    by_clause = {m.clause_index: m for m in matches}
    clause_by_idx = {c.order_index: c for c in clauses}
    order = sorted(by_clause)
    anchors = {idx: lift_anchor(clause_by_idx[idx], by_clause[idx], frame,
                                drone_pose, intr) for idx in order}
    wps: list[Waypoint] = []
    prev = drone_pose.position
    for pos, idx in enumerate(order):
        clause = clause_by_idx[idx]
        nxt = anchors[order[pos + 1]] if pos + 1 < len(order) else None
        wp = _waypoint_from_match(clause, by_clause[idx], frame, drone_pose,
                                  intr, prev, params, next_anchor=nxt)
        wps.append(wp)
        prev = wp.position
    return PlannedPath(waypoints=tuple(wps),
                       reference=_resample(drone_pose.position, tuple(wps), params),
                       v_ref=params.v_ref)


def update_path(path: PlannedPath, clauses: list[LandmarkClause],
                new_matches: list[Match], progress_tag: int, frame: Frame,
                drone_pose: Pose, intr: CameraIntrinsics,
                params: PlannerParams = PlannerParams()) -> PlannedPath:
    """Re-lift waypoints beyond the last reached tag from fresh matches;
    visited waypoints stay put; unmatched future waypoints keep their old
    estimates; newly grounded clauses insert at their order position. The
    reference restarts from the drone's current position. With no new matches
    the path is returned unchanged."""
    if not new_matches:
        return path
    clause_by_idx = {c.order_index: c for c in clauses}
    fresh = {m.clause_index: m for m in new_matches}
    merged: dict[int, Waypoint] = {w.tag: w for w in path.waypoints}

    visited = [w for w in path.waypoints if w.tag <= progress_tag]
    prev = visited[-1].position if visited else drone_pose.position
    order = sorted(set(list(merged) + list(fresh)))
    for pos, idx in enumerate(order):
        if idx <= progress_tag:
            continue
        if idx in fresh:
            nxt = None
            if pos + 1 < len(order):
                nxt_idx = order[pos + 1]
                if nxt_idx in merged and merged[nxt_idx].anchor is not None:
                    nxt = merged[nxt_idx].anchor
            merged[idx] = _waypoint_from_match(clause_by_idx[idx], fresh[idx],
                                               frame, drone_pose, intr, prev,
                                               params, next_anchor=nxt)
        prev = merged[idx].position
    wps = tuple(merged[i] for i in sorted(merged))
    return PlannedPath(waypoints=wps,
                       reference=_resample(drone_pose.position,
                                           tuple(w for w in wps if w.tag > progress_tag),
                                           params),
                       v_ref=path.v_ref)


def nearest_reference_time(path: PlannedPath, p: Vec3) -> float:
    """Reference time of the sample closest to p. Controllers use this as a
    progress-based virtual clock so an obstacle-detained drone is not dragged
    through hazards by a runaway time-indexed reference."""
    pts = np.stack([x for _, x, _ in path.reference])
    k = int(np.argmin(np.einsum("ij,ij->i", pts - p, pts - p)))
    return path.reference[k][0]


class ProgressClock:
    """Monotone virtual clock for reference tracking.

    Follows the drone's nearest point on the path, but never advances slower
    than min_rate * dt: a drone pinned on a barrier boundary still sees the
    reference walk ahead, which pulls it tangentially around the obstacle
    instead of leaving it parked at the tracking/barrier equilibrium.
    """

    def __init__(self, min_rate: float = 0.4):
        self.min_rate = min_rate
        self.t = 0.0

    def advance(self, path: PlannedPath, p: Vec3, dt: float) -> float:
        target = max(self.t + self.min_rate * dt, nearest_reference_time(path, p))
        self.t = min(target, path.reference[-1][0])
        return self.t

    def reset(self, t: float = 0.0) -> None:
        self.t = t


def reference_at(path: PlannedPath, t: float) -> tuple[Vec3, Vec3]:
    """Linear interpolation of the reference; beyond the end holds the final
    waypoint with zero velocity."""
    ref = path.reference
    if t <= ref[0][0]:
        return ref[0][1].copy(), ref[0][2].copy()
    if t >= ref[-1][0]:
        return ref[-1][1].copy(), np.zeros(3)
    dt = ref[1][0] - ref[0][0]
    k = int(t / dt)
    k = min(k, len(ref) - 2)
    t0, x0, v0 = ref[k]
    t1, x1, _ = ref[k + 1]
    a = (t - t0) / (t1 - t0)
    return (1 - a) * x0 + a * x1, v0.copy()
