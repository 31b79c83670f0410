"""Episode orchestration, metrics, batch evaluation and the toy barrier demo.

Each 5 Hz cycle mirrors the two-worker pipeline: the perception worker takes
the frame snapshot under the buffer lock (detect, crop, depth), the matcher
worker re-reads the same locked snapshot (embed, score), then the loop plans
or updates the path, falls back to region proposals for unresolved clauses,
runs the selected controller, and steps the dynamics. Everything stochastic
draws from named child streams of one seed, so a (scenario, instruction,
variant, seed) tuple fully determines the episode log byte for byte.
"""
from __future__ import annotations

import io
import json
import math
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (MpcParams, PidParams, cbf_only_nominal, headon_bias,
                      pid_nominal, reactive_filter, sa_cbf_mpc)
from .dynamics import DroneState, DynamicsParams, step
from .grounding import LandmarkClause, Match, match_landmark, parse_instruction
from .perception import (DYNAMIC, STATIC, DetectorNoise, Frame, MotionTracker,
                         camera_to_global, crop_depth_median, detect_objects,
                         pixel_to_camera, render_frame)
from .planner import (PlanError, PlannedPath, PlannerParams, ProgressClock,
                      generate_path, lift_anchor, nearest_reference_time,
                      reference_at, update_path)
from .safety import ObstacleObservation, cbf_value, constraint_rows
from .scenarios import bundled_scenario
from .world import (Landmark, Pose, Scenario, Vec3, load_scenario,
                    obstacle_pose_at, stable_seed, vec3)

VARIANTS = ("pid", "reactive", "mpc", "cbf_only")

REACH_RADIUS = 1.0       # intermediate waypoint advance
ARRIVAL_RADIUS = 0.35    # final waypoint: tight so NE vs truth keeps margin
OBS_MEMORY_S = 1.0       # keep unseen obstacle estimates this long
PID_LOOKAHEAD_S = 1.2
GRACE_NO_PATH_S = 10.0

CSV_HEADER = ("t,px,py,pz,vx,vy,vz,yaw,ux,uy,uz,variant,min_h1_cycle,"
              "slack,event")


@dataclass(frozen=True)
class NoiseConfig:
    detector_p_drop: float = 0.0
    detector_jitter_px: int = 0
    embedding_sigma: float = 0.0
    pose_sigma: float = 0.0

    @property
    def detector(self) -> DetectorNoise | None:
        if self.detector_p_drop <= 0 and self.detector_jitter_px <= 0:
            return None
        return DetectorNoise(p_drop=self.detector_p_drop,
                             jitter_px=self.detector_jitter_px)


@dataclass(frozen=True)
class EpisodeConfig:
    scenario_name: str
    instruction: str
    variant: str
    seed: int = 0
    max_duration: float = 90.0
    noise: NoiseConfig = NoiseConfig()
    environment: str = ""
    scenario_text: str | None = None    # inline YAML overrides the bundled name

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.max_duration <= 0:
            raise ValueError("max_duration > 0")

    @property
    def env_key(self) -> str:
        return self.environment or self.scenario_name


@dataclass(frozen=True)
class TrialResult:
    TL: float
    success: bool
    NE: float
    min_h1: float
    collision: bool
    unresolved_landmarks: int
    duration: float


@dataclass
class EpisodeLog:
    config: EpisodeConfig
    target: Vec3
    rows: list[str] = field(default_factory=list)
    events: list[tuple[float, str]] = field(default_factory=list)
    positions: list[Vec3] = field(default_factory=list)
    min_h1_cycles: list[float] = field(default_factory=list)
    matches: dict[int, tuple[int, float, bool]] = field(default_factory=dict)
    lock_checks: int = 0
    collision: bool = False
    timeout: bool = False
    arrived: bool = False
    unresolved: int = 0
    duration: float = 0.0

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER, *self.rows]) + "\n"


def resolve_scenario(cfg: EpisodeConfig) -> Scenario:
    if cfg.scenario_text is not None:
        return load_scenario(cfg.scenario_text)
    return bundled_scenario(cfg.scenario_name)


class FrameBuffer:
    """Shared frame slot guarded by the image lock of the two-worker loop."""

    def __init__(self):
        self._lock = threading.Lock()
        self._frame: Frame | None = None

    def publish(self, frame: Frame) -> None:
        with self._lock:
            self._frame = frame

    def snapshot(self) -> Frame:
        with self._lock:
            if self._frame is None:
                raise RuntimeError("no frame published")
            return self._frame


# --- ground-truth geometry oracle ------------------------------------------

def _landmark_matches_tokens(lm: Landmark, tokens: tuple[str, ...]) -> bool:
    return set(tokens) <= set(lm.tokens)


def _box_surface_point(lm: Landmark, origin: Vec3) -> Vec3:
    """Entry point of the ray origin -> box center on the box surface."""
    d = lm.position - origin
    lo, hi = lm.position - lm.extent, lm.position + lm.extent
    t_entry = 0.0
    for i in range(3):
        if abs(d[i]) < 1e-12:
            continue
        t1 = (lo[i] - origin[i]) / d[i]
        t2 = (hi[i] - origin[i]) / d[i]
        t_entry = max(t_entry, min(t1, t2))
    t_entry = min(max(t_entry, 0.0), 1.0)
    return origin + t_entry * d


def ground_truth_expectations(scenario: Scenario, clauses: list[LandmarkClause],
                              params: PlannerParams = PlannerParams()
                              ) -> tuple[Vec3, dict[int, tuple[int, ...]]]:
    """Perception-independent resolution of the instruction against scenario
    geometry: the final goal point a correct system should stop at, plus the
    ground-truth object ids per clause (grounding-accuracy oracle)."""
    prev = scenario.drone_start.position
    expected: dict[int, tuple[int, ...]] = {}
    target = prev
    for clause in clauses:
        cands = [lm for lm in scenario.landmarks
                 if _landmark_matches_tokens(lm, clause.tokens)]
        if not cands:
            continue
        cands.sort(key=lambda lm: float(np.linalg.norm(lm.position - prev)))
        if clause.relation == "between" and len(cands) >= 2:
            pair = cands[:2]
            expected[clause.order_index] = tuple(lm.id for lm in pair)
            point = 0.5 * (pair[0].position + pair[1].position)
        else:
            pick = cands[0]
            if clause.side_modifier in ("left", "right") and len(cands) > 1:
                mean_dir = np.mean([lm.position - prev for lm in cands], axis=0)
                want_left = clause.side_modifier == "left"

                def cross_z(lm):
                    d = lm.position - prev
                    return mean_dir[0] * d[1] - mean_dir[1] * d[0]

                sided = sorted(cands, key=cross_z)
                pick = sided[0] if want_left else sided[-1]
            if clause.ordinal is not None and len(cands) >= clause.ordinal:
                pick = cands[clause.ordinal - 1]
            expected[clause.order_index] = (pick.id,)
            point = _box_surface_point(pick, prev)
        approach = point - prev
        approach[2] = 0.0
        n = float(np.linalg.norm(approach))
        approach = approach / n if n > 1e-9 else vec3(1, 0, 0)
        if clause.relation == "past":
            point = point + params.past_extension * approach
            if clause.side_modifier == "none":
                point = point + params.pass_clearance * np.array(
                    [approach[1], -approach[0], 0.0])
        elif clause.relation == "before":
            point = point - params.before_standoff * approach
        elif clause.action == "goto" and clause.relation in ("none", "at"):
            point = point - params.at_standoff * approach
        if clause.side_modifier == "left":
            point = point + params.side_clearance * np.array(
                [approach[1], -approach[0], 0.0])
        elif clause.side_modifier == "right":
            point = point + params.side_clearance * np.array(
                [-approach[1], approach[0], 0.0])
        if clause.action == "land":
            z = params.land_z
        elif clause.action == "ascend":
            z = params.ascend_z
        else:
            z = params.cruise_z
        point = np.array([point[0], point[1], z])
        prev = point
        target = point
    return target, expected


# --- perceived obstacle bookkeeping -----------------------------------------

@dataclass
class _StoredObs:
    obs: ObstacleObservation
    seen_t: float


class ObservationStore:
    """Perceived obstacle estimates with short memory: unseen entries are
    extrapolated at their estimated velocity and dropped after OBS_MEMORY_S."""

    def __init__(self, sensing_range: float):
        self.sensing_range = sensing_range
        self._store: dict[int, _StoredObs] = {}

    def update_from_detection(self, oid: int, p_center: Vec3, radius: float,
                              velocity: Vec3, t: float, p_drone: Vec3) -> None:
        if float(np.linalg.norm(p_center - p_drone)) > self.sensing_range:
            return
        obs = ObstacleObservation(id=oid, p_obs=p_center, radius=radius,
                                  source="detection", last_seen=t,
                                  velocity=velocity)
        self._store[oid] = _StoredObs(obs=obs, seen_t=t)

    def drop(self, oid: int) -> None:
        self._store.pop(oid, None)

    def current(self, t: float) -> list[ObstacleObservation]:
        out = []
        stale = []
        for oid, e in self._store.items():
            age = t - e.seen_t
            if age > OBS_MEMORY_S:
                stale.append(oid)
                continue
            obs = e.obs
            if age > 0 and obs.velocity is not None:
                obs = replace(obs, p_obs=obs.p_obs + obs.velocity * age)
            out.append(obs)
        for oid in stale:
            self._store.pop(oid)
        return out


def _estimate_radius(bbox, depth: float, f_px: float) -> float:
    r = 0.5 * (bbox.x2 - bbox.x1) * depth / f_px
    return float(np.clip(r, 0.15, 2.0))


def _landmark_ground_truth_obs(scenario: Scenario, target: Vec3 | None
                               ) -> list[ObstacleObservation]:
    """Landmarks as sphere obstacles; a landmark is dropped only when the
    goal itself lies inside (or within 0.25 m of) its barrier shell, since
    that obstacle would otherwise make the goal unreachable."""
    out = []
    for lm in scenario.landmarks:
        r = float(math.hypot(lm.extent[0], lm.extent[1]))
        if target is not None:
            h1_at_target = (float(np.linalg.norm(lm.position - target)) - r
                            - scenario.drone_radius - scenario.safety.d_safe)
            if h1_at_target < 0.25:
                continue
        out.append(ObstacleObservation(id=lm.id, p_obs=lm.position.copy(),
                                       radius=r, source="ground_truth",
                                       velocity=vec3(0, 0, 0)))
    return out


def _track_velocity(track, t: float) -> Vec3:
    h = 0.05
    return (obstacle_pose_at(track, t + h) - obstacle_pose_at(track, t - h)) / (2 * h)


# --- collision / barrier audits ---------------------------------------------

def _box_surface_distance(p: Vec3, lm: Landmark) -> float:
    d = np.maximum(np.abs(p - lm.position) - lm.extent, 0.0)
    return float(np.linalg.norm(d))


def _ground_truth_audit(scenario: Scenario, p: Vec3,
                        positions: dict[int, Vec3]) -> tuple[float, bool]:
    """(min h1 over moving obstacles, collision with anything)."""
    min_h1 = math.inf
    collided = False
    for tr in scenario.obstacles:
        c = positions[tr.id]
        sep = float(np.linalg.norm(p - c)) - tr.radius - scenario.drone_radius
        min_h1 = min(min_h1, sep - scenario.safety.d_safe)
        if sep < 0.0:
            collided = True
    for lm in scenario.landmarks:
        if _box_surface_distance(p, lm) - scenario.drone_radius < 0.0:
            collided = True
    return min_h1, collided


# --- the episode loop --------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def run_episode(cfg: EpisodeConfig, scenario: Scenario | None = None
                ) -> tuple[TrialResult, EpisodeLog]:
    sc = scenario if scenario is not None else resolve_scenario(cfg)
    ss = np.random.SeedSequence(stable_seed(sc.name, cfg.instruction,
                                            cfg.variant, cfg.seed))
    rng_phase, rng_detect, rng_embed, rng_pose = \
        (np.random.default_rng(s) for s in ss.spawn(4))

    phases = {tr.id: float(rng_phase.uniform(0.0, tr.waypoints[-1][0]))
              for tr in sc.obstacles}
    clauses = parse_instruction(cfg.instruction)
    pparams = PlannerParams(cruise_z=float(sc.drone_start.position[2]))
    target, expected = ground_truth_expectations(sc, clauses, pparams)

    dyn = DynamicsParams(tau=0.0, v_max=2.0, dt=0.2)
    pid = PidParams()
    mpc = MpcParams(v_max=dyn.v_max, dt=dyn.dt)
    tokens = sc.object_tokens()
    labels = sc.object_labels()
    sigma_e = cfg.noise.embedding_sigma

    state = DroneState.at_rest(sc.drone_start.position.copy(),
                               sc.drone_start.yaw)
    tracker = MotionTracker()
    store = ObservationStore(sc.safety.sensing_range)
    buffer = FrameBuffer()
    clock = ProgressClock()
    log = EpisodeLog(config=cfg, target=target)

    path: PlannedPath | None = None
    warm: np.ndarray | None = None
    best_matches: dict[int, Match] = {}
    matched_ids: set[int] = set()
    guards_ok: set[int] = {c.order_index for c in clauses if not c.conditional}
    progress_tag = -1
    active_idx = 0
    if cfg.variant == "cbf_only":
        straight = float(np.linalg.norm(target - sc.drone_start.position))
        timeout_at = min(cfg.max_duration, 3.0 * straight / pparams.v_ref + 2.0)
    else:
        timeout_at = min(cfg.max_duration, GRACE_NO_PATH_S)
    max_cycles = int(math.ceil(cfg.max_duration / dyn.dt)) + 1

    for k in range(max_cycles):
        t = k * dyn.dt
        positions = {tr.id: obstacle_pose_at(tr, t + phases[tr.id])
                     for tr in sc.obstacles}
        percep_pose = Pose(state.position.copy(), state.yaw)
        if cfg.noise.pose_sigma > 0:
            percep_pose = Pose(state.position
                               + rng_pose.normal(0, cfg.noise.pose_sigma, 3),
                               state.yaw)

        # Thread A context: detection + depth crops under the image lock
        buffer.publish(render_frame(sc, positions, percep_pose, sc.intrinsics, t))
        frame_a = buffer.snapshot()
        detections = detect_objects(frame_a, labels, cfg.noise.detector,
                                    rng_detect)
        motion = tracker.update(frame_a, detections, percep_pose, sc.intrinsics)

        # Thread B context: embeddings + similarity on the same locked frame
        frame_b = buffer.snapshot()
        assert frame_b.timestamp == frame_a.timestamp
        log.lock_checks += 1
        statics = [d for d in detections if motion.get(d.object_id) == STATIC]
        dynamic_ids = frozenset(d.object_id for d in detections
                                if motion.get(d.object_id) == DYNAMIC)
        fresh: list[Match] = []
        changed_object: set[int] = set()
        if cfg.variant != "cbf_only":  # language-agnostic variant skips grounding
            for c in clauses:
                if c.conditional and c.order_index not in guards_ok:
                    guard_hit = any(
                        set(c.conditional) <= set(tokens.get(d.object_id, ()))
                        for d in detections)
                    if guard_hit:
                        guards_ok.add(c.order_index)
            for c in clauses:
                if c.order_index not in guards_ok or c.order_index <= progress_tag:
                    continue
                m = match_landmark(c, statics, frame_b, tokens,
                                   noise_sigma=sigma_e, rng=rng_embed,
                                   exclude_ids=dynamic_ids)
                if m is None:
                    continue
                # keep the strongest grounding: refinements of the same object
                # always pass, a different object only with a clearly better
                # score (margin damps flapping between same-class candidates
                # as they move in and out of view)
                old = best_matches.get(c.order_index)
                if old is not None and m.bbox.object_id != old.bbox.object_id:
                    if m.score <= old.score + 0.1:
                        continue
                    changed_object.add(c.order_index)
                elif old is None:
                    changed_object.add(c.order_index)
                elif old.via_fallback and not m.via_fallback:
                    # grid-patch lift upgraded by a proper detection
                    changed_object.add(c.order_index)
                fresh.append(m)
                best_matches[c.order_index] = m
                matched_ids.add(m.bbox.object_id)
                if m.partner is not None:
                    matched_ids.add(m.partner.object_id)
                log.matches[c.order_index] = (m.bbox.object_id, m.score,
                                              m.via_fallback)

        # plan / update
        if path is None and best_matches:
            try:
                path = generate_path(clauses, list(best_matches.values()),
                                     frame_b, percep_pose, sc.intrinsics, pparams)
                clock.reset()
                warm = None
                timeout_at = max(timeout_at, min(
                    cfg.max_duration, t + 3.0 * path.reference[-1][0] + 2.0))
                log.events.append((t, "path"))
            except PlanError:
                path = None
        elif path is not None and fresh:
            stale = [m for m in fresh if m.clause_index > progress_tag]
            current = {w.tag: w for w in path.waypoints}
            needs = []
            for m in stale:
                if m.clause_index not in current or m.clause_index in changed_object:
                    needs.append(m)
                    continue
                wp_cur = current[m.clause_index]
                # endgame freeze: close to a waypoint the bbox geometry
                # degrades (the box fills the view), so stop refining it
                if np.linalg.norm(state.position - wp_cur.position) < 3.0:
                    continue
                c = next(c for c in clauses if c.order_index == m.clause_index)
                anchor_new = lift_anchor(c, m, frame_b, percep_pose,
                                         sc.intrinsics)
                if wp_cur.anchor is None:
                    needs.append(m)
                    continue
                shift = float(np.linalg.norm(anchor_new - wp_cur.anchor))
                if 0.5 < shift <= 2.0:
                    needs.append(m)
            if needs:
                path = update_path(path, clauses, needs, progress_tag, frame_b,
                                   percep_pose, sc.intrinsics, pparams)
                clock.reset(nearest_reference_time(path, state.position))
                warm = None
                active_idx = 0
                timeout_at = max(timeout_at, min(
                    cfg.max_duration, t + 3.0 * path.reference[-1][0] + 2.0))
                log.events.append((t, "path_update"))

        # perceived obstacle set: dynamic detections and unmatched statics
        for d in detections:
            cls = motion.get(d.object_id)
            if cls is None:
                continue
            if cls == STATIC and d.object_id in matched_ids:
                store.drop(d.object_id)
                continue
            try:
                depth = crop_depth_median(frame_a, d)
            except ValueError:
                continue
            i, j = d.center
            surface = camera_to_global(pixel_to_camera(i, j, depth,
                                                       sc.intrinsics),
                                       percep_pose)
            r_est = _estimate_radius(d, depth, sc.intrinsics.f_px)
            direction = surface - percep_pose.position
            nrm = float(np.linalg.norm(direction))
            center = surface + (direction / nrm) * r_est if nrm > 1e-9 else surface
            vel = tracker.velocity_of(d.object_id) if cls == DYNAMIC else vec3(0, 0, 0)
            store.update_from_detection(d.object_id, center, r_est, vel, t,
                                        state.position)
        observations = store.current(t)

        # controller
        slack_used = 0.0
        sol = None
        if cfg.variant == "cbf_only":
            gt_obs = [ObstacleObservation(
                id=tr.id, p_obs=positions[tr.id], radius=tr.radius,
                source="ground_truth",
                velocity=_track_velocity(tr, t + phases[tr.id]))
                for tr in sc.obstacles]
            gt_obs += _landmark_ground_truth_obs(sc, target)
            u, sol = cbf_only_nominal(state, target, gt_obs, sc.safety,
                                      dyn.v_max, sc.drone_radius)
        elif path is not None:
            wps = [w for w in path.waypoints if w.tag > progress_tag]
            active_idx = min(active_idx, max(len(wps) - 1, 0))
            active_wp = wps[active_idx] if wps else path.waypoints[-1]
            t_ref = clock.advance(path, state.position, dyn.dt)
            x_r, v_r = reference_at(path, t_ref + PID_LOOKAHEAD_S)
            if cfg.variant == "pid":
                u = pid_nominal(state, x_r, v_r, pid, dyn.v_max)
            elif cfg.variant == "reactive":
                u_nom = pid_nominal(state, x_r, v_r, pid, dyn.v_max)
                u_nom = u_nom + headon_bias(state.position, active_wp.position,
                                            observations, sc.safety,
                                            sc.drone_radius)
                rows = constraint_rows(state.position, active_wp.position,
                                       observations, sc.safety,
                                       drone_radius=sc.drone_radius)
                u, sol = reactive_filter(u_nom, rows, dyn.v_max)
            else:  # mpc
                u, warm, sol = sa_cbf_mpc(state.position, path, observations,
                                          mpc, sc.safety, warm,
                                          drone_radius=sc.drone_radius,
                                          t_ref=t_ref,
                                          p_target=active_wp.position)
        else:
            u = np.zeros(3)  # no path yet: hover
        if sol is not None and sol.slack_used.size:
            slack_used = float(np.max(sol.slack_used))

        min_h1, collided = _ground_truth_audit(sc, state.position, positions)
        event = ""
        if collided:
            event = "collision"

        log.positions.append(state.position.copy())
        log.min_h1_cycles.append(min_h1)
        log.rows.append(",".join([
            _fmt(t), _fmt(state.position[0]), _fmt(state.position[1]),
            _fmt(state.position[2]), _fmt(state.linear_velocity[0]),
            _fmt(state.linear_velocity[1]), _fmt(state.linear_velocity[2]),
            _fmt(state.yaw), _fmt(u[0]), _fmt(u[1]), _fmt(u[2]),
            cfg.variant, _fmt(min_h1), _fmt(slack_used), event]))

        if collided:
            log.collision = True
            log.events.append((t, "collision"))
            log.duration = t
            break

        # waypoint progression / arrival
        if cfg.variant == "cbf_only":
            if float(np.linalg.norm(state.position - target)) < ARRIVAL_RADIUS:
                log.arrived = True
                log.duration = t
                break
        elif path is not None:
            wps = [w for w in path.waypoints if w.tag > progress_tag]
            if wps:
                active_wp = wps[min(active_idx, len(wps) - 1)]
                is_final = active_wp.tag == path.waypoints[-1].tag
                radius = ARRIVAL_RADIUS if is_final else REACH_RADIUS
                if float(np.linalg.norm(state.position - active_wp.position)) < radius:
                    progress_tag = active_wp.tag
                    active_idx = 0
                    log.events.append((t, f"waypoint_{active_wp.tag}"))
                    if is_final:
                        log.arrived = True
                        log.duration = t
                        break

        if t >= timeout_at:
            log.timeout = True
            log.events.append((t, "timeout"))
            log.duration = t
            break

        state = step(state, u, dyn)
        log.duration = t

    if cfg.variant == "cbf_only":
        log.unresolved = 0  # language-agnostic: no grounding attempted
    else:
        enabled = [c for c in clauses if c.order_index in guards_ok]
        log.unresolved = sum(1 for c in enabled
                             if c.order_index not in best_matches)
    if not log.arrived and not log.collision:
        log.timeout = True
    return compute_metrics(log), log


def compute_metrics(log: EpisodeLog) -> TrialResult:
    pos = log.positions
    tl = float(sum(np.linalg.norm(b - a) for a, b in zip(pos, pos[1:]))) if len(pos) > 1 else 0.0
    ne = float(np.linalg.norm(pos[-1] - log.target)) if pos else math.inf
    min_h1 = float(min(log.min_h1_cycles)) if log.min_h1_cycles else math.inf
    success = (ne <= 1.0) and not log.collision and not log.timeout
    return TrialResult(TL=tl, success=success, NE=ne, min_h1=min_h1,
                       collision=log.collision,
                       unresolved_landmarks=log.unresolved,
                       duration=log.duration)


# --- batch evaluation ---------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    environment: str
    instruction: str
    variant: str
    TL: float
    SR: float
    NE: float


@dataclass
class ReportTable:
    rows: list[ReportRow]
    trials: dict[tuple[str, str, str], list[TrialResult]] = field(
        default_factory=dict)


def _run_trial(cfg: EpisodeConfig) -> tuple[tuple[str, str, str], int, TrialResult]:
    result, _ = run_episode(cfg)
    return (cfg.env_key, cfg.instruction, cfg.variant), cfg.seed, result


def run_batch(suite: list[EpisodeConfig], n_seeds: int = 1,
              workers: int | None = None) -> ReportTable:
    """Run every (config x seed) trial and aggregate the Table-style report.

    TL is averaged over successful trials (the trajectory-length statistic is
    conditioned on reaching the goal; aborted runs would deflate it), SR and
    NE over all trials.
    """
    configs = [replace(cfg, seed=s) for cfg in suite for s in range(n_seeds)]
    results: dict[tuple[str, str, str], dict[int, TrialResult]] = {}
    if workers is None or workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_trial, configs, chunksize=4))
    else:
        out = [_run_trial(c) for c in configs]
    for key, seed, res in out:
        results.setdefault(key, {})[seed] = res

    rows: list[ReportRow] = []
    trials: dict[tuple[str, str, str], list[TrialResult]] = {}
    for key in sorted(results):
        by_seed = results[key]
        rs = [by_seed[s] for s in sorted(by_seed)]
        trials[key] = rs
        ok = [r.TL for r in rs if r.success]
        tl = float(np.mean(ok)) if ok else float(np.mean([r.TL for r in rs]))
        sr = 100.0 * sum(r.success for r in rs) / len(rs)
        ne = float(np.mean([r.NE for r in rs]))
        rows.append(ReportRow(environment=key[0], instruction=key[1],
                              variant=key[2], TL=tl, SR=sr, NE=ne))
    return ReportTable(rows=rows, trials=trials)


def export_report(table: ReportTable, format: str = "csv") -> str:
    if format == "csv":
        out = io.StringIO()
        out.write("environment,instruction,variant,TL,SR,NE\n")
        for r in table.rows:
            instr = '"' + r.instruction.replace('"', '""') + '"'
            out.write(f"{r.environment},{instr},{r.variant},"
                      f"{r.TL:.2f},{r.SR:.2f},{r.NE:.2f}\n")
        return out.getvalue()
    if format == "json":
        return json.dumps({"rows": [
            {"environment": r.environment, "instruction": r.instruction,
             "variant": r.variant, "TL": round(r.TL, 2), "SR": round(r.SR, 2),
             "NE": round(r.NE, 2)} for r in table.rows]}, indent=2)
    raise ValueError(f"unknown report format {format!r}")


def import_report(doc: str) -> ReportTable:
    data = json.loads(doc)
    return ReportTable(rows=[ReportRow(environment=r["environment"],
                                       instruction=r["instruction"],
                                       variant=r["variant"], TL=r["TL"],
                                       SR=r["SR"], NE=r["NE"])
                             for r in data["rows"]])


# --- bundled evaluation suite --------------------------------------------------

SMALL_WORLD_COMMANDS = (
    "Go to the house on the left.",
    "Go to the tree on the right.",
    "Find the mailbox, and fly towards it.",
    "Fly between the two houses, look for a tree, and fly towards it.",
)

CITY_COMMANDS = (
    "Go past the traffic light and go straight past the blue car. After "
    "crossing the blue mailbox, land in front of the gas station.",
    "Go to the blue car.",
    "Find the white truck, and fly towards it.",
    "Go past the stop sign, and land in front of the gas station.",
)


def desk_suite(variants=("pid", "reactive", "mpc")) -> list[EpisodeConfig]:
    suite = []
    for env, cmds in (("small_world_mini", SMALL_WORLD_COMMANDS),
                      ("city_mini", CITY_COMMANDS)):
        for cmd in cmds:
            for variant in variants:
                suite.append(EpisodeConfig(scenario_name=env, instruction=cmd,
                                           variant=variant))
    return suite


# --- toy barrier-recovery demo --------------------------------------------------

def demo_cbf(gamma: float = 1.0, duration: float = 12.0
             ) -> tuple[str, dict[str, float]]:
    """Reactive recovery from an unsafe start: h1(x_0) < 0, the constraint
    plus the side-sign escape drive the state back into the safe set. Returns
    (CSV of t,h1,px,py,pz, summary dict)."""
    from .planner import straight_path
    from .world import SafetyParams

    safety = SafetyParams(d_safe=2.0, gamma=gamma, sensing_range=10.0)
    dyn = DynamicsParams(tau=0.0, v_max=2.0, dt=0.2)
    pid = PidParams()
    obstacle = vec3(1.0, 0.0, -1.5)
    goal = vec3(8.0, 0.0, -1.5)
    path = straight_path(vec3(0, 0, -1.5), goal)
    state = DroneState.at_rest(vec3(0, 0, -1.5))
    lines = ["t,h1,px,py,pz"]
    h1_series = []
    n = int(duration / dyn.dt)
    for k in range(n):
        t = k * dyn.dt
        h1 = float(np.linalg.norm(obstacle - state.position)) - safety.d_safe
        h1_series.append((t, h1))
        lines.append(",".join([_fmt(t), _fmt(h1), _fmt(state.position[0]),
                               _fmt(state.position[1]), _fmt(state.position[2])]))
        obs = [ObstacleObservation(id=1, p_obs=obstacle, radius=0.0,
                                   velocity=vec3(0, 0, 0))]
        x_r, v_r = reference_at(path, t + PID_LOOKAHEAD_S)
        u_nom = pid_nominal(state, x_r, v_r, pid, dyn.v_max)
        u_nom = u_nom + headon_bias(state.position, goal, obs, safety)
        rows = constraint_rows(state.position, goal, obs, safety)
        u, _ = reactive_filter(u_nom, rows, dyn.v_max)
        state = step(state, u, dyn)

    recovery_t = next((t for t, h in h1_series if h >= 0.0), math.inf)
    after = [h for t, h in h1_series if t > recovery_t]
    summary = {
        "h1_start": h1_series[0][1],
        "recovery_time_s": recovery_t,
        "min_h1_after_recovery": min(after) if after else math.inf,
        "eps_disc": dyn.v_max * dyn.dt,
    }
    return "\n".join(lines) + "\n", summary
