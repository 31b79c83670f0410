"""World model: scenario geometry, frames, obstacle motion, shared configuration.

Frame convention is NED-like: x forward, y right, z down. Ground is the z=0
plane and altitudes are negative z. With this choice the sign of the z
component of a cross product of two horizontal direction vectors is +1 when
the second vector points to the right of the first, so side-selection signs
read literally as left/right.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np
import yaml

Vec3 = np.ndarray  # shape (3,), float64, finite


def vec3(x: float, y: float, z: float) -> Vec3:
    v = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector components: {v}")
    return v


def stable_seed(*parts) -> int:
    """Platform-stable 64-bit seed from string-able parts (for deterministic RNG)."""
    digest = hashlib.blake2b("|".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def heading_rotation(yaw: float) -> np.ndarray:
    """Rotation about the world z axis by yaw (radians). Orthonormal, det +1."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    position: Vec3
    yaw: float

    @property
    def R(self) -> np.ndarray:
        return heading_rotation(self.yaw)


@dataclass(frozen=True)
class CameraIntrinsics:
    f_px: float
    c_x: float
    c_y: float
    width: int
    height: int
    max_depth: float

    def __post_init__(self):
        if self.f_px <= 0:
            raise ValueError("f_px > 0")
        if not (0 <= self.c_x < self.width):
            raise ValueError("0 <= c_x < width")
        if not (0 <= self.c_y < self.height):
            raise ValueError("0 <= c_y < height")
        if self.max_depth <= 0:
            raise ValueError("max_depth > 0")


@dataclass(frozen=True)
class SafetyParams:
    d_safe: float = 2.0
    theta_safe: float = math.radians(30.0)
    gamma: float = 1.0
    sensing_range: float = 10.0
    activation_margin: float = 10.0

    def __post_init__(self):
        if self.d_safe <= 0:
            raise ValueError("d_safe > 0")
        if not (0 < self.theta_safe < math.pi / 2):
            raise ValueError("0 < theta_safe < pi/2")
        if self.gamma <= 0:
            raise ValueError("gamma > 0")
        if self.sensing_range <= self.d_safe:
            raise ValueError("sensing_range > d_safe")


@dataclass(frozen=True)
class Landmark:
    id: int
    class_label: str
    position: Vec3
    extent: Vec3  # half-sizes of the axis-aligned box
    attribute_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.class_label:
            raise ValueError("class_label non-empty")
        if not np.all(self.extent > 0):
            raise ValueError("extent components > 0")

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.attribute_tokens) + tuple(self.class_label.split())


@dataclass(frozen=True)
class ObstacleTrack:
    id: int
    class_label: str
    radius: float
    waypoints: tuple[tuple[float, Vec3], ...]  # (time s, position), strictly increasing times

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius > 0")
        times = [t for t, _ in self.waypoints]
        if len(times) == 0:
            raise ValueError("at least one waypoint")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times strictly increasing")


def obstacle_pose_at(track: ObstacleTrack, t: float) -> Vec3:
    """Piecewise-linear position along the track, clamped outside the time range."""
    wps = track.waypoints
    if t <= wps[0][0]:
        return wps[0][1].copy()
    if t >= wps[-1][0]:
        return wps[-1][1].copy()
    for (t0, p0), (t1, p1) in zip(wps, wps[1:]):
        if t0 <= t <= t1:
            a = (t - t0) / (t1 - t0)
            return (1.0 - a) * p0 + a * p1
    return wps[-1][1].copy()  # unreachable for valid tracks


@dataclass(frozen=True)
class Scenario:
    name: str
    bounds_min: Vec3
    bounds_max: Vec3
    landmarks: tuple[Landmark, ...]
    obstacles: tuple[ObstacleTrack, ...]
    drone_start: Pose
    intrinsics: CameraIntrinsics
    safety: SafetyParams
    drone_radius: float = 0.3

    def __post_init__(self):
        if not np.all(self.bounds_min < self.bounds_max):
            raise ValueError("bounds_min < bounds_max componentwise")
        if not self._inside(self.drone_start.position):
            raise ValueError("drone_start inside bounds")
        for lm in self.landmarks:
            if not self._inside(lm.position):
                raise ValueError(f"landmark {lm.id} position inside bounds")
        ids = [lm.id for lm in self.landmarks] + [ob.id for ob in self.obstacles]
        if len(ids) != len(set(ids)):
            raise ValueError("ids unique")

    def _inside(self, p: Vec3) -> bool:
        return bool(np.all(p >= self.bounds_min) and np.all(p <= self.bounds_max))

    def landmark_by_id(self, oid: int) -> Landmark | None:
        for lm in self.landmarks:
            if lm.id == oid:
                return lm
        return None

    def track_by_id(self, oid: int) -> ObstacleTrack | None:
        for ob in self.obstacles:
            if ob.id == oid:
                return ob
        return None

    def object_tokens(self) -> dict[int, tuple[str, ...]]:
        """id -> identity tokens (attributes + class words) for every renderable object."""
        out: dict[int, tuple[str, ...]] = {}
        for lm in self.landmarks:
            out[lm.id] = lm.tokens
        for ob in self.obstacles:
            out[ob.id] = tuple(ob.class_label.split())
        return out

    def object_labels(self) -> dict[int, str]:
        out = {lm.id: lm.class_label for lm in self.landmarks}
        out.update({ob.id: ob.class_label for ob in self.obstacles})
        return out


class ScenarioError(ValueError):
    """Raised when a scenario document violates the schema or an invariant."""


def _req(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise ScenarioError(f"{ctx}: missing required field '{key}'")
    return doc[key]


def _vec(value, ctx: str) -> Vec3:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ScenarioError(f"{ctx}: expected [x, y, z], got {value!r}")
    try:
        return vec3(*[float(v) for v in value])
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"{ctx}: {e}") from e


def load_scenario(text: str) -> Scenario:
    """Parse and validate a YAML scenario document.

    Top-level keys: name, bounds, landmarks, obstacles, drone_start, camera,
    safety, drone_radius. See docs/scenario_schema.md for the grammar.
    """
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ScenarioError("document must be a mapping")
    name = str(_req(doc, "name", "scenario"))
    bounds = _req(doc, "bounds", "scenario")
    bmin = _vec(_req(bounds, "min", "bounds"), "bounds.min")
    bmax = _vec(_req(bounds, "max", "bounds"), "bounds.max")

    lms = []
    for i, lm in enumerate(doc.get("landmarks", []) or []):
        ctx = f"landmarks[{i}]"
        lms.append(Landmark(
            id=int(_req(lm, "id", ctx)),
            class_label=str(_req(lm, "class", ctx)),
            attribute_tokens=tuple(str(a) for a in lm.get("attributes", []) or []),
            position=_vec(_req(lm, "position", ctx), f"{ctx}.position"),
            extent=_vec(_req(lm, "extent", ctx), f"{ctx}.extent"),
        ))

    obs = []
    for i, ob in enumerate(doc.get("obstacles", []) or []):
        ctx = f"obstacles[{i}]"
        raw_wps = _req(ob, "waypoints", ctx)
        wps = []
        for j, wp in enumerate(raw_wps):
            if not isinstance(wp, (list, tuple)) or len(wp) != 2:
                raise ScenarioError(f"{ctx}.waypoints[{j}]: expected [time, [x,y,z]]")
            wps.append((float(wp[0]), _vec(wp[1], f"{ctx}.waypoints[{j}]")))
        obs.append(ObstacleTrack(
            id=int(_req(ob, "id", ctx)),
            class_label=str(_req(ob, "class", ctx)),
            radius=float(_req(ob, "radius", ctx)),
            waypoints=tuple(wps),
        ))

    start = _req(doc, "drone_start", "scenario")
    pose = Pose(position=_vec(_req(start, "position", "drone_start"), "drone_start.position"),
                yaw=float(start.get("yaw", 0.0)))

    cam = _req(doc, "camera", "scenario")
    intr = CameraIntrinsics(
        f_px=float(_req(cam, "f_px", "camera")),
        c_x=float(_req(cam, "c_x", "camera")),
        c_y=float(_req(cam, "c_y", "camera")),
        width=int(_req(cam, "width", "camera")),
        height=int(_req(cam, "height", "camera")),
        max_depth=float(_req(cam, "max_depth", "camera")),
    )

    saf = doc.get("safety", {}) or {}
    safety = SafetyParams(
        d_safe=float(saf.get("d_safe", 2.0)),
        theta_safe=math.radians(float(saf.get("theta_safe_deg", 30.0))),
        gamma=float(saf.get("gamma", 1.0)),
        sensing_range=float(saf.get("sensing_range", 10.0)),
        activation_margin=float(saf.get("activation_margin", saf.get("sensing_range", 10.0))),
    )

    try:
        return Scenario(
            name=name,
            bounds_min=bmin,
            bounds_max=bmax,
            landmarks=tuple(lms),
            obstacles=tuple(obs),
            drone_start=pose,
            intrinsics=intr,
            safety=safety,
            drone_radius=float(doc.get("drone_radius", 0.3)),
        )
    except ValueError as e:
        raise ScenarioError(str(e)) from e


def serialize_scenario(s: Scenario) -> str:
    """Inverse of load_scenario; load_scenario(serialize_scenario(s)) reproduces s."""
    doc = {
        "name": s.name,
        "bounds": {"min": [float(v) for v in s.bounds_min],
                   "max": [float(v) for v in s.bounds_max]},
        "drone_start": {"position": [float(v) for v in s.drone_start.position],
                        "yaw": float(s.drone_start.yaw)},
        "drone_radius": float(s.drone_radius),
        "camera": {"f_px": s.intrinsics.f_px, "c_x": s.intrinsics.c_x, "c_y": s.intrinsics.c_y,
                   "width": s.intrinsics.width, "height": s.intrinsics.height,
                   "max_depth": s.intrinsics.max_depth},
        "safety": {"d_safe": s.safety.d_safe,
                   "theta_safe_deg": math.degrees(s.safety.theta_safe),
                   "gamma": s.safety.gamma,
                   "sensing_range": s.safety.sensing_range,
                   "activation_margin": s.safety.activation_margin},
        "landmarks": [
            {"id": lm.id, "class": lm.class_label,
             "attributes": list(lm.attribute_tokens),
             "position": [float(v) for v in lm.position],
             "extent": [float(v) for v in lm.extent]}
            for lm in s.landmarks
        ],
        "obstacles": [
            {"id": ob.id, "class": ob.class_label, "radius": ob.radius,
             "waypoints": [[t, [float(v) for v in p]] for t, p in ob.waypoints]}
            for ob in s.obstacles
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def shift_track(track: ObstacleTrack, dt_offset: float) -> ObstacleTrack:
    """Time-shift a track (used to randomize obstacle phase across seeds)."""
    return replace(track, waypoints=tuple((t + dt_offset, p) for t, p in track.waypoints))
