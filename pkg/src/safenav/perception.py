"""Synthetic ego-centric RGB-D camera and detection stand-ins.

Rendering is id-buffer rasterization: each pixel carries the nearest object's
id and its depth along the camera z axis. The camera looks along the drone's
yaw; camera axes are z-forward / x-right(image i) / y-down(image j), which
map onto the body frame as x-forward / y-right / z-down.

Object-level detection reads tight bounding rectangles off the id buffer
(optionally with dropout/jitter noise); depth for a detection is the
id-filtered median over its box, which resists occlusion edges.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .world import CameraIntrinsics, Pose, Scenario, Vec3

STATIC = "static"
DYNAMIC = "dynamic"

# camera axes -> body axes: cam x (image right) -> body y, cam y (image down)
# -> body z, cam z (forward) -> body x
CAM_TO_BODY = np.array([[0.0, 0.0, 1.0],
                        [1.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0]])

_NEAR_CLIP = 0.05


@dataclass(frozen=True)
class Frame:
    id_map: np.ndarray      # (H, W) int32, 0 = background
    depth_map: np.ndarray   # (H, W) float64 in (0, max_depth]
    timestamp: float


@dataclass(frozen=True)
class BBox:
    x1: int
    y1: int
    x2: int                 # exclusive
    y2: int                 # exclusive
    label: str
    object_id: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError("bbox must have positive extent")

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2 - 1), 0.5 * (self.y1 + self.y2 - 1))


@dataclass(frozen=True)
class DetectorNoise:
    p_drop: float = 0.0
    jitter_px: int = 0


def pixel_to_camera(i: float, j: float, d: float, intr: CameraIntrinsics) -> Vec3:
    """Back-project pixel (i, j) at depth d into camera coordinates."""
    if d <= 0:
        raise ValueError("depth must be positive")
    return np.array([(i - intr.c_x) * d / intr.f_px,
                     (j - intr.c_y) * d / intr.f_px,
                     d])


def camera_to_global(p_c: Vec3, drone_pose: Pose) -> Vec3:
    """Camera point -> world point: remap camera axes to body, rotate by
    heading, translate by the drone position."""
    return drone_pose.R @ (CAM_TO_BODY @ np.asarray(p_c, dtype=np.float64)) \
        + drone_pose.position


def global_to_camera(p_w: Vec3, drone_pose: Pose) -> Vec3:
    return CAM_TO_BODY.T @ (drone_pose.R.T @ (np.asarray(p_w, dtype=np.float64)
                                              - drone_pose.position))


def project_point(p_w: Vec3, drone_pose: Pose,
                  intr: CameraIntrinsics) -> tuple[float, float, float] | None:
    """(i, j, depth) of a world point, or None if it is behind the camera."""
    p_c = global_to_camera(p_w, drone_pose)
    if p_c[2] <= _NEAR_CLIP:
        return None
    return (intr.c_x + intr.f_px * p_c[0] / p_c[2],
            intr.c_y + intr.f_px * p_c[1] / p_c[2],
            float(p_c[2]))


def _pixel_rect_for_box(lo: Vec3, hi: Vec3, pose: Pose, intr: CameraIntrinsics):
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    cams = (CAM_TO_BODY.T @ (pose.R.T @ (corners - pose.position).T)).T
    if np.all(cams[:, 2] <= _NEAR_CLIP):
        return None
    if np.any(cams[:, 2] <= _NEAR_CLIP):
        # box straddles the image plane: fall back to the whole image
        return 0, 0, intr.width, intr.height
    us = intr.c_x + intr.f_px * cams[:, 0] / cams[:, 2]
    vs = intr.c_y + intr.f_px * cams[:, 1] / cams[:, 2]
    x1 = max(0, int(math.floor(us.min())))
    y1 = max(0, int(math.floor(vs.min())))
    x2 = min(intr.width, int(math.ceil(us.max())) + 1)
    y2 = min(intr.height, int(math.ceil(vs.max())) + 1)
    if x1 >= x2 or y1 >= y2:
        return None
    return x1, y1, x2, y2


def _ray_dirs(rect, pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    """World-frame ray directions for the pixels of rect, scaled so the ray
    parameter equals camera depth (camera-z component is 1)."""
    x1, y1, x2, y2 = rect
    ii, jj = np.meshgrid(np.arange(x1, x2), np.arange(y1, y2), indexing="xy")
    d_cam = np.stack([(ii - intr.c_x) / intr.f_px,
                      (jj - intr.c_y) / intr.f_px,
                      np.ones_like(ii, dtype=np.float64)], axis=-1)
    return d_cam @ (pose.R @ CAM_TO_BODY).T


def _raster_box(id_map, depth_map, oid, lo, hi, pose, intr):
    rect = _pixel_rect_for_box(lo, hi, pose, intr)
    if rect is None:
        return
    dirs = _ray_dirs(rect, pose, intr)
    o = pose.position
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - o) / dirs
        t_hi = (hi - o) / dirs
    near = np.minimum(t_lo, t_hi)
    far = np.maximum(t_lo, t_hi)
    # axes with ~zero direction: inside the slab iff origin between planes
    flat = np.abs(dirs) < 1e-12
    inside = (o >= lo) & (o <= hi)
    near = np.where(flat, np.where(inside, -np.inf, np.inf), near)
    far = np.where(flat, np.where(inside, np.inf, -np.inf), far)
    t_entry = near.max(axis=-1)
    t_exit = far.min(axis=-1)
    t_entry = np.where(t_entry < _NEAR_CLIP, np.where(t_exit >= _NEAR_CLIP, t_exit, np.inf),
                       t_entry)
    hit = (t_entry <= t_exit) & np.isfinite(t_entry) & (t_entry <= intr.max_depth)
    x1, y1, x2, y2 = rect
    window_d = depth_map[y1:y2, x1:x2]
    window_i = id_map[y1:y2, x1:x2]
    mask = hit & (t_entry < window_d)
    window_d[mask] = t_entry[mask]
    window_i[mask] = oid


def _raster_sphere(id_map, depth_map, oid, center, radius, pose, intr):
    c_cam = global_to_camera(center, pose)
    z = float(c_cam[2])
    if z + radius <= _NEAR_CLIP or z - radius > intr.max_depth:
        return
    z_near = max(z - radius, _NEAR_CLIP)
    r_px = intr.f_px * radius / z_near + 1.0
    i0 = intr.c_x + intr.f_px * c_cam[0] / max(z, _NEAR_CLIP)
    j0 = intr.c_y + intr.f_px * c_cam[1] / max(z, _NEAR_CLIP)
    x1 = max(0, int(math.floor(i0 - r_px)))
    y1 = max(0, int(math.floor(j0 - r_px)))
    x2 = min(intr.width, int(math.ceil(i0 + r_px)) + 1)
    y2 = min(intr.height, int(math.ceil(j0 + r_px)) + 1)
    if x1 >= x2 or y1 >= y2:
        return
    rect = (x1, y1, x2, y2)
    dirs = _ray_dirs(rect, pose, intr)
    oc = center - pose.position
    dd = np.einsum("...k,...k->...", dirs, dirs)
    b = np.einsum("...k,k->...", dirs, oc)
    disc = b * b - dd * (float(oc @ oc) - radius * radius)
    hit = disc >= 0.0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t = (b - sqrt_disc) / dd
    t_far = (b + sqrt_disc) / dd
    t = np.where(t < _NEAR_CLIP, t_far, t)  # inside/straddling: use exit point
    hit &= (t >= _NEAR_CLIP) & (t <= intr.max_depth)
    window_d = depth_map[y1:y2, x1:x2]
    window_i = id_map[y1:y2, x1:x2]
    mask = hit & (t < window_d)
    window_d[mask] = t[mask]
    window_i[mask] = oid


def render_frame(scenario: Scenario, obstacle_positions: dict[int, Vec3],
                 drone_pose: Pose, intr: CameraIntrinsics, t: float) -> Frame:
    """Perspective id+depth render of all landmark boxes and obstacle spheres
    with z-buffering. obstacle_positions maps track id -> current center."""
    id_map = np.zeros((intr.height, intr.width), dtype=np.int32)
    depth_map = np.full((intr.height, intr.width), intr.max_depth, dtype=np.float64)
    for lm in scenario.landmarks:
        _raster_box(id_map, depth_map, lm.id, lm.position - lm.extent,
                    lm.position + lm.extent, drone_pose, intr)
    for track in scenario.obstacles:
        pos = obstacle_positions.get(track.id)
        if pos is not None:
            _raster_sphere(id_map, depth_map, track.id, pos, track.radius,
                           drone_pose, intr)
    return Frame(id_map=id_map, depth_map=depth_map, timestamp=t)


def detect_objects(frame: Frame, labels: dict[int, str],
                   noise: DetectorNoise | None = None,
                   rng: np.random.Generator | None = None) -> list[BBox]:
    """One tight BBox per distinct id present in the id buffer."""
    h, w = frame.id_map.shape
    out: list[BBox] = []
    for oid in np.unique(frame.id_map):
        if oid == 0:
            continue
        ys, xs = np.nonzero(frame.id_map == oid)
        x1, x2 = int(xs.min()), int(xs.max()) + 1
        y1, y2 = int(ys.min()), int(ys.max()) + 1
        if noise is not None and rng is not None:
            if noise.p_drop > 0 and rng.random() < noise.p_drop:
                continue
            if noise.jitter_px > 0:
                jx1, jy1, jx2, jy2 = rng.integers(-noise.jitter_px,
                                                  noise.jitter_px + 1, size=4)
                x1 = int(np.clip(x1 + jx1, 0, w - 1))
                y1 = int(np.clip(y1 + jy1, 0, h - 1))
                x2 = int(np.clip(x2 + jx2, x1 + 1, w))
                y2 = int(np.clip(y2 + jy2, y1 + 1, h))
        out.append(BBox(x1=x1, y1=y1, x2=x2, y2=y2,
                        label=labels.get(int(oid), "object"), object_id=int(oid)))
    return out


def classify_motion(prev_center: tuple[float, float],
                    curr_center: tuple[float, float], epsilon: float) -> str:
    """Static iff the center moved by <= epsilon pixels (inf-norm) between
    consecutive frames; epsilon = 0 is the literal equality test."""
    dx = abs(curr_center[0] - prev_center[0])
    dy = abs(curr_center[1] - prev_center[1])
    return STATIC if max(dx, dy) <= epsilon else DYNAMIC


def crop_depth_median(frame: Frame, bbox: BBox) -> float:
    """Median depth over the bbox's own-id pixels (all bbox pixels if the id
    is absent, e.g. after jitter)."""
    ids = frame.id_map[bbox.y1:bbox.y2, bbox.x1:bbox.x2]
    depths = frame.depth_map[bbox.y1:bbox.y2, bbox.x1:bbox.x2]
    if depths.size == 0:
        raise ValueError("empty crop")
    own = depths[ids == bbox.object_id]
    return float(np.median(own if own.size else depths))


@dataclass
class _TrackEntry:
    history: list[tuple[float, Vec3]] = field(default_factory=list)
    motion: str | None = None
    velocity: Vec3 = field(default_factory=lambda: np.zeros(3))


class MotionTracker:
    """Ego-motion-compensated static/dynamic classifier and velocity estimator.

    Pixel-center comparison only works from a stationary camera; from a
    moving drone every static object drifts in the image, so detections are
    lifted to global coordinates (pixel center + median depth through the
    current pose) and classified by the displacement RATE of that global
    point over a short window. Static structure shows only lift jitter (the
    visible face shifts a little with viewpoint); anything displacing faster
    than v_threshold is dynamic. Classification starts after 2 observations
    and is re-evaluated every frame, so a one-off jitter spike recovers.
    """

    def __init__(self, v_threshold: float = 0.5, window_s: float = 0.8,
                 ema: float = 0.5):
        self.v_threshold = v_threshold
        self.window_s = window_s
        self.ema = ema
        self._tracks: dict[int, _TrackEntry] = {}

    def update(self, frame: Frame, detections: list[BBox], pose: Pose,
               intr: CameraIntrinsics) -> dict[int, str | None]:
        out: dict[int, str | None] = {}
        for det in detections:
            i, j = det.center
            try:
                d = crop_depth_median(frame, det)
            except ValueError:
                continue
            g = camera_to_global(pixel_to_camera(i, j, d, intr), pose)
            e = self._tracks.setdefault(det.object_id, _TrackEntry())
            if e.history:
                t_prev, g_prev = e.history[-1]
                dt = frame.timestamp - t_prev
                if dt > 0:
                    v_inst = (g - g_prev) / dt
                    e.velocity = self.ema * v_inst + (1 - self.ema) * e.velocity
            e.history.append((frame.timestamp, g))
            cutoff = frame.timestamp - self.window_s
            while len(e.history) > 2 and e.history[1][0] >= cutoff:
                e.history.pop(0)
            if len(e.history) >= 2:
                t0, g0 = e.history[0]
                span = frame.timestamp - t0
                rate = float(np.linalg.norm(g - g0)) / span if span > 0 else 0.0
                e.motion = DYNAMIC if rate > self.v_threshold else STATIC
            out[det.object_id] = e.motion
        return out

    def motion_of(self, oid: int) -> str | None:
        e = self._tracks.get(oid)
        return e.motion if e else None

    def velocity_of(self, oid: int) -> Vec3:
        e = self._tracks.get(oid)
        if e is None or e.motion != DYNAMIC:
            return np.zeros(3)
        return e.velocity.copy()

    def last_global_of(self, oid: int) -> Vec3 | None:
        e = self._tracks.get(oid)
        if e is None or not e.history:
            return None
        return e.history[-1][1].copy()


def write_pgm(path: str, id_map: np.ndarray) -> None:
    """Object-id buffer as a binary PGM (ids scaled into 0..255)."""
    arr = id_map.astype(np.int64)
    top = max(int(arr.max()), 1)
    scaled = (arr * (255 // top)).clip(0, 255).astype(np.uint8)
    h, w = scaled.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(scaled.tobytes())


def write_pfm(path: str, depth_map: np.ndarray) -> None:
    """Depth buffer as a little-endian PFM (rows bottom-up per the format)."""
    h, w = depth_map.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        data = np.flipud(depth_map).astype("<f4")
        f.write(struct.pack(f"<{h * w}f", *data.ravel()))
