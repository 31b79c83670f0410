from __future__ import annotations

import math

import numpy as np
import pytest

from safenav.world import (ObstacleTrack, ScenarioError, heading_rotation,
                           load_scenario, obstacle_pose_at, serialize_scenario,
                           vec3)

MINIMAL = """
name: minimal
bounds: {min: [-5, -5, -5], max: [20, 5, 0]}
drone_start: {position: [0, 0, -1.5], yaw: 0.0}
camera: {f_px: 64, c_x: 64, c_y: 48, width: 128, height: 96, max_depth: 30}
safety: {d_safe: 2.0, theta_safe_deg: 30.0, gamma: 1.0, sensing_range: 10.0}
landmarks:
  - {id: 1, class: tree, position: [8, 0, -1.0], extent: [0.5, 0.5, 1.0]}
obstacles: []
"""


def test_minimal_document_round_trip():
    s = load_scenario(MINIMAL)
    assert len(s.landmarks) == 1
    assert len(s.obstacles) == 0
    assert s.landmarks[0].class_label == "tree"
    # round trip: serialized form reloads to an identical document
    text = serialize_scenario(s)
    assert serialize_scenario(load_scenario(text)) == text


def test_duplicate_ids_rejected():
    doc = MINIMAL.replace(
        "obstacles: []",
        "obstacles:\n  - {id: 1, class: pedestrian, radius: 0.3, waypoints: [[0, [5, 0, -1]]]}")
    with pytest.raises(ScenarioError, match="ids unique"):
        load_scenario(doc)


def test_missing_field_names_offender():
    with pytest.raises(ScenarioError, match="bounds"):
        load_scenario("name: x\ndrone_start: {position: [0,0,-1]}\n")


def test_landmark_outside_bounds_rejected():
    doc = MINIMAL.replace("[8, 0, -1.0]", "[80, 0, -1.0]")
    with pytest.raises(ScenarioError, match="inside bounds"):
        load_scenario(doc)


def test_bundled_small_world_mini_fixture():
    from safenav.scenarios import bundled_scenario
    s = bundled_scenario("small_world_mini")
    houses = [lm for lm in s.landmarks if lm.class_label == "house"]
    trees = [lm for lm in s.landmarks if lm.class_label == "tree"]
    boxes = [lm for lm in s.landmarks if lm.class_label == "mailbox"]
    peds = [ob for ob in s.obstacles if ob.class_label == "pedestrian"]
    assert len(houses) == 2 and len(trees) == 1 and len(boxes) == 1
    assert len(peds) == 2
    text = serialize_scenario(s)
    assert serialize_scenario(load_scenario(text)) == text


def test_obstacle_pose_interpolation_and_clamp():
    tr = ObstacleTrack(id=1, class_label="pedestrian", radius=0.3,
                       waypoints=((0.0, vec3(0, 0, 0)), (10.0, vec3(10, 0, 0))))
    assert np.allclose(obstacle_pose_at(tr, 5.0), [5, 0, 0])
    assert np.allclose(obstacle_pose_at(tr, -1.0), [0, 0, 0])
    assert np.allclose(obstacle_pose_at(tr, 20.0), [10, 0, 0])


def test_obstacle_pose_continuity():
    tr = ObstacleTrack(id=1, class_label="pedestrian", radius=0.3,
                       waypoints=((0.0, vec3(0, 0, 0)), (4.0, vec3(4, 2, 0)),
                                  (8.0, vec3(0, 4, 0))))
    v_max = 2.0  # fastest segment speed
    eps = 1e-4
    for t in np.linspace(-1, 9, 200):
        d = np.linalg.norm(obstacle_pose_at(tr, t + eps) - obstacle_pose_at(tr, t))
        assert d <= v_max * eps + 1e-12


def test_waypoint_times_must_increase():
    with pytest.raises(ValueError, match="strictly increasing"):
        ObstacleTrack(id=1, class_label="x", radius=0.3,
                      waypoints=((1.0, vec3(0, 0, 0)), (1.0, vec3(1, 0, 0))))


def test_heading_rotation_basics():
    assert np.allclose(heading_rotation(0.0), np.eye(3))
    assert np.allclose(heading_rotation(math.pi / 2) @ vec3(1, 0, 0),
                       [0, 1, 0], atol=1e-12)


def test_heading_rotation_orthonormal_and_additive():
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = float(rng.uniform(-10, 10))
        R = heading_rotation(y)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    for _ in range(50):
        y1, y2 = rng.uniform(-5, 5, size=2)
        assert np.allclose(heading_rotation(y1) @ heading_rotation(y2),
                           heading_rotation(y1 + y2), atol=1e-10)
