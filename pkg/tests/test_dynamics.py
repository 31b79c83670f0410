from __future__ import annotations

import math

import numpy as np

from safenav.dynamics import (DroneState, DynamicsParams, lie_terms,
                              predict_nominal, step)
from safenav.world import vec3


def test_lie_terms_single_integrator():
    s = DroneState.at_rest(vec3(3, -1, -2), yaw=0.7)
    f, g = lie_terms(s)
    assert np.allclose(f, 0.0)
    assert np.allclose(g, np.eye(3))


def test_euler_step_tau_zero():
    p = DynamicsParams(tau=0.0, dt=0.2)
    s = step(DroneState.at_rest(vec3(0, 0, 0)), vec3(1, 0, 0), p)
    assert np.allclose(s.position, [0.2, 0, 0])
    assert np.allclose(s.linear_velocity, [1, 0, 0])


def test_zero_command_is_fixed_point():
    p = DynamicsParams(tau=0.0, dt=0.2)
    s0 = DroneState.at_rest(vec3(1, 2, -1), yaw=0.3)
    s1 = step(s0, np.zeros(3), p)
    assert np.allclose(s1.position, s0.position)
    assert s1.yaw == s0.yaw  # below the yaw-alignment speed threshold


def test_first_order_lag_exact_solution():
    p = DynamicsParams(tau=0.1, dt=0.2)
    s = step(DroneState.at_rest(vec3(0, 0, 0)), vec3(1, 0, 0), p)
    expected_v = 1.0 - math.exp(-p.dt / p.tau)  # ~0.8647
    assert s.linear_velocity[0] == np.float64(expected_v)
    assert abs(s.linear_velocity[0] - 0.8647) < 1e-4


def test_predict_nominal_accumulates():
    p = DynamicsParams(tau=0.0, dt=0.2)
    u_seq = [vec3(1, 0, 0)] * 3
    states = predict_nominal(DroneState.at_rest(vec3(0, 0, 0)), u_seq, p)
    assert [round(float(s.position[0]), 10) for s in states] == [0.2, 0.4, 0.6]
    assert predict_nominal(DroneState.at_rest(vec3(0, 0, 0)), [], p) == []


def test_prediction_matches_closed_form_tau_zero():
    p = DynamicsParams(tau=0.0, dt=0.2)
    rng = np.random.default_rng(5)
    for _ in range(100):
        p0 = rng.uniform(-5, 5, size=3)
        u_seq = [rng.uniform(-p.v_max, p.v_max, size=3) for _ in range(8)]
        states = predict_nominal(DroneState.at_rest(p0), u_seq, p)
        expect = p0 + p.dt * np.sum(u_seq, axis=0)
        assert np.allclose(states[-1].position, expect, atol=1e-12)


def test_speed_clamp_after_step():
    p = DynamicsParams(tau=0.0, v_max=2.0, dt=0.2)
    s = step(DroneState.at_rest(vec3(0, 0, 0)), vec3(5, -7, 3), p)
    assert np.all(np.abs(s.linear_velocity) <= p.v_max + 1e-12)


def test_yaw_tracks_velocity_direction():
    p = DynamicsParams(tau=0.0, dt=0.2)
    s = step(DroneState.at_rest(vec3(0, 0, 0)), vec3(0, 1, 0), p)
    assert abs(s.yaw - math.pi / 2) < 1e-12


def test_refinement_consistency_with_lag():
    # halving dt and doubling steps moves the final position by <= 5%
    start = DroneState.at_rest(vec3(0, 0, 0))
    u = vec3(1.0, 0.5, 0.0)

    def final_x(dt, steps):
        prm = DynamicsParams(tau=0.1, dt=dt)
        s = start
        for _ in range(steps):
            s = step(s, u, prm)
        return s.position

    a = final_x(0.2, 10)
    b = final_x(0.1, 20)
    assert np.linalg.norm(a - b) <= 0.05 * np.linalg.norm(b)


def test_finite_difference_of_barrier_matches_grad_dot_u():
    # hdot along a rollout equals grad(h).u to O(dt) for h(p) = |p_obs - p|
    p = DynamicsParams(tau=0.0, dt=0.01)
    p_obs = vec3(5, 1, -1)
    s = DroneState.at_rest(vec3(0, 0, -1))
    rng = np.random.default_rng(2)
    for _ in range(50):
        u = rng.uniform(-1, 1, size=3)
        h0 = np.linalg.norm(p_obs - s.position)
        grad = -(p_obs - s.position) / h0
        s1 = step(s, u, p)
        h1 = np.linalg.norm(p_obs - s1.position)
        assert abs((h1 - h0) / p.dt - grad @ u) < 0.05  # O(dt) curvature error
        s = s1
