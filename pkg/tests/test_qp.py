"""QP solver vs an exhaustive active-set enumeration oracle.

The oracle is deliberately independent of the solver: it enumerates every
subset of constraints up to size n, solves the equality-constrained system
for each, and keeps the best feasible candidate. For a convex QP the optimal
active set is one of those subsets, so the best feasible candidate is the
global optimum.
"""
from __future__ import annotations

import itertools

import numpy as np
import pytest

from safenav.qp import (KktResiduals, QpError, QpProblem, QpSolution,
                        kkt_residual, solve_qp)


def enumerate_qp_oracle(P, q, G, h):
    """Global optimum of min 1/2 z'Pz + q'z s.t. Gz <= h by subset enumeration."""
    n = q.shape[0]
    m = G.shape[0]
    best_obj, best_z = np.inf, None
    for k in range(min(n, m) + 1):
        for subset in itertools.combinations(range(m), k):
            A = G[list(subset)]
            KKT = np.block([[P, A.T], [A, np.zeros((k, k))]]) if k else P
            rhs = np.concatenate([-q, h[list(subset)]]) if k else -q
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            z = sol[:n]
            if np.all(G @ z <= h + 1e-9):
                obj = 0.5 * z @ P @ z + q @ z
                if obj < best_obj - 1e-15:
                    best_obj, best_z = obj, z
    return best_obj, best_z


def random_feasible_qp(rng: np.random.Generator):
    """Random strictly-convex QP with a known interior point (hence feasible).

    Sizes respect n <= 12, m <= 20, but (n, m) pairs are drawn so the oracle's
    subset enumeration stays tractable (large m only with small n).
    """
    while True:
        n = int(rng.integers(1, 13))
        m = int(rng.integers(0, 21))
        subsets = sum(
            int(np.prod([(m - i) / (i + 1) for i in range(k)], initial=1.0))
            for k in range(min(n, m) + 1))
        if subsets <= 30000:
            break
    A = rng.standard_normal((n, n))
    P = A.T @ A + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    G = rng.standard_normal((m, n)) if m else np.zeros((0, n))
    z0 = rng.standard_normal(n)
    h = G @ z0 + rng.uniform(0.05, 1.0, size=m) if m else np.zeros(0)
    return QpProblem(P=P, q=q, G=G, h_vec=h)


def objective(qp: QpProblem, z: np.ndarray) -> float:
    return float(0.5 * z @ qp.P @ z + qp.q @ z)


def test_unconstrained_projection():
    # min ||z - z0||^2 with no constraints returns z0
    z0 = np.array([1.0, -2.0, 0.5])
    qp = QpProblem(P=2.0 * np.eye(3), q=-2.0 * z0)
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert np.allclose(sol.z_star, z0, atol=1e-10)


def test_single_active_row():
    # min ||z||^2 s.t. z_x >= 1  ->  (1, 0, 0), that row active
    qp = QpProblem(P=2.0 * np.eye(3), q=np.zeros(3),
                   G=np.array([[-1.0, 0.0, 0.0]]), h_vec=np.array([-1.0]))
    sol = solve_qp(qp)
    assert sol.status == "optimal"
    assert np.allclose(sol.z_star, [1.0, 0.0, 0.0], atol=1e-9)
    assert sol.duals[0] > 1e-9


def test_box_bounds():
    qp = QpProblem(P=2.0 * np.eye(2), q=np.array([-10.0, 1.0]),
                   lb=np.array([-1.0, -1.0]), ub=np.array([1.0, 1.0]))
    sol = solve_qp(qp)
    assert np.allclose(sol.z_star, [1.0, -0.5], atol=1e-9)


def test_random_suite_matches_enumeration_oracle():
    rng = np.random.default_rng(7)
    for _ in range(120):
        qp = random_feasible_qp(rng)
        sol = solve_qp(qp)
        assert sol.status == "optimal", sol
        best_obj, _ = enumerate_qp_oracle(qp.P, qp.q, qp.G, qp.h_vec)
        assert objective(qp, sol.z_star) <= best_obj + 1e-6
        assert objective(qp, sol.z_star) >= best_obj - 1e-6
        assert sol.kkt.max_abs() <= 1e-8


def test_kkt_residual_detects_perturbation():
    rng = np.random.default_rng(3)
    qp = random_feasible_qp(rng)
    sol = solve_qp(qp)
    assert kkt_residual(qp, sol).stationarity <= 1e-10
    bad = QpSolution(z_star=sol.z_star + 1e-3, status=sol.status, kkt=sol.kkt,
                     slack_used=sol.slack_used, duals=sol.duals)
    assert kkt_residual(qp, bad).stationarity > 1e-4


def test_soft_rows_relax_infeasible_problem():
    # z <= -1 and z >= 1 conflict; the soft row absorbs the gap and reports slack.
    qp = QpProblem(P=2.0 * np.eye(1), q=np.zeros(1),
                   G=np.array([[1.0], [-1.0]]), h_vec=np.array([-1.0, -1.0]),
                   soft_rows=(0,))
    sol = solve_qp(qp)
    assert sol.status == "infeasible_relaxed"
    assert sol.slack_used[0] > 1.0e-3
    assert sol.z_star[0] >= 1.0 - 1e-6  # hard row -z <= -1 still holds


def test_slack_monotone_in_weight():
    qp_lo = QpProblem(P=2.0 * np.eye(1), q=np.zeros(1),
                      G=np.array([[1.0], [-1.0]]), h_vec=np.array([-1.0, -1.0]),
                      soft_rows=(0,), w_slack=1e2)
    qp_hi = QpProblem(P=qp_lo.P, q=qp_lo.q, G=qp_lo.G, h_vec=qp_lo.h_vec,
                      soft_rows=(0,), w_slack=1e6)
    assert solve_qp(qp_hi).slack_used.sum() <= solve_qp(qp_lo).slack_used.sum() + 1e-9


def test_determinism_bit_for_bit():
    rng = np.random.default_rng(11)
    qp = random_feasible_qp(rng)
    a = solve_qp(qp)
    b = solve_qp(qp)
    assert a.z_star.tobytes() == b.z_star.tobytes()
    assert a.duals.tobytes() == b.duals.tobytes()


def test_dimension_mismatch_raises():
    with pytest.raises(QpError):
        solve_qp(QpProblem(P=np.eye(3), q=np.zeros(2)))
    with pytest.raises(QpError):
        solve_qp(QpProblem(P=np.eye(2), q=np.zeros(2),
                           G=np.ones((1, 3)), h_vec=np.ones(1)))


def test_asymmetric_p_rejected():
    P = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(QpError):
        solve_qp(QpProblem(P=P, q=np.zeros(2)))
