"""Small dense convex QP solver with KKT certificates.

Solves  min 1/2 z'Pz + q'z  s.t.  G z <= h,  lb <= z <= ub
with a dual active-set method (Goldfarb-Idnani): start at the unconstrained
optimum and add violated constraints one at a time, taking primal/dual steps
until dual feasibility would break, in which case a blocking constraint is
dropped. Problems here are tiny (n <= ~45, a few dozen rows), so each step
re-solves the KKT subsystem directly instead of maintaining factor updates.

Rows listed in `soft_rows` (the barrier constraints) are given a slack
variable s >= 0 with quadratic penalty w_slack * s^2, which keeps the
problem feasible no matter how conflicting the barrier rows get; slack usage
is reported, never silently ignored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


# an ACTIVE soft row always carries slack ~lambda/(2*w_slack) ~ 1e-6 from the
# quadratic penalty; only slack above this marks genuine relaxation
SLACK_MATERIAL = 1e-4


class QpError(ValueError):
    """Dimension mismatch, asymmetry, or non-PSD cost beyond regularization."""


class QpInfeasibleError(QpError):
    """Hard constraints are mutually inconsistent (no soft row can absorb it)."""


@dataclass(frozen=True)
class QpProblem:
    P: np.ndarray                      # n x n symmetric PSD
    q: np.ndarray                      # n
    G: np.ndarray | None = None        # m x n, encodes G z <= h_vec
    h_vec: np.ndarray | None = None    # m
    lb: np.ndarray | None = None       # n (or None = unbounded below)
    ub: np.ndarray | None = None
    soft_rows: tuple[int, ...] = ()    # indices into G that carry penalized slack
    w_slack: float = 1e6


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float      # ||Pz + q + G'lam||_inf
    primal: float            # max constraint violation
    dual: float              # min multiplier (>= -tol at an optimum)
    complementarity: float   # max |lam_i * (Gz - h)_i|

    def max_abs(self) -> float:
        return max(self.stationarity, self.primal, max(0.0, -self.dual),
                   self.complementarity)


@dataclass
class QpSolution:
    z_star: np.ndarray
    status: str                        # optimal | max_iter | infeasible_relaxed
    kkt: KktResiduals
    slack_used: np.ndarray             # one entry per soft row (empty if none)
    iterations: int = 0
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))  # canonical-row order


def _chol_psd(P: np.ndarray) -> np.ndarray:
    """Cholesky factor of P, regularizing with escalating +eps*I if needed."""
    eps = 0.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(P + eps * np.eye(P.shape[0]) if eps else P)
        except np.linalg.LinAlgError:
            eps = 1e-9 if eps == 0.0 else eps * 10.0
    raise QpError("cost matrix not PSD beyond regularization")


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, y)


def _goldfarb_idnani(P: np.ndarray, q: np.ndarray, C: np.ndarray, d: np.ndarray,
                     max_iter: int, tol: float):
    """min 1/2 x'Px + q'x s.t. C' x >= d. Returns (x, lam_full, iters, hit_cap)."""
    n = P.shape[0]
    m = C.shape[1]
    L = _chol_psd(P)
    x = -_chol_solve(L, q)
    lam_full = np.zeros(m)
    if m == 0:
        return x, lam_full, 0, False

    active: list[int] = []
    lam: list[float] = []
    iters = 0
    hit_cap = False
    while True:
        iters += 1
        if iters > max_iter:
            hit_cap = True
            break
        s = C.T @ x - d
        s[active] = 0.0  # active rows are tight by construction
        p = int(np.argmin(s))
        if s[p] >= -tol:
            break  # all constraints satisfied: optimal
        c_p = C[:, p]
        lam_p = 0.0

        inner = 0
        while True:
            inner += 1
            if inner > 2 * (n + m):
                hit_cap = True
                break
            Pinv_cp = _chol_solve(L, c_p)
            if active:
                A = C[:, active]
                M = A.T @ _chol_solve(L, A)
                rhs = A.T @ Pinv_cp
                try:
                    r = np.linalg.solve(M, rhs)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(M, rhs, rcond=None)[0]
                z = Pinv_cp - _chol_solve(L, A @ r)
            else:
                r = np.zeros(0)
                z = Pinv_cp

            # partial step: first active multiplier driven to zero
            t1, drop_j = np.inf, -1
            for j in range(len(active)):
                if r[j] > tol:
                    t = lam[j] / r[j]
                    if t < t1 - 1e-15:
                        t1, drop_j = t, j
            # full step: incoming constraint becomes tight
            czp = float(c_p @ z)
            s_p = float(c_p @ x - d[p])
            t2 = -s_p / czp if czp > tol else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise QpInfeasibleError("constraints are inconsistent")

            if czp > tol:
                x = x + t * z
            for j in range(len(active)):
                lam[j] -= t * r[j]
            lam_p += t

            if t == t2 and czp > tol:
                active.append(p)
                lam.append(lam_p)
                break
            # partial (or dual-only) step: drop the blocking constraint
            del active[drop_j]
            del lam[drop_j]
            if czp > tol and float(c_p @ x - d[p]) >= -tol:
                active.append(p)
                lam.append(lam_p)
                break
        if hit_cap:
            break

    for idx, val in zip(active, lam):
        lam_full[idx] = max(val, 0.0)
    return x, lam_full, iters, hit_cap


def _canonical(qp: QpProblem):
    """Expand soft-row slacks and stack rows+bounds as C' x >= d.

    Returns (P_aug, q_aug, C, d, n, n_aug, row_map) where row_map gives, for
    each canonical constraint, the (kind, index) it came from:
    kind in {"row", "lb", "ub", "slack_lb"}.
    """
    P = np.asarray(qp.P, dtype=np.float64)
    q = np.asarray(qp.q, dtype=np.float64).ravel()
    n = q.shape[0]
    if P.shape != (n, n):
        raise QpError(f"P shape {P.shape} inconsistent with q length {n}")
    if np.max(np.abs(P - P.T), initial=0.0) > 1e-10:
        raise QpError("P not symmetric within 1e-10")

    G = np.zeros((0, n)) if qp.G is None else np.asarray(qp.G, dtype=np.float64)
    if G.ndim == 1:
        G = G.reshape(1, -1)
    h = np.zeros(0) if qp.h_vec is None else np.asarray(qp.h_vec, dtype=np.float64).ravel()
    if G.shape[0] != h.shape[0] or (G.size and G.shape[1] != n):
        raise QpError(f"G shape {G.shape} inconsistent with h length {h.shape[0]} / n={n}")

    soft = tuple(sorted(set(int(i) for i in qp.soft_rows)))
    for i in soft:
        if not 0 <= i < G.shape[0]:
            raise QpError(f"soft row index {i} out of range")
    k = len(soft)
    n_aug = n + k

    P_aug = np.zeros((n_aug, n_aug))
    P_aug[:n, :n] = P
    for j in range(k):
        P_aug[n + j, n + j] = 2.0 * qp.w_slack
    q_aug = np.concatenate([q, np.zeros(k)])

    cols: list[np.ndarray] = []
    d_list: list[float] = []
    row_map: list[tuple[str, int]] = []
    soft_pos = {row: j for j, row in enumerate(soft)}
    for i in range(G.shape[0]):
        # G_i z (- s_j) <= h_i  ->  -G_i z (+ s_j) >= -h_i
        col = np.zeros(n_aug)
        col[:n] = -G[i]
        if i in soft_pos:
            col[n + soft_pos[i]] = 1.0
        cols.append(col)
        d_list.append(-h[i])
        row_map.append(("row", i))
    if qp.lb is not None:
        lb = np.asarray(qp.lb, dtype=np.float64).ravel()
        for i in range(n):
            if np.isfinite(lb[i]):
                col = np.zeros(n_aug)
                col[i] = 1.0
                cols.append(col)
                d_list.append(float(lb[i]))
                row_map.append(("lb", i))
    if qp.ub is not None:
        ub = np.asarray(qp.ub, dtype=np.float64).ravel()
        for i in range(n):
            if np.isfinite(ub[i]):
                col = np.zeros(n_aug)
                col[i] = -1.0
                cols.append(col)
                d_list.append(-float(ub[i]))
                row_map.append(("ub", i))
    for j in range(k):
        col = np.zeros(n_aug)
        col[n + j] = 1.0
        cols.append(col)
        d_list.append(0.0)
        row_map.append(("slack_lb", j))

    C = np.stack(cols, axis=1) if cols else np.zeros((n_aug, 0))
    d = np.asarray(d_list)
    return P_aug, q_aug, C, d, n, n_aug, row_map


def _residuals(P_aug, q_aug, C, d, x, lam) -> KktResiduals:
    # Lagrangian: 1/2 x'Px + q'x - lam'(C'x - d), lam >= 0
    stat = float(np.max(np.abs(P_aug @ x + q_aug - C @ lam), initial=0.0))
    slacks = C.T @ x - d
    primal = float(np.max(-slacks, initial=0.0))
    dual = float(np.min(lam, initial=0.0))
    comp = float(np.max(np.abs(lam * slacks), initial=0.0))
    return KktResiduals(stat, max(primal, 0.0), dual, comp)


def solve_qp(qp: QpProblem, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    """Solve the QP. Deterministic: identical problems give identical answers.

    status is "optimal" when the KKT residuals certify the solution and no
    soft-row slack was needed; "infeasible_relaxed" when the answer is only
    feasible thanks to soft-row slack; "max_iter" when the active-set loop
    hit its cap (best iterate returned).
    """
    P_aug, q_aug, C, d, n, n_aug, row_map = _canonical(qp)
    x, lam, iters, hit_cap = _goldfarb_idnani(P_aug, q_aug, C, d, max_iter, tol=1e-11)
    slack = x[n:n_aug].copy()
    slack[np.abs(slack) < 1e-12] = 0.0
    kkt = _residuals(P_aug, q_aug, C, d, x, lam)
    if hit_cap:
        status = "max_iter"
    elif slack.size and float(np.max(slack)) > SLACK_MATERIAL:
        status = "infeasible_relaxed"
    else:
        status = "optimal"
    if status == "optimal" and kkt.max_abs() > tol:
        status = "max_iter"  # certificate failed; do not claim optimality
    return QpSolution(z_star=x[:n].copy(), status=status, kkt=kkt,
                      slack_used=slack, iterations=iters, duals=lam)


def kkt_residual(qp: QpProblem, sol: QpSolution) -> KktResiduals:
    """Recompute KKT residuals of a solution against its problem."""
    P_aug, q_aug, C, d, n, n_aug, row_map = _canonical(qp)
    x = np.concatenate([sol.z_star, sol.slack_used])
    if x.shape[0] != n_aug:
        raise QpError("solution does not match problem dimensions")
    lam = sol.duals
    if lam.shape[0] != C.shape[1]:
        raise QpError("solution duals do not match constraint count")
    return _residuals(P_aug, q_aug, C, d, x, lam)
