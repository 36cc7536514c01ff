"""Dense convex QP solver: primal-dual interior point with Mehrotra correction.

    min 0.5 z'Pz + c'z   s.t.  A z = b,  G z <= h

Sized for the whole-body controller (tens of variables), deterministic, and
accurate to ~1e-10 on equalities at convergence.  Supports infeasible starts;
failure to converge is reported through the status field rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


@dataclass
class QpResult:
    z: np.ndarray
    status: str                  # "optimal" | "max_iter" | "singular"
    iterations: int
    eq_residual: float
    ineq_violation: float
    gap: float
    y: np.ndarray = field(default=None, repr=False)    # equality multipliers
    lam: np.ndarray = field(default=None, repr=False)  # inequality multipliers


def solve_qp(P, c, A=None, b=None, G=None, h=None, max_iter: int = 60, tol: float = 1e-10) -> QpResult:
    P = np.asarray(P, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(c)
    A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    me, mi = A.shape[0], G.shape[0]

    if mi == 0:
        # pure equality-constrained problem: one KKT solve
        K = np.block([[P, A.T], [A, np.zeros((me, me))]])
        rhs = np.concatenate([-c, b])
        try:
            sol = sla.solve(K, rhs)
        except sla.LinAlgError:
            return QpResult(np.zeros(n), "singular", 0, np.inf, 0.0, 0.0)
        z = sol[:n]
        y = sol[n:]
        return QpResult(z, "optimal", 1, float(np.max(np.abs(A @ z - b), initial=0.0)), 0.0, 0.0,
                        y=y, lam=np.zeros(0))

    z = np.zeros(n)
    y = np.zeros(me)
    lam = np.ones(mi)
    s = np.ones(mi)
    scale = max(1.0, np.max(np.abs(c)), np.max(np.abs(h), initial=1.0), np.max(np.abs(b), initial=1.0))

    for it in range(max_iter):
        r_d = P @ z + c + A.T @ y + G.T @ lam
        r_p = A @ z - b
        r_g = G @ z + s - h
        mu = float(lam @ s) / mi

        if (max(np.max(np.abs(r_d)), np.max(np.abs(r_p), initial=0.0), np.max(np.abs(r_g))) < tol * scale
                and mu < tol * scale):
            return QpResult(z, "optimal", it, float(np.max(np.abs(r_p), initial=0.0)),
                            float(np.max(G @ z - h, initial=0.0)), mu, y=y, lam=lam)

        D = lam / s
        H = P + G.T @ (D[:, None] * G)
        K = np.block([[H, A.T], [A, np.zeros((me, me))]])
        try:
            lu, piv = sla.lu_factor(K, check_finite=False)
        except (sla.LinAlgError, ValueError):
            return QpResult(z, "singular", it, float(np.max(np.abs(r_p), initial=0.0)),
                            float(np.max(G @ z - h, initial=0.0)), mu, y=y, lam=lam)

        def solve_dir(comp):
            # comp: target for the complementarity product residual lam*s - comp_target
            rhs1 = -r_d - G.T @ (D * r_g - comp / s)
            rhs = np.concatenate([rhs1, -r_p])
            sol = sla.lu_solve((lu, piv), rhs, check_finite=False)
            dz = sol[:n]
            dy = sol[n:]
            ds = -r_g - G @ dz
            dlam = -(comp + lam * ds) / s
            return dz, dy, ds, dlam

        # affine (predictor) direction
        dz_a, dy_a, ds_a, dlam_a = solve_dir(lam * s)

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        alpha_aff = min(max_step(s, ds_a), max_step(lam, dlam_a))
        mu_aff = float((lam + alpha_aff * dlam_a) @ (s + alpha_aff * ds_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        comp = lam * s + ds_a * dlam_a - sigma * mu
        dz, dy, ds, dlam = solve_dir(comp)
        alpha = 0.99 * min(max_step(s, ds), max_step(lam, dlam))
        z = z + alpha * dz
        y = y + alpha * dy
        s = s + alpha * ds
        lam = lam + alpha * dlam

    r_p = A @ z - b
    return QpResult(z, "max_iter", max_iter, float(np.max(np.abs(r_p), initial=0.0)),
                    float(np.max(G @ z - h, initial=0.0)), float(lam @ s) / mi, y=y, lam=lam)
