"""Control-limited, feasibility-driven differential dynamic programming.

The solver accepts infeasible state/control initializations: dynamics gaps
between consecutive states are absorbed into the value-function recursion and
contracted by the line-search step, so a shifted previous solution or a
learned state-trajectory guess can seed it directly.  Control bounds are
handled exactly by a projected-Newton box QP in the backward pass and by
clamping in the nonlinear rollout.

The problem object must provide: N, x0, ndx, nu, u_min, u_max,
integrate_node(i, x, u), trajectory_cost(X, U), derivatives(X, U) and the
manifold helpers state_add / state_diff (see OcpProblem).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


@dataclass
class SolverSettings:
    max_iters: int = 5
    tol: float = 1e-5            # on the expected improvement of a full step
    gap_tol: float = 1e-8        # infinity norm below which gaps count as closed
    reg_init: float = 0.0        # control regularization keeps Quu PD, so start exact
    reg_grow: float = 10.0
    reg_shrink: float = 0.5
    reg_min: float = 1e-9        # floor once regularization is engaged
    reg_max: float = 1e10
    n_alphas: int = 7            # step set 1, 1/2, ..., 2^-(n-1)
    accept_ratio: float = 0.1    # Goldstein-style fraction of expected decrease
    accept_neg_ratio: float = 2.0  # bound on cost increase while closing gaps
    alpha_reg: float = 1.0 / 16.0  # accepted steps this small also grow the damping

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")

    @property
    def alphas(self):
        return 0.5 ** np.arange(self.n_alphas)


@dataclass
class DdpSolution:
    X: np.ndarray
    U: np.ndarray
    k: np.ndarray
    K: np.ndarray
    cost: float
    iterations: int
    converged: bool
    stop_reason: str
    cost_history: list = field(default_factory=list)
    iter_times: list = field(default_factory=list)
    gap_norm: float = 0.0
    expected_improvement: float = 0.0


def box_qp(H, g, lb, ub, x0, max_iter: int = 100, tol: float = 1e-12):
    """min 0.5 x'Hx + g'x  s.t. lb <= x <= ub, by projected Newton.

    Returns (x, free mask, success).  H must be positive definite on every
    encountered free subspace; the caller regularizes and retries otherwise.
    """
    n = len(g)
    x = np.clip(x0, lb, ub)
    free = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        grad = g + H @ x
        at_lo = (x <= lb + 1e-12) & (grad > 0)
        at_hi = (x >= ub - 1e-12) & (grad < 0)
        free = ~(at_lo | at_hi)
        if not np.any(free):
            return x, free, True
        if np.max(np.abs(grad[free])) < tol:
            return x, free, True
        Hff = H[np.ix_(free, free)]
        try:
            L = np.linalg.cholesky(Hff)
        except np.linalg.LinAlgError:
            return x, free, False
        rhs = grad[free]
        dx_free = -np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        if np.max(np.abs(dx_free)) < tol:
            return x, free, True
        # projected backtracking on the quadratic objective
        f0 = 0.5 * x @ H @ x + g @ x
        step = 1.0
        for _ in range(20):
            xn = x.copy()
            xn[free] = x[free] + step * dx_free
            np.clip(xn, lb, ub, out=xn)
            fn = 0.5 * xn @ H @ xn + g @ xn
            if fn < f0 - 1e-14:
                x = xn
                break
            step *= 0.5
        else:
            return x, free, True
    return x, free, True


def warm_start_from(solution):
    """Shift a previous solution by one control tick, repeating the last node."""
    X, U = solution.X, solution.U
    Xs = np.vstack([X[1:], X[-1:]])
    Us = np.vstack([U[1:], U[-1:]])
    return Xs, Us


def cold_start(problem):
    X = np.tile(problem.x0, (problem.N + 1, 1))
    U = np.clip(np.zeros((problem.N, problem.nu)), problem.u_min, problem.u_max)
    return X, U


class DdpSolver:
    def __init__(self, problem, settings: SolverSettings | None = None):
        self.problem = problem
        self.settings = settings or SolverSettings()

    # -- helpers -------------------------------------------------------------

    def _compute_gaps(self, X, U):
        p = self.problem
        gaps = np.zeros((p.N + 1, p.ndx))
        gaps[0] = p.state_diff(X[0], p.x0)
        for i in range(p.N):
            gaps[i + 1] = p.state_diff(X[i + 1], p.integrate_node(i, X[i], U[i]))
        return gaps

    def _backward(self, d, U, gaps, reg):
        p = self.problem
        N, nu, ndx = p.N, p.nu, p.ndx
        k = np.zeros((N, nu))
        K = np.zeros((N, nu, ndx))
        Vx = d["Lx"][N].copy()
        Vxx = d["Lxx"][N].copy()
        d1 = 0.0
        d2 = 0.0
        for i in range(N - 1, -1, -1):
            Fx, Fu = d["Fx"][i], d["Fu"][i]
            Vx_bar = Vx + Vxx @ gaps[i + 1]
            Qx = d["Lx"][i] + Fx.T @ Vx_bar
            Qu = d["Lu"][i] + Fu.T @ Vx_bar
            VxxFx = Vxx @ Fx
            Qxx = d["Lxx"][i] + Fx.T @ VxxFx
            Qux = d["Lux"][i] + Fu.T @ VxxFx
            Quu = d["Luu"][i] + Fu.T @ (Vxx @ Fu)
            Quu_reg = Quu + reg * np.eye(nu)

            lb = p.u_min - U[i]
            ub = p.u_max - U[i]
            try:
                L = np.linalg.cholesky(Quu_reg)
            except np.linalg.LinAlgError:
                return None
            ki = -sla.cho_solve((L, True), Qu, check_finite=False)
            if np.all(ki >= lb) and np.all(ki <= ub):
                # interior solution: reuse the factorization for the gains
                Ki = -sla.cho_solve((L, True), Qux, check_finite=False)
            else:
                # start at 0 (feasible, value 0) so the projected-Newton result
                # is guaranteed to be a descent step of the node subproblem
                ki, free, ok = box_qp(Quu_reg, Qu, lb, ub, np.zeros(nu))
                if not ok:
                    return None
                Ki = np.zeros((nu, ndx))
                if np.any(free):
                    Hff = Quu_reg[np.ix_(free, free)]
                    try:
                        Lf = np.linalg.cholesky(Hff)
                    except np.linalg.LinAlgError:
                        return None
                    Ki[free] = -sla.cho_solve((Lf, True), Qux[free], check_finite=False)
            k[i] = ki
            K[i] = Ki

            d1 += ki @ Qu
            d2 += ki @ Quu @ ki
            Vx = Qx + K[i].T @ Quu @ ki + K[i].T @ Qu + Qux.T @ ki
            Vxx = Qxx + K[i].T @ Quu @ K[i] + K[i].T @ Qux + Qux.T @ K[i]
            Vxx = 0.5 * (Vxx + Vxx.T)
        return {"k": k, "K": K, "d1": d1, "d2": d2}

    def _forward(self, X, U, k, K, gaps, alpha):
        p = self.problem
        Xn = np.empty_like(X)
        Un = np.empty_like(U)
        Xn[0] = p.state_add(X[0], alpha * gaps[0])
        for i in range(p.N):
            du = alpha * k[i] + K[i] @ p.state_diff(X[i], Xn[i])
            Un[i] = np.clip(U[i] + du, p.u_min, p.u_max)
            nxt = p.integrate_node(i, Xn[i], Un[i])
            Xn[i + 1] = p.state_add(nxt, -(1.0 - alpha) * gaps[i + 1])
        return Xn, Un

    # -- main loop -------------------------------------------------------------

    def solve(self, init=None) -> DdpSolution:
        p = self.problem
        s = self.settings
        if init is None:
            X, U = cold_start(p)
        else:
            X, U = init
            X = np.array(X, dtype=float)
            U = np.clip(np.array(U, dtype=float), p.u_min, p.u_max)
            if X.shape != (p.N + 1, p.nx) or U.shape != (p.N, p.nu):
                raise ValueError(
                    f"initial guess dimensions {X.shape}/{U.shape} do not match "
                    f"problem ({p.N + 1}, {p.nx})/({p.N}, {p.nu})"
                )

        cost = p.trajectory_cost(X, U)
        if not np.isfinite(cost):
            costs = p.costs(X, U, np.arange(p.N + 1))
            bad = int(np.flatnonzero(~np.isfinite(costs))[0])
            raise FloatingPointError(f"non-finite cost at node {bad} in the initial trajectory")
        gaps = self._compute_gaps(X, U)
        gap_norm = float(np.max(np.abs(gaps)))

        reg = s.reg_init
        k = np.zeros((p.N, p.nu))
        K = np.zeros((p.N, p.nu, p.ndx))
        history = [cost]
        iter_times = []
        iterations = 0
        converged = False
        stop = "max_iters"
        expected_full = np.inf

        for _ in range(s.max_iters):
            t_iter = time.perf_counter()
            d = p.derivatives(X, U)
            for key in ("Fx", "Fu", "Lx", "Lu", "Lxx", "Lux", "Luu"):
                if not np.all(np.isfinite(d[key])):
                    bad = int(np.flatnonzero(~np.isfinite(d[key]).reshape(d[key].shape[0], -1).all(axis=1))[0])
                    raise FloatingPointError(f"non-finite derivative {key} at node {bad}")

            bw = None
            while True:
                bw = self._backward(d, U, gaps, reg)
                if bw is not None and -(bw["d1"] + 0.5 * bw["d2"]) >= -1e-12:
                    break
                # factorization failure or a non-descent direction: damp more
                reg = max(reg, s.reg_min) * s.reg_grow
                if reg > s.reg_max:
                    bw = None
                    break
            if bw is None:
                stop = "regularization_overflow"
                break
            k, K = bw["k"], bw["K"]
            expected_full = -(bw["d1"] + 0.5 * bw["d2"])

            if expected_full < s.tol and gap_norm < s.gap_tol:
                converged = True
                stop = "expected_improvement_below_tol"
                iter_times.append(time.perf_counter() - t_iter)
                break

            accepted = False
            for alpha in s.alphas:
                Xn, Un = self._forward(X, U, k, K, gaps, alpha)
                cost_try = p.trajectory_cost(Xn, Un)
                if not np.isfinite(cost_try):
                    continue
                expected = -(alpha * bw["d1"] + 0.5 * alpha**2 * bw["d2"])
                actual = cost - cost_try
                if expected > 0:
                    ok = actual >= s.accept_ratio * expected
                else:
                    ok = actual >= s.accept_neg_ratio * expected
                if ok:
                    X, U = Xn, Un
                    cost = cost_try
                    gaps *= 1.0 - alpha
                    gap_norm = float(np.max(np.abs(gaps)))
                    if alpha <= s.alpha_reg:
                        # quadratic model over-promised: damp the next step
                        reg = max(reg, s.reg_min) * s.reg_grow
                    elif reg > 0.0:
                        reg = max(reg * s.reg_shrink, s.reg_min)
                    accepted = True
                    break
            iter_times.append(time.perf_counter() - t_iter)
            if accepted:
                iterations += 1
                history.append(cost)
            else:
                reg = max(reg, s.reg_min) * s.reg_grow
                if reg > s.reg_max:
                    stop = "regularization_overflow"
                    break

        return DdpSolution(
            X=X, U=U, k=k, K=K, cost=cost, iterations=iterations, converged=converged,
            stop_reason=stop, cost_history=history, iter_times=iter_times,
            gap_norm=gap_norm, expected_improvement=float(expected_full),
        )


def solve(problem, init=None, settings: SolverSettings | None = None) -> DdpSolution:
    return DdpSolver(problem, settings).solve(init)
