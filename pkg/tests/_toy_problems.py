"""Small problems with known solutions, used to oracle-check the DDP solver."""

import numpy as np


class LqrProblem:
    """Linear dynamics, quadratic cost, optional box bounds on u.

    Cost convention matches the walking OCP: plain squared forms without the
    1/2 factor (the optimal feedback is unaffected).
    """

    def __init__(self, A, B, Q, R, QT, x0, N, u_min=None, u_max=None):
        self.A, self.B = np.asarray(A, float), np.asarray(B, float)
        self.Q, self.R, self.QT = np.asarray(Q, float), np.asarray(R, float), np.asarray(QT, float)
        self.x0 = np.asarray(x0, float)
        self.N = N
        n, m = self.B.shape
        self.nx = self.ndx = n
        self.nu = m
        self.u_min = np.full(m, -np.inf) if u_min is None else np.asarray(u_min, float)
        self.u_max = np.full(m, np.inf) if u_max is None else np.asarray(u_max, float)

    def state_add(self, x, dx):
        return x + dx

    def state_diff(self, x0, x1):
        return x1 - x0

    def integrate_node(self, i, x, u):
        return self.A @ x + self.B @ u

    def costs(self, X, U, idx=None):
        X = np.atleast_2d(X)
        out = np.einsum("bi,ij,bj->b", X, self.Q, X)
        out[-1] = X[-1] @ self.QT @ X[-1]
        if U is not None:
            U = np.atleast_2d(U)
            out[: len(U)] += np.einsum("bi,ij,bj->b", U, self.R, U)
        return out

    def trajectory_cost(self, X, U):
        return float(np.sum(self.costs(X, U)))

    def rollout(self, U, x0=None):
        X = np.empty((self.N + 1, self.nx))
        X[0] = self.x0 if x0 is None else x0
        for i in range(self.N):
            X[i + 1] = self.integrate_node(i, X[i], U[i])
        return X

    def derivatives(self, X, U):
        N, n, m = self.N, self.nx, self.nu
        Lx = 2.0 * X @ self.Q
        Lx[-1] = 2.0 * self.QT @ X[-1]
        Lxx = np.tile(2.0 * self.Q, (N + 1, 1, 1))
        Lxx[-1] = 2.0 * self.QT
        return {
            "Fx": np.tile(self.A, (N, 1, 1)),
            "Fu": np.tile(self.B, (N, 1, 1)),
            "Lx": Lx,
            "Lxx": Lxx,
            "Lu": 2.0 * U @ self.R,
            "Luu": np.tile(2.0 * self.R, (N, 1, 1)),
            "Lux": np.zeros((N, m, n)),
        }

    # -- oracles --------------------------------------------------------------

    def riccati_solution(self):
        """Unconstrained optimum by backward Riccati recursion."""
        P = self.QT.copy()
        gains = [None] * self.N
        for i in range(self.N - 1, -1, -1):
            BtP = self.B.T @ P
            gains[i] = np.linalg.solve(self.R + BtP @ self.B, BtP @ self.A)
            Acl = self.A - self.B @ gains[i]
            P = self.Q + gains[i].T @ self.R @ gains[i] + Acl.T @ P @ Acl
        X = np.empty((self.N + 1, self.nx))
        U = np.empty((self.N, self.nu))
        X[0] = self.x0
        for i in range(self.N):
            U[i] = -gains[i] @ X[i]
            X[i + 1] = self.integrate_node(i, X[i], U[i])
        return X, U

    def cvxpy_solution(self):
        """Dense stacked QP over the control trajectory (box bounds included)."""
        import cvxpy as cp

        U = cp.Variable((self.N, self.nu))
        x = self.x0
        cost = 0
        for i in range(self.N):
            cost += cp.quad_form(x, cp.psd_wrap(self.Q)) + cp.quad_form(U[i], cp.psd_wrap(self.R))
            x = self.A @ x + self.B @ U[i]
        cost += cp.quad_form(x, cp.psd_wrap(self.QT))
        cons = []
        if np.all(np.isfinite(self.u_min)):
            cons += [U >= self.u_min[None, :], U <= self.u_max[None, :]]
        prob = cp.Problem(cp.Minimize(cost), cons)
        prob.solve(solver="CLARABEL")
        return np.asarray(U.value)


def double_integrator(N=20, dt=0.1, x0=(1.0, 0.0), u_min=None, u_max=None):
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt**2], [dt]])
    Q = np.diag([1.0, 0.1])
    R = np.array([[0.01]])
    QT = np.diag([100.0, 10.0])
    return LqrProblem(A, B, Q, R, QT, np.asarray(x0), N, u_min, u_max)
