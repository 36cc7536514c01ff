"""Receding-horizon optimal control problem over the kino-dynamic model.

Each of the N nodes carries references sampled from the gait schedule at its
absolute time: ZMP reference and bounds, capture-point reference, desired foot
placements, and the contact set.  The cost stacks

  - ZMP tracking                    |Wp (p - p_ref)|^2
  - ZMP bound penalty               (squared hinge outside [p_l, p_u], weight Wpl)
  - capture-point tracking          |Wcp (xi - xi_ref)|^2
  - foot placement tracking         |We log(T_f^-1 T_des)|^2
  - upper-body posture              |Wu (q_u - q_u0)|^2
  - kinematic-coupling penalties    per-block weights on the model residuals
  - control regularization

The weight conventions follow the cost definitions: tracking weights sit
inside the squared norm (so they enter quadratics as W^T W), while the bound
penalty and the coupling penalties multiply the squared residual directly.

Problem dimensions and residual layout are identical at every node regardless
of the contact phase; only reference values and foot weight masks change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wbmpc import gait as gait_mod
from wbmpc import kino
from wbmpc.kino import KinoSpace, ModelConstants


def _as_pdm(w, n, name):
    W = np.asarray(w, dtype=float)
    if W.ndim == 0:
        W = float(W) * np.eye(n)
    if W.shape != (n, n):
        raise ValueError(f"{name} must be a scalar or {n}x{n} matrix")
    if np.max(np.abs(W - W.T)) > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(W)) < 0:
        raise ValueError(f"{name} must be positive semidefinite")
    return W


@dataclass
class CostWeights:
    """Weights and bounds for the walking OCP (defaults documented in configs)."""

    w_zmp: object = 10.0          # inside-norm, 2x2
    w_zmp_bound: object = 1.0e4   # direct quadratic on the hinge, 2x2
    w_cp: object = 50.0           # inside-norm, 2x2
    w_foot_pos: float = 30.0      # inside-norm, per axis
    w_foot_rot: float = 10.0
    w_upper: object = 1.0         # inside-norm, per upper-body joint
    # coupling-residual penalties (direct quadratic)
    w_cam_rate: float = 1.0e2
    w_com: float = 1.0e3
    w_foot_pin: float = 1.0e3
    w_cam_state: float = 1.0e2
    # control regularization (direct quadratic)
    reg_ddq: float = 1.0e-3
    reg_pdot: float = 1.0e-4
    reg_tau: float = 1.0e-4
    # control bounds
    ddq_max: float = 50.0
    pdot_max: float = 1.0
    tau_max: float = 100.0

    def __post_init__(self):
        self.w_zmp = _as_pdm(self.w_zmp, 2, "w_zmp")
        self.w_zmp_bound = _as_pdm(self.w_zmp_bound, 2, "w_zmp_bound")
        self.w_cp = _as_pdm(self.w_cp, 2, "w_cp")
        for name in ("w_cam_rate", "w_com", "w_foot_pin", "w_cam_state",
                     "reg_ddq", "reg_pdot", "reg_tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("ddq_max", "pdot_max", "tau_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    def foot_weight_sq(self) -> np.ndarray:
        W = np.diag([self.w_foot_pos] * 3 + [self.w_foot_rot] * 3)
        return W.T @ W

    def control_bounds(self, space: KinoSpace):
        hi = np.concatenate([np.full(space.nv, self.ddq_max), [self.pdot_max] * 2, [self.tau_max] * 2])
        return -hi, hi


def clamp_controls(u: np.ndarray, u_min: np.ndarray, u_max: np.ndarray) -> np.ndarray:
    """Component-wise clamp used to sanitize initial guesses."""
    return np.clip(u, u_min, u_max)


class OcpProblem:
    """N nodes of kino-dynamic dynamics with phase-independent structure."""

    def __init__(self, model, consts: ModelConstants, space: KinoSpace, weights: CostWeights,
                 x0: np.ndarray, p_ref, xi_ref, p_lo, p_hi, T_des_rf, T_des_lf,
                 mask_rf, mask_lf, q_upper_init: np.ndarray):
        self.model = model
        self.consts = consts
        self.space = space
        self.weights = weights
        self.x0 = np.asarray(x0, dtype=float)
        self.N = len(p_ref) - 1
        self.dt = consts.dt
        self.p_ref = np.asarray(p_ref, dtype=float)
        self.xi_ref = np.asarray(xi_ref, dtype=float)
        self.p_lo = np.asarray(p_lo, dtype=float)
        self.p_hi = np.asarray(p_hi, dtype=float)
        self.T_des_rf = np.asarray(T_des_rf, dtype=float)
        self.T_des_lf = np.asarray(T_des_lf, dtype=float)
        self.mask_rf = np.asarray(mask_rf, dtype=float)
        self.mask_lf = np.asarray(mask_lf, dtype=float)
        self.q_upper_init = np.asarray(q_upper_init, dtype=float)
        self.u_min, self.u_max = weights.control_bounds(space)
        self.derivative_mode = "fd"

        iu = space.model.upper_body_v_indices
        self._qu_q_cols = iu  # tangent columns of the upper-body joints
        self._qu_q_idx = iu + 1  # q-vector entries (quaternion adds one slot)
        self._reg_diag = np.concatenate(
            [np.full(space.nv, weights.reg_ddq), [weights.reg_pdot] * 2, [weights.reg_tau] * 2]
        )
        if not (self.N >= 1):
            raise ValueError("horizon must contain at least one node")

    # -- solver interface ------------------------------------------------------

    @property
    def nx(self) -> int:
        return self.space.nx

    @property
    def ndx(self) -> int:
        return self.space.ndx

    @property
    def nu(self) -> int:
        return self.space.nu

    def state_add(self, x, dx):
        return self.space.add(x, dx)

    def state_diff(self, x0, x1):
        return self.space.diff(x0, x1)

    # -- dimensions ----------------------------------------------------------

    def dimensions(self) -> dict:
        sp = self.space
        return {
            "nodes": self.N,
            "state_dim": sp.nx,
            "state_tangent_dim": sp.ndx,
            "control_dim": sp.nu,
            "decision_variables": self.N * sp.nu + (self.N + 1) * sp.ndx,
            "dynamics_constraints": self.N * sp.ndx,
            "penalty_residuals_per_node": kino.R_DIM,
            "control_bound_pairs": self.N * sp.nu,
        }

    # -- dynamics ------------------------------------------------------------

    def integrate_node(self, i: int, x, u):
        return kino.integrate(self.space, self.consts, x, u)

    def rollout(self, U: np.ndarray, x0=None) -> np.ndarray:
        X = np.empty((self.N + 1, self.space.nx))
        X[0] = self.x0 if x0 is None else x0
        for i in range(self.N):
            X[i + 1] = kino.integrate(self.space, self.consts, X[i], U[i])
        return X

    # -- residual stack ------------------------------------------------------

    def _node_arrays(self, X, U):
        sp = self.space
        X = np.atleast_2d(X)
        if U is None:
            U = np.zeros((X.shape[0], sp.nu))
        else:
            U = np.atleast_2d(U)
        return (X[:, sp.sl_q], X[:, sp.sl_dq], U[:, sp.cl_ddq], U[:, sp.cl_tau],
                X[:, sp.sl_lip], U)

    def _tracking_residuals(self, X, U, idx):
        """Residual rows beyond the coupling stack: zmp(2), hinge(4), cp(2), qu(nu_b)."""
        sp = self.space
        lip = X[:, sp.sl_lip]
        p = lip[:, 4:6]
        r_zmp = p - self.p_ref[idx]
        r_hi = np.maximum(p - self.p_hi[idx], 0.0)
        r_lo = np.minimum(p - self.p_lo[idx], 0.0)
        xi = lip[:, 0:2] + lip[:, 2:4] / self.consts.omega
        r_cp = xi - self.xi_ref[idx]
        r_qu = X[:, self._qu_q_idx] - self.q_upper_init
        return r_zmp, r_hi, r_lo, r_cp, r_qu

    def costs(self, X: np.ndarray, U: np.ndarray | None, idx=None) -> np.ndarray:
        """Per-node cost; node N (or any row where U is absent) is terminal.

        The terminal cost evaluates the same residual stack at u = 0, so it
        equals the running cost with the control-dependent terms zeroed.
        """
        sp = self.space
        X = np.atleast_2d(X)
        B = X.shape[0]
        if idx is None:
            idx = np.arange(B)
        Ufull = np.zeros((B, sp.nu))
        if U is not None:
            Ufull[: len(U)] = U
        q, dq, ddq, tau, lip, Ufull = self._node_arrays(X, Ufull)
        r = kino.residual_batch(self.model, self.consts, q, dq, ddq, tau, lip,
                                self.T_des_rf[idx], self.T_des_lf[idx], need_feet=True)
        w = self.weights
        cost = np.zeros(B)
        # coupling penalties
        cost += w.w_cam_rate * np.sum(r[:, kino.R_CAM_RATE] ** 2, axis=1)
        cost += w.w_com * np.sum(r[:, kino.R_COM] ** 2, axis=1)
        cost += w.w_cam_state * np.sum(r[:, kino.R_CAM_STATE] ** 2, axis=1)
        We2 = w.foot_weight_sq()
        for foot, mask in (("right_foot", self.mask_rf), ("left_foot", self.mask_lf)):
            rf = r[:, kino.R_FOOT[foot]]
            Wf = We2[None] + (w.w_foot_pin * mask[idx])[:, None, None] * np.eye(6)[None]
            cost += np.einsum("bi,bij,bj->b", rf, Wf, rf)
        # tracking terms
        r_zmp, r_hi, r_lo, r_cp, r_qu = self._tracking_residuals(X, Ufull, idx)
        Wp2 = w.w_zmp.T @ w.w_zmp
        Wcp2 = w.w_cp.T @ w.w_cp
        cost += np.einsum("bi,ij,bj->b", r_zmp, Wp2, r_zmp)
        cost += np.einsum("bi,ij,bj->b", r_hi, w.w_zmp_bound, r_hi)
        cost += np.einsum("bi,ij,bj->b", r_lo, w.w_zmp_bound, r_lo)
        cost += np.einsum("bi,ij,bj->b", r_cp, Wcp2, r_cp)
        Wu = _as_pdm(w.w_upper, len(self._qu_q_idx), "w_upper")
        cost += np.einsum("bi,ij,bj->b", r_qu, Wu.T @ Wu, r_qu)
        cost += np.einsum("bi,i,bi->b", Ufull, self._reg_diag, Ufull)
        return cost

    def trajectory_cost(self, X: np.ndarray, U: np.ndarray) -> float:
        c = self.costs(X, U, idx=np.arange(self.N + 1))
        return float(np.sum(c))

    def running_cost(self, i: int, x, u) -> float:
        """Cost of one interior node."""
        return float(self.costs(np.atleast_2d(x), np.atleast_2d(u), idx=np.array([i]))[0])

    def terminal_cost(self, x) -> float:
        return float(self.costs(np.atleast_2d(x), None, idx=np.array([self.N]))[0])

    # -- derivatives ----------------------------------------------------------

    def derivatives(self, X: np.ndarray, U: np.ndarray):
        """Gauss-Newton cost expansion and dynamics Jacobians for all nodes.

        Returns a dict with Fx, Fu (N), Lx, Lxx (N+1, terminal included),
        Lu, Lux, Luu (N).
        """
        sp = self.space
        w = self.weights
        N = self.N
        idx = np.arange(N + 1)
        Ufull = np.zeros((N + 1, sp.nu))
        Ufull[:N] = U
        q, dq, ddq, tau, lip, Ufull = self._node_arrays(X, Ufull)

        r, Jx, Ju = kino.residual_jacobian_fd(
            self.model, self.consts, sp, q, dq, ddq, tau, lip,
            self.T_des_rf, self.T_des_lf, mode=self.derivative_mode,
        )

        # diagonal-block weights for the coupling stack
        Wr = np.zeros((N + 1, kino.R_DIM, kino.R_DIM))
        ii = np.arange(kino.R_DIM)
        Wr[:, ii[kino.R_CAM_RATE], ii[kino.R_CAM_RATE]] = w.w_cam_rate
        Wr[:, ii[kino.R_COM], ii[kino.R_COM]] = w.w_com
        Wr[:, ii[kino.R_CAM_STATE], ii[kino.R_CAM_STATE]] = w.w_cam_state
        We2 = w.foot_weight_sq()
        for foot, mask in (("right_foot", self.mask_rf), ("left_foot", self.mask_lf)):
            sl = kino.R_FOOT[foot]
            Wr[:, sl, sl] = We2[None] + (w.w_foot_pin * mask)[:, None, None] * np.eye(6)[None]

        WJx = Wr @ Jx
        WJu = Wr @ Ju
        Lx = 2.0 * np.einsum("nri,nr->ni", Jx, np.einsum("nrs,ns->nr", Wr, r))
        Lu = 2.0 * np.einsum("nri,nr->ni", Ju, np.einsum("nrs,ns->nr", Wr, r))
        Lxx = 2.0 * np.einsum("nri,nrj->nij", Jx, WJx)
        Luu = 2.0 * np.einsum("nri,nrj->nij", Ju, WJu)
        Lux = 2.0 * np.einsum("nri,nrj->nij", Ju, WJx)

        # tracking terms (analytic, sparse in the tangent)
        r_zmp, r_hi, r_lo, r_cp, r_qu = self._tracking_residuals(np.atleast_2d(X), Ufull, idx)
        L = sp.tl_lip.start
        Wp2 = 2.0 * (w.w_zmp.T @ w.w_zmp)
        Lx[:, L + 4: L + 6] += r_zmp @ Wp2
        Lxx[:, L + 4: L + 6, L + 4: L + 6] += Wp2

        act_hi = (r_hi > 0).astype(float)
        act_lo = (r_lo < 0).astype(float)
        Wb = 2.0 * w.w_zmp_bound
        Lx[:, L + 4: L + 6] += (r_hi @ Wb) * act_hi + (r_lo @ Wb) * act_lo
        for a in range(2):
            for b in range(2):
                Lxx[:, L + 4 + a, L + 4 + b] += Wb[a, b] * (act_hi[:, a] * act_hi[:, b] + act_lo[:, a] * act_lo[:, b])

        Wcp2 = 2.0 * (w.w_cp.T @ w.w_cp)
        g_cp = r_cp @ Wcp2
        om = self.consts.omega
        Lx[:, L: L + 2] += g_cp
        Lx[:, L + 2: L + 4] += g_cp / om
        for a in range(2):
            for b in range(2):
                Lxx[:, L + a, L + b] += Wcp2[a, b]
                Lxx[:, L + a, L + 2 + b] += Wcp2[a, b] / om
                Lxx[:, L + 2 + a, L + b] += Wcp2[a, b] / om
                Lxx[:, L + 2 + a, L + 2 + b] += Wcp2[a, b] / (om * om)

        Wu = _as_pdm(w.w_upper, len(self._qu_q_idx), "w_upper")
        Wu2 = 2.0 * (Wu.T @ Wu)
        cols = self._qu_q_cols
        Lx[:, cols] += r_qu @ Wu2
        Lxx[:, cols[:, None], cols[None, :]] += Wu2

        Lu += 2.0 * self._reg_diag * Ufull
        Luu[:, np.arange(sp.nu), np.arange(sp.nu)] += 2.0 * self._reg_diag

        Fx, Fu = kino.integrate_jacobians(sp, self.consts, np.atleast_2d(X)[:N], U)
        return {
            "Fx": Fx, "Fu": Fu,
            "Lx": Lx, "Lxx": Lxx,
            "Lu": Lu[:N], "Luu": Luu[:N], "Lux": Lux[:N],
            "cost_residuals": r,
        }


def build_ocp(model, schedule: gait_mod.GaitSchedule, cp_ref: gait_mod.CpReference,
              t_now: float, x0: np.ndarray, weights: CostWeights,
              N: int = 60, dt: float = 0.02, q_upper_init: np.ndarray | None = None,
              derivative_mode: str = "fd") -> OcpProblem:
    """Sample references along the horizon and assemble the node data."""
    if t_now + N * dt > schedule.duration + 1e-9:
        raise ValueError(
            f"horizon end {t_now + N * dt:.3f} s exceeds schedule duration {schedule.duration:.3f} s"
        )
    consts = ModelConstants.from_model(model, dt)
    space = KinoSpace(model)
    times = t_now + dt * np.arange(N + 1)
    p_ref = np.array([gait_mod.zmp_reference(schedule, t) for t in times])
    xi_ref = np.array([cp_ref(t) for t in times])
    bounds = [gait_mod.support_polygon(schedule, t) for t in times]
    p_lo = np.array([b[0] for b in bounds])
    p_hi = np.array([b[1] for b in bounds])
    swings = [gait_mod.swing_trajectory(schedule, t) for t in times]
    T_des_rf = np.array([s[gait_mod.RF] for s in swings])
    T_des_lf = np.array([s[gait_mod.LF] for s in swings])
    contacts = [schedule.contacts_at(t) for t in times]
    mask_rf = np.array([1.0 if gait_mod.RF in c else 0.0 for c in contacts])
    mask_lf = np.array([1.0 if gait_mod.LF in c else 0.0 for c in contacts])
    if q_upper_init is None:
        q_upper_init = model.nominal_q[model.upper_body_q_indices]
    problem = OcpProblem(model, consts, space, weights, x0, p_ref, xi_ref, p_lo, p_hi,
                         T_des_rf, T_des_lf, mask_rf, mask_lf, q_upper_init)
    problem.derivative_mode = derivative_mode
    return problem
