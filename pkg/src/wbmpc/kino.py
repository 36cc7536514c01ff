"""Kino-dynamic walking model: inverted-pendulum-plus-flywheel dynamics coupled
to full-body kinematics through penalty residuals.

The composite state is

    x = [q (nq), qv (nv), x, y, xd, yd, px, py, hx, hy]

and the control

    u = [qdd (nv), pxdot, pydot, taux, tauy].

Tangent coordinates are [dq (nv), dqv (nv), dlip (8)] with the configuration
part living on the manifold from :class:`wbmpc.robot.model.RobotModel`.

The coupling residuals make the pendulum state agree with the full body:
flywheel torque = centroidal angular momentum rate, pendulum position = COM,
stance feet pinned, and flywheel momentum = centroidal angular momentum.
Their layout is fixed (19 rows) regardless of the contact phase; rows for a
foot not in contact are zero, so problem dimensions never change across phase
transitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wbmpc import se3
from wbmpc.robot import algorithms as alg

# residual row layout (fixed in every phase)
R_CAM_RATE = slice(0, 2)
R_COM = slice(2, 5)
R_FOOT = {"right_foot": slice(5, 11), "left_foot": slice(11, 17)}
R_CAM_STATE = slice(17, 19)
R_DIM = 19

FOOT_ORDER = ("right_foot", "left_foot")


@dataclass(frozen=True)
class ModelConstants:
    """Pendulum constants: gravity, COM height, total mass, integration step."""

    g: float
    z_c: float
    m: float
    dt: float

    def __post_init__(self):
        for name in ("g", "z_c", "m", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def from_model(cls, model, dt: float) -> "ModelConstants":
        return cls(g=model.gravity, z_c=model.z_c, m=model.total_mass, dt=dt)

    @property
    def omega2(self) -> float:
        return self.g / self.z_c

    @property
    def omega(self) -> float:
        return float(np.sqrt(self.omega2))


class KinoSpace:
    """Index bookkeeping and manifold operations for the composite state."""

    # lip sub-indices
    X, Y, XD, YD, PX, PY, HX, HY = range(8)

    def __init__(self, model):
        self.model = model
        self.nq = model.nq
        self.nv = model.nv
        self.nx = self.nq + self.nv + 8
        self.ndx = 2 * self.nv + 8
        self.nu = self.nv + 4
        self.sl_q = slice(0, self.nq)
        self.sl_dq = slice(self.nq, self.nq + self.nv)
        self.sl_lip = slice(self.nq + self.nv, self.nx)
        # tangent slices
        self.tl_q = slice(0, self.nv)
        self.tl_dq = slice(self.nv, 2 * self.nv)
        self.tl_lip = slice(2 * self.nv, self.ndx)
        # control slices
        self.cl_ddq = slice(0, self.nv)
        self.cl_pdot = slice(self.nv, self.nv + 2)
        self.cl_tau = slice(self.nv + 2, self.nv + 4)

    def q(self, x):
        return x[..., self.sl_q]

    def dq(self, x):
        return x[..., self.sl_dq]

    def lip(self, x):
        return x[..., self.sl_lip]

    def pack(self, q, dq, lip):
        return np.concatenate([q, dq, lip], axis=-1)

    def check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.nx:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.nx}")
        if not np.all(np.isfinite(x)):
            raise ValueError("state contains non-finite entries")
        return x

    def add(self, x, dx):
        """x (+) dx with dx a tangent vector of length ndx."""
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        q = self.model.integrate_q(x[..., self.sl_q], dx[..., self.tl_q])
        dq = x[..., self.sl_dq] + dx[..., self.tl_dq]
        lip = x[..., self.sl_lip] + dx[..., self.tl_lip]
        return self.pack(q, dq, lip)

    def diff(self, x0, x1):
        """Tangent d with add(x0, d) == x1."""
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        out = np.empty(np.broadcast_shapes(x0.shape, x1.shape)[:-1] + (self.ndx,))
        out[..., self.tl_q] = self.model.difference_q(x0[..., self.sl_q], x1[..., self.sl_q])
        out[..., self.tl_dq] = x1[..., self.sl_dq] - x0[..., self.sl_dq]
        out[..., self.tl_lip] = x1[..., self.sl_lip] - x0[..., self.sl_lip]
        return out


def lipfm_accel(x, u, consts: ModelConstants):
    """COM accelerations (xdd, ydd) of the pendulum-plus-flywheel, batched.

    x may be a full composite state or just the 8 pendulum entries; u a full
    control or the 4 pendulum entries.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    lip = x if x.shape[-1] == 8 else x[..., -8:]
    ut = u if u.shape[-1] == 4 else u[..., -4:]
    w2 = consts.omega2
    mz = consts.m * consts.z_c
    xdd = w2 * (lip[..., 0] - lip[..., 4]) - ut[..., 3] / mz
    ydd = w2 * (lip[..., 1] - lip[..., 5]) + ut[..., 2] / mz
    return xdd, ydd


def integrate(space: KinoSpace, consts: ModelConstants, x, u):
    """One semi-implicit Euler step of the composite dynamics, batched."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dt = consts.dt
    dq = x[..., space.sl_dq] + dt * u[..., space.cl_ddq]
    q = space.model.integrate_q(x[..., space.sl_q], dt * dq)
    lip = x[..., space.sl_lip].copy()
    xdd, ydd = lipfm_accel(lip, u, consts)
    lip[..., 2] += dt * xdd
    lip[..., 3] += dt * ydd
    lip[..., 0] += dt * lip[..., 2]
    lip[..., 1] += dt * lip[..., 3]
    lip[..., 4:6] += dt * u[..., space.cl_pdot]
    lip[..., 6:8] += dt * u[..., space.cl_tau]
    return space.pack(q, dq, lip)


def lip_transition(consts: ModelConstants):
    """Analytic per-step Jacobians of the 8-dim pendulum block: (Lxx 8x8, Lxu 8x4)."""
    dt = consts.dt
    w2 = consts.omega2
    mz = consts.m * consts.z_c
    A = np.eye(8)
    # velocity rows pick up the acceleration, position rows the updated velocity
    A[2, 0] = dt * w2
    A[2, 4] = -dt * w2
    A[3, 1] = dt * w2
    A[3, 5] = -dt * w2
    A[0, 0] += dt**2 * w2
    A[0, 2] = dt
    A[0, 4] = -(dt**2) * w2
    A[1, 1] += dt**2 * w2
    A[1, 3] = dt
    A[1, 5] = -(dt**2) * w2
    B = np.zeros((8, 4))
    B[2, 3] = -dt / mz
    B[3, 2] = dt / mz
    B[0, 3] = -(dt**2) / mz
    B[1, 2] = dt**2 / mz
    B[4, 0] = dt
    B[5, 1] = dt
    B[6, 2] = dt
    B[7, 3] = dt
    return A, B


def integrate_jacobians(space: KinoSpace, consts: ModelConstants, X, U):
    """Tangent-space Jacobians (Fx, Fu) of `integrate` for a batch of nodes.

    All blocks are closed-form; the only non-trivial ones couple the base
    orientation tangent through the SO(3) exponential of the step rotation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    B = X.shape[0]
    nv, ndx, nu = space.nv, space.ndx, space.nu
    dt = consts.dt

    Fx = np.zeros((B, ndx, ndx))
    Fu = np.zeros((B, ndx, nu))
    idx = np.arange(nv)

    # configuration rows: dq+ = D1 dq + dt D2 (dqv + dt dqdd)
    dq_new = X[:, space.sl_dq] + dt * U[:, space.cl_ddq]
    w = dt * dq_new[:, 3:6]  # base rotation increment over the step
    Rw_T = np.swapaxes(se3.rot_exp(w), -1, -2)
    Jr = se3.so3_jr(w)

    D1 = np.zeros((B, nv, nv))
    D2 = np.zeros((B, nv, nv))
    D1[:, idx, idx] = 1.0
    D2[:, idx, idx] = 1.0
    D1[:, 3:6, 3:6] = Rw_T
    D2[:, 3:6, 3:6] = Jr

    Fx[:, space.tl_q, space.tl_q] = D1
    Fx[:, space.tl_q, space.tl_dq] = dt * D2
    Fu[:, space.tl_q, space.cl_ddq] = dt**2 * D2
    # velocity rows
    Fx[:, space.tl_dq, space.tl_dq] = np.eye(nv)
    Fu[:, space.tl_dq, space.cl_ddq] = dt * np.eye(nv)
    # pendulum rows
    A, Bu = lip_transition(consts)
    Fx[:, space.tl_lip, space.tl_lip] = A
    Fu[:, space.tl_lip, nv:] = Bu
    return Fx, Fu


# ---------------------------------------------------------------------------
# coupling residuals


def residual_batch(model, consts: ModelConstants, Q, DQ, DDQ, TAU, LIP, T_rf, T_lf,
                   need_feet: bool = True):
    """Coupling and foot-placement residuals for a batch of nodes, unmasked.

    Q (B,nq), DQ/DDQ (B,nv), TAU (B,2) flywheel torque, LIP (B,8),
    T_rf/T_lf (B,4,4) foot targets.  Foot rows measure the placement error of
    BOTH feet against their targets; contact masking (for the stance-pin
    penalty or the standalone residual operation) is applied by the callers.
    """
    out = np.zeros((Q.shape[0], R_DIM))
    data = alg.fkm_pass(model, Q, DQ, DDQ, need_feet=need_feet)
    out[:, R_CAM_RATE] = data["hdot"][:, 3:5] - TAU
    out[:, R_COM.start + 0] = data["com"][:, 0] - LIP[:, 0]
    out[:, R_COM.start + 1] = data["com"][:, 1] - LIP[:, 1]
    out[:, R_COM.start + 2] = data["com"][:, 2] - consts.z_c
    out[:, R_CAM_STATE] = data["h"][:, 3:5] - LIP[:, 6:8]
    if need_feet:
        for name, T_t in (("right_foot", T_rf), ("left_foot", T_lf)):
            T_f = data["T_rf"] if name == "right_foot" else data["T_lf"]
            out[:, R_FOOT[name]] = se3.se3_log(se3.se3_inv(T_f) @ T_t)
    return out


def fkm_residuals(model, consts: ModelConstants, space: KinoSpace, x, u, stance_targets: dict):
    """Residual vector for one state/control, stance_targets keyed by foot frame.

    The keys define the active contact set; rows of a swing foot are zero.
    """
    for key in stance_targets:
        if key not in FOOT_ORDER:
            raise KeyError(f"unknown stance foot {key!r}; expected one of {FOOT_ORDER}")
    x = space.check(x)
    u = np.asarray(u, dtype=float)
    eye = np.eye(4)
    T_rf = stance_targets.get("right_foot", eye)
    T_lf = stance_targets.get("left_foot", eye)
    r = residual_batch(
        model, consts,
        x[None, space.sl_q], x[None, space.sl_dq], u[None, space.cl_ddq],
        u[None, space.cl_tau], x[None, space.sl_lip],
        np.asarray(T_rf, dtype=float)[None], np.asarray(T_lf, dtype=float)[None],
    )[0]
    for name in FOOT_ORDER:
        if name not in stance_targets:
            r[R_FOOT[name]] = 0.0
    return r


def residual_jacobian_fd(model, consts: ModelConstants, space: KinoSpace,
                         Q, DQ, DDQ, TAU, LIP, T_rf, T_lf,
                         eps: float = 1e-6, mode: str = "fd"):
    """Unmasked residual values and tangent Jacobians for a batch of N nodes.

    Returns (r (N,19), Jx (N,19,ndx), Ju (N,19,nu)).  Kinematic blocks over
    dq and dqv come from central differences evaluated in one flat batch;
    pendulum/torque/acceleration blocks are exact.  mode="analytic" replaces
    the COM and foot-placement q-blocks with closed forms and shrinks the
    finite-difference pass to the momentum rows.
    """
    N = Q.shape[0]
    nv = space.nv
    Jx = np.zeros((N, R_DIM, space.ndx))
    Ju = np.zeros((N, R_DIM, space.nu))

    r0 = residual_batch(model, consts, Q, DQ, DDQ, TAU, LIP, T_rf, T_lf)

    # exact blocks -----------------------------------------------------------
    kin = alg.fk_pass(model, Q)
    inert = alg.link_inertias(model, kin)
    A = alg.cmm(model, kin, inert)  # (N,6,nv)
    H = A[:, 3:5, :]
    Jx[:, R_COM.start + 0, space.tl_lip.start + 0] = -1.0
    Jx[:, R_COM.start + 1, space.tl_lip.start + 1] = -1.0
    Jx[:, R_CAM_STATE, space.tl_lip.start + 6: space.tl_lip.start + 8] = -np.eye(2)
    Ju[:, R_CAM_RATE, space.cl_tau] = -np.eye(2)
    Ju[:, R_CAM_RATE, space.cl_ddq] = H
    Jx[:, R_CAM_STATE, space.tl_dq] = H

    fd_feet = mode != "analytic"
    if not fd_feet:
        Jx[:, R_COM, space.tl_q] = A[:, :3, :] / consts.m
        for name, T_t in (("right_foot", T_rf), ("left_foot", T_lf)):
            Jb = alg.frame_jacobian(model, kin, name)  # world-aligned
            T_f = alg.frame_placement(model, kin, name)
            Rf_T = np.swapaxes(T_f[:, :3, :3], -1, -2)
            # body Jacobian: rotate the world-aligned rows into the frame
            Jb_local = Jb.copy()
            Jb_local[:, :3, :] = Rf_T @ Jb[:, :3, :]
            Jb_local[:, 3:, :] = Rf_T @ Jb[:, 3:, :]
            T_rel = se3.se3_inv(T_f) @ T_t
            Jx[:, R_FOOT[name], space.tl_q] = (
                -se3.jlog6(T_rel) @ se3.se3_adjoint(se3.se3_inv(T_rel)) @ Jb_local)

    # finite-difference blocks over dq (fresh kinematics per column) ---------
    steps = eps * np.eye(nv)
    Qpm = np.concatenate(
        [model.integrate_q(Q[:, None, :], steps[None]), model.integrate_q(Q[:, None, :], -steps[None])],
        axis=1,
    )  # (N, 2 nv, nq)
    K = 2 * nv
    flat = lambda a: a.reshape(N * K, a.shape[-1])
    rep = lambda a: np.repeat(a[:, None], K, axis=1).reshape((N * K,) + a.shape[1:])
    r_pm = residual_batch(
        model, consts, flat(Qpm), rep(DQ), rep(DDQ), rep(TAU), rep(LIP),
        rep(T_rf), rep(T_lf), need_feet=fd_feet,
    ).reshape(N, K, R_DIM)
    Jq = np.swapaxes((r_pm[:, :nv] - r_pm[:, nv:]) / (2 * eps), 1, 2)  # (N,19,nv)

    if not fd_feet:
        rows = np.r_[0:2, 17:19]
        Jx[:, rows, space.tl_q] = Jq[:, rows]
    else:
        Jx[:, :, space.tl_q] = Jq

    # velocity block of the momentum-rate rows: the kinematic pass is shared
    # across all velocity perturbations (only momenta are re-evaluated)
    DQpm = np.concatenate([DQ[:, None] + steps[None], DQ[:, None] - steps[None]], axis=1)  # (N,2nv,nv)
    kinb = {k: v[:, None] for k, v in kin.items()}
    inertb = {k: v[:, None] for k, v in alg.link_inertias(model, kin).items()}
    _, hdot_xy = alg.cam_quantities_fixed_kin(model, kinb, inertb, DQpm, DDQ[:, None])
    Jx[:, R_CAM_RATE, space.tl_dq] = np.swapaxes(
        (hdot_xy[:, :nv] - hdot_xy[:, nv:]) / (2 * eps), 1, 2
    )
    return r0, Jx, Ju


def dynamics_derivatives(model, consts: ModelConstants, space: KinoSpace, x, u,
                         stance_targets: dict, eps: float = 1e-6, mode: str = "fd"):
    """Per-node bundle: integrator Jacobians plus residuals and their Jacobians."""
    x = space.check(x)
    u = np.asarray(u, dtype=float)
    Fx, Fu = integrate_jacobians(space, consts, x, u)
    eye = np.eye(4)
    r, Jx, Ju = residual_jacobian_fd(
        model, consts, space,
        x[None, space.sl_q], x[None, space.sl_dq], u[None, space.cl_ddq],
        u[None, space.cl_tau], x[None, space.sl_lip],
        np.asarray(stance_targets.get("right_foot", eye), dtype=float)[None],
        np.asarray(stance_targets.get("left_foot", eye), dtype=float)[None],
        eps=eps, mode=mode,
    )
    # the standalone residual operation zeroes rows of feet not in contact
    for name in FOOT_ORDER:
        if name not in stance_targets:
            r[:, R_FOOT[name]] = 0.0
            Jx[:, R_FOOT[name]] = 0.0
            Ju[:, R_FOOT[name]] = 0.0
    for name, arr in (("Fx", Fx), ("Fu", Fu), ("Jx", Jx), ("Ju", Ju)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite entries in {name}")
    return Fx[0], Fu[0], r[0], Jx[0], Ju[0]


# ---------------------------------------------------------------------------
# consistent-state construction (used by the dataset sampler and tests)


def consistent_state(model, consts: ModelConstants, space: KinoSpace, q, qv, p_xy):
    """Compose a state whose COM/momentum entries agree with (q, qv) exactly."""
    A, h, _ = model.centroidal_momentum(q, qv)
    com = alg.com_position(model, q[None])[0]
    lip = np.zeros(8)
    lip[0:2] = com[:2]
    lip[2:4] = h[0:2] / consts.m  # COM velocity from linear momentum
    lip[4:6] = p_xy
    lip[6:8] = h[3:5]
    return space.pack(q, qv, lip)


def consistent_control(model, consts: ModelConstants, space: KinoSpace, q, qv, tau_xy, pdot_xy=(0.0, 0.0)):
    """Least-norm qdd realizing the requested flywheel torque via the momentum map."""
    A, _, hdot_drift = model.centroidal_momentum(q, qv)
    H = A[3:5, :]
    qdd = np.linalg.pinv(H) @ (np.asarray(tau_xy, dtype=float) - hdot_drift[3:5])
    u = np.zeros(space.nu)
    u[space.cl_ddq] = qdd
    u[space.cl_pdot] = pdot_xy
    u[space.cl_tau] = tau_xy
    return u
