"""ZMP-distributing whole-body controller.

Per control tick a convex QP maps the MPC's desired joint accelerations and
desired ZMP to joint torques and contact wrenches.  Decision variables are
z = [qdd (nv), wrench per contact (6 each)]; actuated torques are recovered
from the actuated rows of the dynamics, which turns the torque limits into
linear inequalities.  The nonlinear ZMP-distribution constraint is linearized
exactly by multiplying through with the total vertical force:

    p_zmp * sum(F_z_i) = sum(c_i * F_z_i + [-tau_y_i, tau_x_i])

valid because unilaterality keeps sum(F_z_i) > 0.  The vertical-force
reference enters the objective (soft tracking).  If the QP is infeasible
(e.g. the desired ZMP cannot be realized inside the friction cones) the ZMP
equality is softened into a high-weight objective term so the controller
still returns a torque, and the tick is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wbmpc import qp
from wbmpc.robot import algorithms as alg

FOOT_FRAMES = ("right_foot", "left_foot")


@dataclass
class WbcWeights:
    w_contact_acc: float = 1.0e2   # regularize contact-point acceleration
    w_ddq_relax: float = 1.0       # relaxation of the desired acceleration
    w_force_track: float = 1.0e-2  # vertical contact-force reference tracking
    w_wrench_reg: float = 1.0e-6   # strict-convexity regularization on wrenches
    w_zmp_soft: float = 1.0e6      # weight of the softened ZMP term (fallback)
    mu: float = 0.7                # friction coefficient
    kp: float = 400.0              # joint PD gains for the command torque
    kv: float = 40.0

    def __post_init__(self):
        for name in ("w_contact_acc", "w_ddq_relax", "w_force_track", "mu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class WbcProblem:
    contacts: list
    M: np.ndarray
    nle: np.ndarray
    J: dict
    bias_acc: dict
    qdd_des: np.ndarray
    p_zmp_des: np.ndarray
    centers: dict
    f_ref: dict
    weights: WbcWeights
    gamma_min: np.ndarray
    gamma_max: np.ndarray
    half_extents: tuple
    nv: int

    # assembled QP data (filled by build)
    P: np.ndarray = field(default=None, repr=False)
    c: np.ndarray = field(default=None, repr=False)
    A: np.ndarray = field(default=None, repr=False)
    b: np.ndarray = field(default=None, repr=False)
    A_zmp: np.ndarray = field(default=None, repr=False)
    b_zmp: np.ndarray = field(default=None, repr=False)
    G: np.ndarray = field(default=None, repr=False)
    h: np.ndarray = field(default=None, repr=False)

    @property
    def nz(self) -> int:
        return self.nv + 6 * len(self.contacts)

    def wrench_slice(self, i: int) -> slice:
        return slice(self.nv + 6 * i, self.nv + 6 * (i + 1))


@dataclass
class WbcResult:
    status: str                 # "optimal" | "softened" | "failed"
    torques: np.ndarray         # actuated joint torques
    wrenches: dict              # foot frame -> 6 wrench [f, tau] at the foot center
    qdd: np.ndarray
    zmp: np.ndarray             # ZMP reconstructed from the returned wrenches
    objective: float
    most_violated: str = ""


def build_wbc_qp(model, q, qv, qdd_des, contacts, p_zmp_des, f_ref, weights: WbcWeights,
                 half_extents=(0.12, 0.06), centers=None) -> WbcProblem:
    """Assemble the QP data at the current configuration.

    contacts: foot frames currently on the ground (non-empty).
    f_ref: foot frame -> vertical force reference (N).
    centers: optional foot-center override; defaults to the current frame origins.
    """
    if not contacts:
        raise ValueError("contact set must not be empty")
    for name in contacts:
        if name not in FOOT_FRAMES:
            raise KeyError(f"unknown contact frame {name!r}")
    q = model.check_q(q)
    qv = model.check_qv(qv)

    M = model.mass_matrix(q)
    nle = model.nonlinear_effects(q, qv)
    kin = alg.fk_pass(model, q[None])
    V, acc0 = alg.vel_acc_pass(model, kin, qv[None], None)
    J = {}
    bias = {}
    cent = {}
    for name in contacts:
        J[name] = alg.frame_jacobian(model, kin, name)[0]
        bias[name] = alg.frame_bias_acceleration(model, kin, V, acc0, name)[0]
        cent[name] = (centers[name] if centers is not None
                      else alg.frame_placement(model, kin, name)[0][:2, 3])

    prob = WbcProblem(
        contacts=list(contacts), M=M, nle=nle, J=J, bias_acc=bias,
        qdd_des=np.asarray(qdd_des, dtype=float), p_zmp_des=np.asarray(p_zmp_des, dtype=float),
        centers=cent, f_ref=dict(f_ref), weights=weights,
        gamma_min=model.gamma_min, gamma_max=model.gamma_max,
        half_extents=tuple(half_extents), nv=model.nv,
    )
    _assemble(prob)
    return prob


def _assemble(prob: WbcProblem):
    w = prob.weights
    nv, nz = prob.nv, prob.nz
    nc = len(prob.contacts)

    Q = np.zeros((nz, nz))
    l = np.zeros(nz)
    # desired-acceleration relaxation
    Q[:nv, :nv] += w.w_ddq_relax * np.eye(nv)
    l[:nv] += -2.0 * w.w_ddq_relax * prob.qdd_des
    for i, name in enumerate(prob.contacts):
        Jc = prob.J[name]
        bi = prob.bias_acc[name]
        # contact-point acceleration xdd = J qdd + bias
        Q[:nv, :nv] += w.w_contact_acc * (Jc.T @ Jc)
        l[:nv] += 2.0 * w.w_contact_acc * (Jc.T @ bi)
        sl = prob.wrench_slice(i)
        # uniqueness regularization on the components the equalities leave
        # free (tangential forces, torques); f_z carries its own tracking term
        idx = np.array([sl.start, sl.start + 1, sl.start + 3, sl.start + 4, sl.start + 5])
        Q[idx, idx] += w.w_wrench_reg
        fz = sl.start + 2
        Q[fz, fz] += w.w_force_track
        l[fz] += -2.0 * w.w_force_track * prob.f_ref[name]

    # floating-base dynamics rows: M qdd + nle = sum J^T F  (unactuated)
    A_dyn = np.zeros((6, nz))
    A_dyn[:, :nv] = prob.M[:6]
    for i, name in enumerate(prob.contacts):
        A_dyn[:, prob.wrench_slice(i)] = -prob.J[name][:, :6].T
    b_dyn = -prob.nle[:6]

    # ZMP distribution, multiplied through by the total vertical force
    A_zmp = np.zeros((2, nz))
    for i, name in enumerate(prob.contacts):
        sl = prob.wrench_slice(i)
        cx, cy = prob.centers[name]
        A_zmp[0, sl.start + 2] = cx - prob.p_zmp_des[0]
        A_zmp[0, sl.start + 4] = -1.0  # -tau_y
        A_zmp[1, sl.start + 2] = cy - prob.p_zmp_des[1]
        A_zmp[1, sl.start + 3] = 1.0   # +tau_x
    b_zmp = np.zeros(2)

    # inequalities: torque limits and contact cones
    na = nv - 6
    G_tau = np.zeros((2 * na, nz))
    h_tau = np.zeros(2 * na)
    Ma = prob.M[6:]
    G_tau[:na, :nv] = Ma
    G_tau[na:, :nv] = -Ma
    for i, name in enumerate(prob.contacts):
        blk = prob.J[name][:, 6:].T
        G_tau[:na, prob.wrench_slice(i)] = -blk
        G_tau[na:, prob.wrench_slice(i)] = blk
    h_tau[:na] = prob.gamma_max - prob.nle[6:]
    h_tau[na:] = prob.nle[6:] - prob.gamma_min

    hx, hy = prob.half_extents
    mu = prob.weights.mu
    cone = np.array([
        [0, 0, -1.0, 0, 0, 0],      # unilaterality
        [1, 0, -mu, 0, 0, 0],       # |f_x| <= mu f_z
        [-1, 0, -mu, 0, 0, 0],
        [0, 1, -mu, 0, 0, 0],       # |f_y| <= mu f_z
        [0, -1, -mu, 0, 0, 0],
        [0, 0, -hy, 1, 0, 0],       # |tau_x| <= h_y f_z (local CoP in y)
        [0, 0, -hy, -1, 0, 0],
        [0, 0, -hx, 0, 1, 0],       # |tau_y| <= h_x f_z (local CoP in x)
        [0, 0, -hx, 0, -1, 0],
    ])
    G_cone = np.zeros((9 * nc, nz))
    for i in range(nc):
        G_cone[9 * i: 9 * (i + 1), prob.wrench_slice(i)] = cone
    prob.P = 2.0 * Q
    prob.c = l
    prob.A = np.vstack([A_dyn, A_zmp])
    prob.b = np.concatenate([b_dyn, b_zmp])
    prob.A_zmp = A_zmp
    prob.b_zmp = b_zmp
    prob.G = np.vstack([G_tau, G_cone])
    prob.h = np.concatenate([h_tau, np.zeros(9 * nc)])


def _torques_from(prob: WbcProblem, z: np.ndarray) -> np.ndarray:
    qdd = z[: prob.nv]
    tau = prob.M[6:] @ qdd + prob.nle[6:]
    for i, name in enumerate(prob.contacts):
        tau -= prob.J[name][:, 6:].T @ z[prob.wrench_slice(i)]
    return tau


def reconstruct_zmp(prob: WbcProblem, wrenches: dict) -> np.ndarray:
    num = np.zeros(2)
    den = 0.0
    for name in prob.contacts:
        Fw = wrenches[name]
        cx, cy = prob.centers[name]
        num += Fw[2] * np.array([cx, cy]) + np.array([-Fw[4], Fw[3]])
        den += Fw[2]
    return num / den


def _most_violated(prob: WbcProblem, z: np.ndarray) -> str:
    labels = []
    res = []
    for r, (Ar, br) in enumerate(zip(prob.A, prob.b)):
        labels.append("dynamics" if r < 6 else "zmp_distribution")
        res.append(abs(Ar @ z - br))
    viol = prob.G @ z - prob.h
    na = prob.nv - 6
    for r, v in enumerate(viol):
        if r < 2 * na:
            labels.append("torque_limit")
        else:
            k = (r - 2 * na) % 9
            labels.append(["unilaterality", "friction_x", "friction_x", "friction_y", "friction_y",
                           "cop_y", "cop_y", "cop_x", "cop_x"][k])
        res.append(max(v, 0.0))
    return labels[int(np.argmax(res))]


def solve_wbc(prob: WbcProblem) -> WbcResult:
    res = qp.solve_qp(prob.P, prob.c, prob.A, prob.b, prob.G, prob.h)
    status = "optimal"
    if res.status != "optimal" or res.eq_residual > 1e-7 or res.ineq_violation > 1e-7:
        # soften the ZMP equality so a torque is always produced
        most = _most_violated(prob, res.z)
        w = prob.weights.w_zmp_soft
        P = prob.P + 2.0 * w * (prob.A_zmp.T @ prob.A_zmp)
        A, b = prob.A[:6], prob.b[:6]
        res = qp.solve_qp(P, prob.c, A, b, prob.G, prob.h, max_iter=200)
        status = "softened" if res.status == "optimal" else "failed"
        if status == "failed":
            return WbcResult(status, np.zeros(prob.nv - 6), {}, np.zeros(prob.nv),
                             np.zeros(2), np.inf, most_violated=most)
    else:
        most = ""
    z = res.z
    wrenches = {name: z[prob.wrench_slice(i)].copy() for i, name in enumerate(prob.contacts)}
    return WbcResult(
        status=status,
        torques=_torques_from(prob, z),
        wrenches=wrenches,
        qdd=z[: prob.nv].copy(),
        zmp=reconstruct_zmp(prob, wrenches),
        objective=float(0.5 * z @ prob.P @ z + prob.c @ z),
        most_violated=most,
    )


def command_torque(gamma_wb, q_des, qv_des, q_act, qv_act, kp, kv, gamma_min, gamma_max):
    """Feed-forward torque plus joint PD, saturated at the actuator limits."""
    gamma_wb = np.asarray(gamma_wb, dtype=float)
    kp = np.asarray(kp, dtype=float)
    kv = np.asarray(kv, dtype=float)
    cmd = gamma_wb + kp * (np.asarray(q_des) - np.asarray(q_act)) + kv * (np.asarray(qv_des) - np.asarray(qv_act))
    return np.clip(cmd, gamma_min, gamma_max)
