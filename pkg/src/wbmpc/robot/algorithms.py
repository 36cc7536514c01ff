"""Batched rigid-body kinematics and dynamics.

Every routine here accepts configurations with arbitrary leading batch axes
(``q: (..., nq)``) and loops only over the ~20 joints of the tree, so
evaluating thousands of configurations costs barely more than evaluating one.
This is what makes finite-difference derivative blocks affordable in the MPC
hot path.

Spatial quantities use Plucker coordinates at the world origin with
linear-first ordering: motion vectors are [v_origin, omega], force vectors
[f, n_origin].  Working in a single common frame removes all inter-link
coordinate transforms from the composite-inertia and momentum recursions.

Momentum-type sums are written with per-link cross products on (mass, COM,
rotational inertia) instead of assembled 6x6 spatial inertias; the 6x6 form
only appears in the composite recursions (mass matrix, momentum matrix) where
batches are small.
"""

from __future__ import annotations

import numpy as np

from wbmpc import se3


def _cross(a, b):
    # hand-rolled cross product: np.cross materializes broadcast inputs,
    # which dominates the runtime of the big finite-difference batches
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _joint_rot_generators(model):
    # cached skew(axis) and skew(axis)^2 per joint for the Rodrigues update
    K = se3.skew(model.axis)
    return K, K @ K


# ---------------------------------------------------------------------------
# forward kinematics


def fk_pass(model, q: np.ndarray) -> dict:
    """World rotation/origin of every link frame plus world joint axes."""
    batch = q.shape[:-1]
    nj = model.njoint
    if not hasattr(model, "_rot_gen"):
        model._rot_gen = _joint_rot_generators(model)
        model._tree_rot = [bool(np.any(np.abs(model.R_tree[j] - np.eye(3)) > 1e-15)) for j in range(nj)]
    K, K2 = model._rot_gen

    R = np.empty(batch + (nj, 3, 3))
    p = np.empty(batch + (nj, 3))
    R[..., 0, :, :] = se3.quat_to_rot(q[..., 3:7])
    p[..., 0, :] = q[..., :3]
    s = np.sin(q[..., 7:])
    c1 = 1.0 - np.cos(q[..., 7:])
    for j in range(1, nj):
        par = model.parent[j]
        Rpar = R[..., par, :, :]
        Rp = Rpar @ model.R_tree[j] if model._tree_rot[j] else Rpar
        p[..., j, :] = p[..., par, :] + Rpar @ model.p_tree[j]
        # R_j = Rp (I + sin K + (1-cos) K^2)
        Rj = R[..., j, :, :]
        np.multiply(s[..., j - 1, None, None], Rp @ K[j], out=Rj)
        Rj += c1[..., j - 1, None, None] * (Rp @ K2[j])
        Rj += Rp
    axis_w = np.einsum("...jkl,jl->...jk", R, model.axis)
    return {"R": R, "p": p, "axis_w": axis_w}


def joint_subspace(model, kin: dict, j: int) -> np.ndarray:
    """Motion-subspace column(s) of joint j in origin coordinates.

    Revolute joints give a (..., 6) column; the floating base a (..., 6, 6) block.
    """
    p = kin["p"]
    if model.jtype[j] == 1:
        a = kin["axis_w"][..., j, :]
        return np.concatenate([_cross(p[..., j, :], a), a], axis=-1)
    batch = p.shape[:-2]
    R0 = kin["R"][..., 0, :, :]
    S = np.zeros(batch + (6, 6))
    S[..., :3, :3] = np.eye(3)
    S[..., :3, 3:] = se3.skew(p[..., 0, :]) @ R0
    S[..., 3:, 3:] = R0
    return S


def vel_acc_pass(model, kin: dict, qv: np.ndarray, qa, need_acc: bool = True):
    """Spatial velocity (and optionally acceleration) of every link.

    kin arrays may have fewer leading axes than qv; they broadcast (this is
    how velocity-only perturbation batches reuse one kinematic pass).
    qa=None with need_acc=True gives the zero-acceleration (velocity-product)
    pass used for drift terms.
    """
    nj = model.njoint
    R, p, axis_w = kin["R"], kin["p"], kin["axis_w"]
    batch = np.broadcast_shapes(R.shape[:-3], qv.shape[:-1])
    V = np.empty(batch + (nj, 6))
    A = np.empty(batch + (nj, 6)) if need_acc else None

    omega0 = _mat3_vec(R[..., 0, :, :], qv[..., 3:6])
    V[..., 0, :3] = qv[..., :3] + _cross(p[..., 0, :], omega0)
    V[..., 0, 3:] = omega0
    if need_acc:
        if qa is None:
            A[..., 0, :3] = -_cross(omega0, qv[..., :3])
            A[..., 0, 3:] = 0.0
        else:
            wdot = _mat3_vec(R[..., 0, :, :], qa[..., 3:6])
            A[..., 0, :3] = qa[..., :3] + _cross(p[..., 0, :], wdot) - _cross(omega0, qv[..., :3])
            A[..., 0, 3:] = wdot

    for j in range(1, nj):
        par = model.parent[j]
        a_w = axis_w[..., j, :]
        phi_lin = _cross(p[..., j, :], a_w)
        qd = qv[..., 6 + j - 1, None]
        vJ_lin = qd * phi_lin
        vJ_ang = qd * a_w
        V[..., j, :3] = V[..., par, :3] + vJ_lin
        V[..., j, 3:] = V[..., par, 3:] + vJ_ang
        if need_acc:
            w = V[..., j, 3:]
            A[..., j, :3] = A[..., par, :3] + _cross(w, vJ_lin) + _cross(V[..., j, :3], vJ_ang)
            A[..., j, 3:] = A[..., par, 3:] + _cross(w, vJ_ang)
            if qa is not None:
                qdd = qa[..., 6 + j - 1, None]
                A[..., j, :3] += qdd * phi_lin
                A[..., j, 3:] += qdd * a_w
    return V, A


# ---------------------------------------------------------------------------
# inertia, momentum


def link_inertias(model, kin: dict) -> dict:
    """World link COMs and world-aligned rotational inertias (about link COM)."""
    R = kin["R"]
    c = kin["p"] + np.einsum("...jkl,jl->...jk", R, model.com_local)
    Iw = (R @ model.inertia_local) @ np.swapaxes(R, -1, -2)
    return {"c": c, "Iw": Iw}


def com_from_kin(model, kin: dict, inert: dict | None = None) -> np.ndarray:
    c = inert["c"] if inert is not None else link_inertias(model, kin)["c"]
    return np.einsum("j,...jk->...k", model.mass, c) / model.total_mass


def com_position(model, q: np.ndarray) -> np.ndarray:
    return com_from_kin(model, fk_pass(model, q))


def _mat3_vec(M, v):
    return (M @ v[..., None])[..., 0]


def _link_momenta(model, inert: dict, V: np.ndarray):
    """Per-link linear momentum and angular momentum about the origin."""
    c, Iw = inert["c"], inert["Iw"]
    w = V[..., 3:]
    vcom = V[..., :3] + _cross(w, c)
    P = model.mass[:, None] * vcom
    L = _mat3_vec(Iw, w) + _cross(c, P)
    return P, L


def _about_com(model, inert: dict, Pt: np.ndarray, Lt: np.ndarray) -> np.ndarray:
    com = np.einsum("j,...jk->...k", model.mass, inert["c"]) / model.total_mass
    return np.concatenate([Pt, Lt - _cross(com, Pt)], axis=-1)


def momentum_about_com(model, kin: dict, inert: dict, V: np.ndarray) -> np.ndarray:
    P, L = _link_momenta(model, inert, V)
    return _about_com(model, inert, P.sum(axis=-2), L.sum(axis=-2))


def _momentum_rate_sums(model, inert: dict, V: np.ndarray, A: np.ndarray, P: np.ndarray, L: np.ndarray):
    c, Iw = inert["c"], inert["Iw"]
    w, wd = V[..., 3:], A[..., 3:]
    acom = A[..., :3] + _cross(wd, c)
    Pd = model.mass[:, None] * acom
    Ld = _mat3_vec(Iw, wd) + _cross(c, Pd)
    # velocity-product part: crf(V) applied to the link momentum
    Pd += _cross(w, P)
    Ld += _cross(w, L) + _cross(V[..., :3], P)
    return Pd.sum(axis=-2), Ld.sum(axis=-2)


def momentum_rate_about_com(model, kin: dict, inert: dict, V: np.ndarray, A: np.ndarray) -> np.ndarray:
    """d/dt of the spatial momentum about the (moving) COM.

    With link accelerations evaluated at a given qa this is A qa + Adot qv;
    at qa = None it is the pure drift Adot qv.
    """
    P, L = _link_momenta(model, inert, V)
    return _about_com(model, inert, *_momentum_rate_sums(model, inert, V, A, P, L))


def _spatial_inertias_6(model, inert: dict) -> np.ndarray:
    c, Iw = inert["c"], inert["Iw"]
    C = se3.skew(c)
    m = model.mass[:, None, None]
    I6 = np.empty(c.shape[:-1] + (6, 6))
    I6[..., :3, :3] = m * np.eye(3)
    I6[..., :3, 3:] = -m * C
    I6[..., 3:, :3] = m * C
    I6[..., 3:, 3:] = Iw - m * (C @ C)
    return I6


def _composite_inertias(model, inert: dict) -> np.ndarray:
    Ic = _spatial_inertias_6(model, inert)
    for j in range(model.njoint - 1, 0, -1):
        Ic[..., model.parent[j], :, :] += Ic[..., j, :, :]
    return Ic


def cmm(model, kin: dict, inert: dict) -> np.ndarray:
    """Centroidal momentum matrix A (..., 6, nv), [linear; angular] about the COM."""
    batch = kin["p"].shape[:-2]
    Ic = _composite_inertias(model, inert)
    A = np.empty(batch + (6, model.nv))
    S0 = joint_subspace(model, kin, 0)
    A[..., :, :6] = Ic[..., 0, :, :] @ S0
    for j in range(1, model.njoint):
        phi = joint_subspace(model, kin, j)
        A[..., :, 6 + j - 1] = np.einsum("...kl,...l->...k", Ic[..., j, :, :], phi)
    com = np.einsum("j,...jk->...k", model.mass, inert["c"]) / model.total_mass
    A[..., 3:, :] -= se3.skew(com) @ A[..., :3, :]
    return A


def crba(model, q: np.ndarray) -> np.ndarray:
    """Mass matrix by the composite-rigid-body algorithm, batched."""
    kin = fk_pass(model, q)
    inert = link_inertias(model, kin)
    Ic = _composite_inertias(model, inert)
    nv = model.nv
    M = np.zeros(q.shape[:-1] + (nv, nv))
    S0 = joint_subspace(model, kin, 0)
    M[..., :6, :6] = np.swapaxes(S0, -1, -2) @ Ic[..., 0, :, :] @ S0
    for j in range(1, model.njoint):
        col = 6 + j - 1
        phi_j = joint_subspace(model, kin, j)
        F = np.einsum("...kl,...l->...k", Ic[..., j, :, :], phi_j)
        M[..., col, col] = np.einsum("...k,...k->...", phi_j, F)
        for i in model.ancestors[j][:-1]:
            if i == 0:
                blk = np.einsum("...kl,...k->...l", S0, F)
                M[..., :6, col] = blk
                M[..., col, :6] = blk
            else:
                row = 6 + i - 1
                v = np.einsum("...k,...k->...", joint_subspace(model, kin, i), F)
                M[..., row, col] = v
                M[..., col, row] = v
    return M


def rnea(model, q: np.ndarray, qv: np.ndarray, qa: np.ndarray) -> np.ndarray:
    """Inverse dynamics: generalized forces for the given motion (gravity in)."""
    kin = fk_pass(model, q)
    inert = link_inertias(model, kin)
    V, A = vel_acc_pass(model, kin, qv, qa)
    # gravity trick: the fictitious upward base acceleration propagates
    # unchanged down the tree, so add it to every link directly
    A[..., :, 2] += model.gravity
    c, Iw = inert["c"], inert["Iw"]
    w, wd = V[..., 3:], A[..., 3:]
    acom = A[..., :3] + _cross(wd, c)
    f_lin = model.mass[:, None] * acom
    f_ang = _mat3_vec(Iw, wd) + _cross(c, f_lin)
    P, L = _link_momenta(model, inert, V)
    f_lin = f_lin + _cross(w, P)
    f_ang = f_ang + _cross(w, L) + _cross(V[..., :3], P)
    f = np.concatenate([f_lin, f_ang], axis=-1)
    for j in range(model.njoint - 1, 0, -1):
        f[..., model.parent[j], :] += f[..., j, :]
    tau = np.empty(q.shape[:-1] + (model.nv,))
    S0 = joint_subspace(model, kin, 0)
    tau[..., :6] = np.einsum("...kl,...k->...l", S0, f[..., 0, :])
    for j in range(1, model.njoint):
        a_w = kin["axis_w"][..., j, :]
        phi = np.concatenate([_cross(kin["p"][..., j, :], a_w), a_w], axis=-1)
        tau[..., 6 + j - 1] = np.einsum("...k,...k->...", phi, f[..., j, :])
    return tau


# ---------------------------------------------------------------------------
# frames


def frame_placement(model, kin: dict, name: str) -> np.ndarray:
    fr = model.frames[name]
    Rp = kin["R"][..., fr.parent, :, :]
    R = Rp @ fr.rot
    p = kin["p"][..., fr.parent, :] + np.einsum("...kl,l->...k", Rp, fr.trans)
    return se3.se3_make(R, p)


def frame_jacobian(model, kin: dict, name: str) -> np.ndarray:
    """World-aligned Jacobian at the frame origin, rows [linear; angular]."""
    fr = model.frames[name]
    batch = kin["p"].shape[:-2]
    x = kin["p"][..., fr.parent, :] + np.einsum("...kl,l->...k", kin["R"][..., fr.parent, :, :], fr.trans)
    J = np.zeros(batch + (6, model.nv))
    for j in model.ancestors[fr.parent]:
        if j == 0:
            R0, p0 = kin["R"][..., 0, :, :], kin["p"][..., 0, :]
            J[..., :3, :3] = np.eye(3)
            J[..., :3, 3:6] = -se3.skew(x - p0) @ R0
            J[..., 3:, 3:6] = R0
        else:
            a = kin["axis_w"][..., j, :]
            J[..., :3, 6 + j - 1] = _cross(a, x - kin["p"][..., j, :])
            J[..., 3:, 6 + j - 1] = a
    return J


def frame_bias_acceleration(model, kin: dict, V: np.ndarray, A: np.ndarray, name: str) -> np.ndarray:
    """Jdot @ qv for the world-aligned frame Jacobian (A must be the qa=0 pass)."""
    fr = model.frames[name]
    x = kin["p"][..., fr.parent, :] + np.einsum("...kl,l->...k", kin["R"][..., fr.parent, :, :], fr.trans)
    Vp = V[..., fr.parent, :]
    ap = A[..., fr.parent, :]
    w, vO = Vp[..., 3:], Vp[..., :3]
    wdot, vOdot = ap[..., 3:], ap[..., :3]
    v_frame = vO + _cross(w, x)
    lin = vOdot + _cross(wdot, x) + _cross(w, v_frame)
    return np.concatenate([lin, wdot], axis=-1)


# ---------------------------------------------------------------------------
# combined pass for the walking model


def fkm_pass(model, q: np.ndarray, qv: np.ndarray, qa, need_feet: bool = True) -> dict:
    """One shot: COM, momentum, momentum rate, and (optionally) foot placements.

    This is the quantity bundle the kino-dynamic residuals need; it is the
    innermost call of the finite-difference derivative path, so it computes
    nothing else.
    """
    kin = fk_pass(model, q)
    inert = link_inertias(model, kin)
    V, A = vel_acc_pass(model, kin, qv, qa)
    com = np.einsum("j,...jk->...k", model.mass, inert["c"]) / model.total_mass
    P, L = _link_momenta(model, inert, V)
    out = {
        "kin": kin,
        "com": com,
        "h": _about_com(model, inert, P.sum(axis=-2), L.sum(axis=-2)),
        "hdot": _about_com(model, inert, *_momentum_rate_sums(model, inert, V, A, P, L)),
    }
    if need_feet:
        out["T_rf"] = frame_placement(model, kin, "right_foot")
        out["T_lf"] = frame_placement(model, kin, "left_foot")
    return out


def cam_quantities_fixed_kin(model, kin: dict, inert: dict, qv: np.ndarray, qa) -> tuple:
    """Momentum and momentum-rate (angular x,y rows) for velocity batches that
    share one kinematic pass: kin/inert broadcast against qv's extra axes."""
    V, A = vel_acc_pass(model, kin, qv, qa)
    h = momentum_about_com(model, kin, inert, V)
    hdot = momentum_rate_about_com(model, kin, inert, V, A)
    return h[..., 3:5], hdot[..., 3:5]
