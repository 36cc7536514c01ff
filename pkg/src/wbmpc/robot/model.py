"""Floating-base rigid-body model: JSON schema, validation, and evaluation API.

A model is a kinematic tree with exactly one floating-base root joint and
revolute joints below it.  Joint j moves link j (same index).  Generalized
coordinates:

    q  = [base position (3), base quaternion wxyz (4), joint angles]
    qv = [base linear velocity, world frame (3),
          base angular velocity, body frame (3), joint velocities]

so dim(qv) = dim(q) - 1.  Configuration increments go through the exponential
map on the orientation part and are plain additions elsewhere.

The on-disk format is JSON with top-level keys ``links``, ``joints``,
``frames``, ``limits``, and optional ``constants``, ``groups``, ``nominal``;
see docs/model_format.md for the field-by-field description.  The loader
validates every structural invariant and reports the first violation with a
path into the document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from wbmpc import se3
from wbmpc.robot import algorithms as alg


class ModelError(ValueError):
    """Raised when a model document violates the schema or an invariant."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Frame:
    name: str
    parent: int          # joint/link index
    rot: np.ndarray      # (3,3) fixed rotation, link frame -> frame
    trans: np.ndarray    # (3,) offset in the link frame


def _rpy_to_rot(rpy) -> np.ndarray:
    r, p, y = rpy
    return se3.rot_exp([0.0, 0.0, y]) @ se3.rot_exp([0.0, p, 0.0]) @ se3.rot_exp([r, 0.0, 0.0])


def _get(d: dict, key: str, path: str, typ=None):
    if key not in d:
        raise ModelError(f"{path}.{key}", "missing required field")
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise ModelError(f"{path}.{key}", f"expected {typ.__name__}, got {type(v).__name__}")
    return v


def _vec3(d: dict, key: str, path: str) -> np.ndarray:
    v = np.asarray(_get(d, key, path), dtype=float)
    if v.shape != (3,):
        raise ModelError(f"{path}.{key}", f"expected 3 numbers, got shape {v.shape}")
    return v


class RobotModel:
    """Compiled, immutable rigid-body model.

    All joint-level data is stored as index-aligned numpy arrays so that the
    evaluation routines in :mod:`wbmpc.robot.algorithms` can run batched over
    many configurations at once.
    """

    def __init__(self):
        # filled by from_dict; treat instances as immutable afterwards
        self.joint_names: list[str] = []
        self.link_names: list[str] = []
        self.parent: np.ndarray = np.zeros(0, dtype=int)
        self.jtype: np.ndarray = np.zeros(0, dtype=int)  # 0 floating, 1 revolute
        self.axis: np.ndarray = np.zeros((0, 3))
        self.R_tree: np.ndarray = np.zeros((0, 3, 3))
        self.p_tree: np.ndarray = np.zeros((0, 3))
        self.mass: np.ndarray = np.zeros(0)
        self.com_local: np.ndarray = np.zeros((0, 3))
        self.inertia_local: np.ndarray = np.zeros((0, 3, 3))
        self.frames: dict[str, Frame] = {}
        self.gamma_min: np.ndarray = np.zeros(0)
        self.gamma_max: np.ndarray = np.zeros(0)
        self.gravity: float = 9.81
        self.total_mass: float = 0.0
        self.z_c: float = 0.0
        self.upper_body_joints: list[str] = []
        self.nominal_q: np.ndarray = np.zeros(0)
        self.ancestors: list[list[int]] = []

    # -- dimensions ---------------------------------------------------------

    @property
    def njoint(self) -> int:
        return len(self.joint_names)

    @property
    def nact(self) -> int:
        return self.njoint - 1

    @property
    def nq(self) -> int:
        return 7 + self.nact

    @property
    def nv(self) -> int:
        return 6 + self.nact

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def actuated_v_index(self, name: str) -> int:
        """Velocity-space index of an actuated joint."""
        j = self.joint_index(name)
        if self.jtype[j] != 1:
            raise KeyError(f"{name} is not an actuated joint")
        return 6 + (j - 1)

    @property
    def upper_body_v_indices(self) -> np.ndarray:
        return np.array([self.actuated_v_index(n) for n in self.upper_body_joints], dtype=int)

    @property
    def upper_body_q_indices(self) -> np.ndarray:
        return self.upper_body_v_indices + 1

    # -- loading ------------------------------------------------------------

    @classmethod
    def from_json(cls, path: str) -> "RobotModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def from_dict(cls, doc: dict) -> "RobotModel":
        m = cls()
        links = _get(doc, "links", "$", list)
        joints = _get(doc, "joints", "$", list)
        if not joints:
            raise ModelError("$.joints", "empty joint list")

        link_by_name = {}
        for i, ln in enumerate(links):
            name = _get(ln, "name", f"$.links[{i}]", str)
            if name in link_by_name:
                raise ModelError(f"$.links[{i}].name", f"duplicate link name {name!r}")
            link_by_name[name] = (i, ln)

        # Pass 1: structure. Joints must appear parent-before-child.
        floating = [i for i, j in enumerate(joints) if j.get("type") == "floating"]
        if len(floating) != 1 or floating[0] != 0:
            raise ModelError("$.joints", "exactly one floating joint is required and it must be first")

        m.joint_names = []
        m.link_names = []
        parent = []
        child_link_of = {}
        for i, jn in enumerate(joints):
            path = f"$.joints[{i}]"
            name = _get(jn, "name", path, str)
            jt = _get(jn, "type", path, str)
            if jt not in ("floating", "revolute"):
                raise ModelError(f"{path}.type", f"unknown joint type {jt!r}")
            child = _get(jn, "child", path, str)
            if child not in link_by_name:
                raise ModelError(f"{path}.child", f"unknown link {child!r}")
            if child in child_link_of:
                raise ModelError(f"{path}.child", f"link {child!r} already has a parent joint (cycle or reuse)")
            if jt == "floating":
                if jn.get("parent") is not None:
                    raise ModelError(f"{path}.parent", "floating joint must have parent null")
                parent.append(-1)
            else:
                par = _get(jn, "parent", path, str)
                if par not in child_link_of:
                    raise ModelError(f"{path}.parent", f"parent link {par!r} not defined by an earlier joint")
                parent.append(child_link_of[par])
            child_link_of[child] = i
            m.joint_names.append(name)
            m.link_names.append(child)

        nj = len(joints)
        used = set(m.link_names)
        for name in link_by_name:
            if name not in used:
                raise ModelError(f"$.links", f"link {name!r} is not attached by any joint")

        m.parent = np.array(parent, dtype=int)
        m.jtype = np.array([0 if j["type"] == "floating" else 1 for j in joints], dtype=int)
        m.axis = np.zeros((nj, 3))
        m.R_tree = np.zeros((nj, 3, 3))
        m.p_tree = np.zeros((nj, 3))
        m.mass = np.zeros(nj)
        m.com_local = np.zeros((nj, 3))
        m.inertia_local = np.zeros((nj, 3, 3))

        for i, jn in enumerate(joints):
            path = f"$.joints[{i}]"
            origin = jn.get("origin", {})
            xyz = np.asarray(origin.get("xyz", [0, 0, 0]), dtype=float)
            rpy = np.asarray(origin.get("rpy", [0, 0, 0]), dtype=float)
            if xyz.shape != (3,) or rpy.shape != (3,):
                raise ModelError(f"{path}.origin", "xyz and rpy must each hold 3 numbers")
            m.p_tree[i] = xyz
            m.R_tree[i] = _rpy_to_rot(rpy)
            if m.jtype[i] == 1:
                ax = _vec3(jn, "axis", path)
                n = np.linalg.norm(ax)
                if n < 1e-12:
                    raise ModelError(f"{path}.axis", "axis must be nonzero")
                m.axis[i] = ax / n

            li, ln = link_by_name[m.link_names[i]]
            lpath = f"$.links[{li}]"
            mass = float(_get(ln, "mass", lpath))
            if mass <= 0:
                raise ModelError(f"{lpath}.mass", f"link mass must be > 0, got {mass}")
            m.mass[i] = mass
            m.com_local[i] = _vec3(ln, "com", lpath)
            inr = np.asarray(_get(ln, "inertia", lpath), dtype=float)
            if inr.shape == (6,):
                ixx, iyy, izz, ixy, ixz, iyz = inr
                I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
            elif inr.shape == (3, 3):
                I = inr
            else:
                raise ModelError(f"{lpath}.inertia", "expected 6 values [ixx,iyy,izz,ixy,ixz,iyz] or a 3x3 matrix")
            if np.max(np.abs(I - I.T)) > 1e-12:
                raise ModelError(f"{lpath}.inertia", "inertia matrix must be symmetric")
            if np.min(np.linalg.eigvalsh(I)) <= 0:
                raise ModelError(f"{lpath}.inertia", "inertia matrix must be positive definite")
            m.inertia_local[i] = I

        m.ancestors = []
        for j in range(nj):
            chain = []
            k = j
            while k >= 0:
                chain.append(k)
                k = m.parent[k]
            m.ancestors.append(chain[::-1])

        # frames
        frames = _get(doc, "frames", "$", dict)
        for req in ("right_foot", "left_foot", "pelvis"):
            if req not in frames:
                raise ModelError(f"$.frames.{req}", "required frame missing")
        for name, fr in frames.items():
            path = f"$.frames.{name}"
            par = _get(fr, "parent", path, str)
            if par not in m.link_names:
                raise ModelError(f"{path}.parent", f"unknown link {par!r}")
            xyz = np.asarray(fr.get("xyz", [0, 0, 0]), dtype=float)
            rpy = np.asarray(fr.get("rpy", [0, 0, 0]), dtype=float)
            m.frames[name] = Frame(name, m.link_names.index(par), _rpy_to_rot(rpy), xyz)

        # limits
        limits = _get(doc, "limits", "$", dict)
        torque = _get(limits, "torque", "$.limits", dict)
        default = torque.get("default")
        gmin, gmax = np.zeros(nj - 1), np.zeros(nj - 1)
        for k, jname in enumerate(m.joint_names[1:]):
            lim = torque.get(jname, default)
            if lim is None:
                raise ModelError(f"$.limits.torque.{jname}", "no limit and no default given")
            lo, hi = float(lim[0]), float(lim[1])
            if not lo < hi:
                raise ModelError(f"$.limits.torque.{jname}", f"min must be < max, got [{lo}, {hi}]")
            gmin[k], gmax[k] = lo, hi
        m.gamma_min, m.gamma_max = gmin, gmax

        consts = doc.get("constants", {})
        m.gravity = float(consts.get("gravity", 9.81))
        if m.gravity <= 0:
            raise ModelError("$.constants.gravity", "gravity must be > 0")
        m.total_mass = float(np.sum(m.mass))
        if "total_mass" in consts:
            stated = float(consts["total_mass"])
            if abs(stated - m.total_mass) > 1e-9 * max(1.0, abs(stated)):
                raise ModelError(
                    "$.constants.total_mass",
                    f"stated total mass {stated} does not match link sum {m.total_mass}",
                )

        groups = doc.get("groups", {})
        m.upper_body_joints = list(groups.get("upper_body", []))
        for n in m.upper_body_joints:
            if n not in m.joint_names:
                raise ModelError("$.groups.upper_body", f"unknown joint {n!r}")

        nominal = doc.get("nominal", {})
        q0 = np.zeros(m.nq)
        q0[3] = 1.0
        if "base_xyz" in nominal:
            q0[:3] = np.asarray(nominal["base_xyz"], dtype=float)
        if "base_quat" in nominal:
            q0[3:7] = se3.quat_normalize(np.asarray(nominal["base_quat"], dtype=float))
        for name, angle in nominal.get("joints", {}).items():
            if name not in m.joint_names:
                raise ModelError(f"$.nominal.joints.{name}", "unknown joint")
            q0[7 + m.joint_index(name) - 1] = float(angle)
        m.nominal_q = q0

        if "com_height" in consts:
            m.z_c = float(consts["com_height"])
        else:
            m.z_c = float(alg.com_position(m, q0[None])[0, 2])
        if m.z_c <= 0:
            raise ModelError("$.constants.com_height", f"nominal COM height must be > 0, got {m.z_c}")
        return m

    # -- configuration helpers ---------------------------------------------

    def check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.nq:
            raise ValueError(f"q has dimension {q.shape[-1]}, model expects {self.nq}")
        qn = np.linalg.norm(q[..., 3:7], axis=-1)
        if np.any(np.abs(qn - 1.0) > 1e-9):
            raise ValueError("base quaternion is not unit norm")
        return q

    def check_qv(self, qv: np.ndarray) -> np.ndarray:
        qv = np.asarray(qv, dtype=float)
        if qv.shape[-1] != self.nv:
            raise ValueError(f"velocity has dimension {qv.shape[-1]}, model expects {self.nv}")
        return qv

    def integrate_q(self, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
        """q + dq on the configuration manifold (dq is a tangent, length nv)."""
        q = np.asarray(q, dtype=float)
        dq = np.asarray(dq, dtype=float)
        shape = np.broadcast_shapes(q.shape[:-1], dq.shape[:-1])
        out = np.empty(shape + (self.nq,))
        out[..., :3] = q[..., :3] + dq[..., :3]
        out[..., 3:7] = se3.quat_mul(q[..., 3:7], se3.quat_exp(dq[..., 3:6]))
        out[..., 7:] = q[..., 7:] + dq[..., 6:]
        return out

    def difference_q(self, q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
        """Tangent vector d with integrate_q(q0, d) == q1."""
        q0 = np.asarray(q0, dtype=float)
        q1 = np.asarray(q1, dtype=float)
        d = np.empty(np.broadcast_shapes(q0.shape, q1.shape)[:-1] + (self.nv,))
        d[..., :3] = q1[..., :3] - q0[..., :3]
        d[..., 3:6] = se3.quat_log(se3.quat_mul(se3.quat_conj(q0[..., 3:7]), q1[..., 3:7]))
        d[..., 6:] = q1[..., 7:] - q0[..., 7:]
        return d

    def random_configuration(self, rng: np.random.Generator, joint_range: float = 0.5) -> np.ndarray:
        q = np.zeros(self.nq)
        q[:3] = rng.uniform(-0.5, 0.5, 3)
        q[3:7] = se3.quat_exp(rng.uniform(-0.4, 0.4, 3))
        q[7:] = rng.uniform(-joint_range, joint_range, self.nact)
        return q

    # -- evaluation (thin wrappers over the batched algorithms) -------------

    def forward_kinematics(self, q: np.ndarray):
        """World placement of every named frame plus the COM position."""
        q = self.check_q(q)
        kin = alg.fk_pass(self, q[None])
        placements = {name: alg.frame_placement(self, kin, name)[0] for name in self.frames}
        com = alg.com_from_kin(self, kin)[0]
        return placements, com

    def frame_jacobian(self, q: np.ndarray, frame: str) -> np.ndarray:
        """World-aligned 6 x nv Jacobian ([linear; angular]) at the frame origin."""
        if frame not in self.frames:
            raise KeyError(f"unknown frame {frame!r}")
        q = self.check_q(q)
        kin = alg.fk_pass(self, q[None])
        return alg.frame_jacobian(self, kin, frame)[0]

    def mass_matrix(self, q: np.ndarray) -> np.ndarray:
        q = self.check_q(q)
        return alg.crba(self, q[None])[0]

    def nonlinear_effects(self, q: np.ndarray, qv: np.ndarray) -> np.ndarray:
        """Coriolis, centrifugal and gravity generalized forces (= rnea(q, qv, 0))."""
        q, qv = self.check_q(q), self.check_qv(qv)
        return alg.rnea(self, q[None], qv[None], np.zeros((1, self.nv)))[0]

    def inverse_dynamics(self, q: np.ndarray, qv: np.ndarray, qa: np.ndarray) -> np.ndarray:
        q, qv = self.check_q(q), self.check_qv(qv)
        return alg.rnea(self, q[None], qv[None], np.asarray(qa, dtype=float)[None])[0]

    def centroidal_momentum(self, q: np.ndarray, qv: np.ndarray):
        """Returns (A, h, adot_qv): the 6 x nv momentum matrix about the COM,
        the spatial momentum h = A @ qv ([linear; angular]), and the drift
        term (time derivative of A @ qv at zero acceleration)."""
        q, qv = self.check_q(q), self.check_qv(qv)
        kin = alg.fk_pass(self, q[None])
        inert = alg.link_inertias(self, kin)
        V, acc = alg.vel_acc_pass(self, kin, qv[None], None)
        A = alg.cmm(self, kin, inert)[0]
        h = alg.momentum_about_com(self, kin, inert, V)[0]
        hdot = alg.momentum_rate_about_com(self, kin, inert, V, acc)[0]
        return A, h, hdot

    def bias_acceleration(self, q: np.ndarray, qv: np.ndarray, frame: str) -> np.ndarray:
        """Jdot @ qv for the world-aligned frame Jacobian."""
        q, qv = self.check_q(q), self.check_qv(qv)
        kin = alg.fk_pass(self, q[None])
        V, acc = alg.vel_acc_pass(self, kin, qv[None], None)
        return alg.frame_bias_acceleration(self, kin, V, acc, frame)[0]
