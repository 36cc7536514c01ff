"""Rotation and rigid-transform utilities, batched over leading axes.

Conventions used throughout the package:
  - quaternions are (w, x, y, z), unit norm
  - rotation vectors are axis * angle (rad)
  - homogeneous transforms are (..., 4, 4)
  - 6D twists are ordered [linear(3), angular(3)]
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == a x b. Batched."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product, batched."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (yy + zz)
    R[..., 0, 1] = 2 * (xy - wz)
    R[..., 0, 2] = 2 * (xz + wy)
    R[..., 1, 0] = 2 * (xy + wz)
    R[..., 1, 1] = 1 - 2 * (xx + zz)
    R[..., 1, 2] = 2 * (yz - wx)
    R[..., 2, 0] = 2 * (xz - wy)
    R[..., 2, 1] = 2 * (yz + wx)
    R[..., 2, 2] = 1 - 2 * (xx + yy)
    return R


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w >= 0), batched, stable for all angles."""
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    # Shepperd's method: pick the largest of (w, x, y, z) branches per element.
    t = np.einsum("...ii->...", R)
    cand = np.stack([t, R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]], axis=-1)
    case = np.argmax(cand, axis=-1)

    q = np.empty(batch + (4,))
    r00, r11, r22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    r01, r02, r12 = R[..., 0, 1], R[..., 0, 2], R[..., 1, 2]
    r10, r20, r21 = R[..., 1, 0], R[..., 2, 0], R[..., 2, 1]

    # case 0: trace dominant
    s0 = np.sqrt(np.maximum(1.0 + t, 0.0)) * 2.0
    s0 = np.where(s0 < _EPS, 1.0, s0)
    q0 = np.stack([0.25 * s0, (r21 - r12) / s0, (r02 - r20) / s0, (r10 - r01) / s0], axis=-1)
    # case 1..3: diagonal dominant
    s1 = np.sqrt(np.maximum(1.0 + r00 - r11 - r22, 0.0)) * 2.0
    s1 = np.where(s1 < _EPS, 1.0, s1)
    q1 = np.stack([(r21 - r12) / s1, 0.25 * s1, (r01 + r10) / s1, (r02 + r20) / s1], axis=-1)
    s2 = np.sqrt(np.maximum(1.0 - r00 + r11 - r22, 0.0)) * 2.0
    s2 = np.where(s2 < _EPS, 1.0, s2)
    q2 = np.stack([(r02 - r20) / s2, (r01 + r10) / s2, 0.25 * s2, (r12 + r21) / s2], axis=-1)
    s3 = np.sqrt(np.maximum(1.0 - r00 - r11 + r22, 0.0)) * 2.0
    s3 = np.where(s3 < _EPS, 1.0, s3)
    q3 = np.stack([(r10 - r01) / s3, (r02 + r20) / s3, (r12 + r21) / s3, 0.25 * s3], axis=-1)

    for i, qi in enumerate([q0, q1, q2, q3]):
        q = np.where((case == i)[..., None], qi, q)
    q = np.where(q[..., :1] < 0.0, -q, q)
    return quat_normalize(q)


def quat_exp(w: np.ndarray) -> np.ndarray:
    """Rotation vector -> quaternion, series-safe near zero."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta[..., 0] < 1e-8
    # sin(half)/theta with series fallback
    st = np.where(small[..., None], 0.5 - theta**2 / 48.0, np.sin(half) / np.where(theta < _EPS, 1.0, theta))
    q = np.concatenate([np.cos(half), st * w], axis=-1)
    return q


def quat_log(q: np.ndarray) -> np.ndarray:
    """Quaternion -> rotation vector (angle in [0, pi])."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    vn = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(vn[..., 0], q[..., 0])[..., None]
    small = vn[..., 0] < 1e-9
    scale = np.where(small[..., None], 2.0 / np.where(np.abs(q[..., :1]) < _EPS, 1.0, q[..., :1]),
                     angle / np.where(vn < _EPS, 1.0, vn))
    return scale * q[..., 1:]


def rot_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula, batched, series-safe."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    W = skew(w)
    W2 = W @ W
    t2 = theta * theta
    small = theta < 1e-8
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(theta < _EPS, 1.0, theta))
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(t2 < _EPS, 1.0, t2))
    eye = np.broadcast_to(np.eye(3), W.shape)
    return eye + a[..., None, None] * W + b[..., None, None] * W2


def rot_log(R: np.ndarray) -> np.ndarray:
    return quat_log(rot_to_quat(R))


def _jr_coeffs(theta: np.ndarray):
    t2 = theta * theta
    small = theta < 1e-6
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(t2 < _EPS, 1.0, t2))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (theta - np.sin(theta)) / np.where(t2 < _EPS, 1.0, theta * t2))
    return b, c


def so3_jr(w: np.ndarray) -> np.ndarray:
    """Right Jacobian of the SO(3) exponential: exp(w + d) ~ exp(w) exp(Jr(w) d)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    b, c = _jr_coeffs(theta)
    W = skew(w)
    eye = np.broadcast_to(np.eye(3), W.shape)
    return eye - b[..., None, None] * W + c[..., None, None] * (W @ W)


def so3_jl(w: np.ndarray) -> np.ndarray:
    """Left Jacobian of the SO(3) exponential (= Jr(-w))."""
    return so3_jr(-np.asarray(w, dtype=float))


def _jlog_coeff(theta: np.ndarray):
    small = theta < 1e-6
    t2 = theta * theta
    # 1/theta^2 - (1+cos)/(2 theta sin), series 1/12 + t^2/720 near zero
    safe = np.where(small, 1.0, theta)
    num = 1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe))
    return np.where(small, 1.0 / 12.0 + t2 / 720.0, num)


def so3_jlog(w: np.ndarray) -> np.ndarray:
    """Jacobian of log: log(exp(w) exp(d)) ~ w + Jlog(w) d. Equals Jr(w)^-1."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    e = _jlog_coeff(theta)
    W = skew(w)
    eye = np.broadcast_to(np.eye(3), W.shape)
    return eye + 0.5 * W + e[..., None, None] * (W @ W)


# ---------------------------------------------------------------------------
# SE(3)


def se3_make(R: np.ndarray, p: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float)
    T = np.zeros(R.shape[:-2] + (4, 4))
    T[..., :3, :3] = R
    T[..., :3, 3] = p
    T[..., 3, 3] = 1.0
    return T


def se3_inv(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    R = T[..., :3, :3]
    p = T[..., :3, 3]
    Rt = np.swapaxes(R, -1, -2)
    return se3_make(Rt, -(Rt @ p[..., None])[..., 0])


def se3_exp(xi: np.ndarray) -> np.ndarray:
    """Twist [v, w] -> transform with R = exp(w), p = Jl(w) v."""
    xi = np.asarray(xi, dtype=float)
    v, w = xi[..., :3], xi[..., 3:]
    return se3_make(rot_exp(w), (so3_jl(w) @ v[..., None])[..., 0])


def se3_log(T: np.ndarray) -> np.ndarray:
    """Transform -> twist [v, w] with w = log(R), v = Jl(w)^-1 p."""
    T = np.asarray(T, dtype=float)
    w = rot_log(T[..., :3, :3])
    # Jl(w)^-1 = Jlog(-w)... expressed directly: I - W/2 + e(theta) W^2
    theta = np.linalg.norm(w, axis=-1)
    e = _jlog_coeff(theta)
    W = skew(w)
    eye = np.broadcast_to(np.eye(3), W.shape)
    Vinv = eye - 0.5 * W + e[..., None, None] * (W @ W)
    v = (Vinv @ T[..., :3, 3:4])[..., 0]
    return np.concatenate([v, w], axis=-1)


def se3_adjoint(T: np.ndarray) -> np.ndarray:
    """Adjoint for [v, w] twists: Ad = [[R, skew(p) R], [0, R]]."""
    T = np.asarray(T, dtype=float)
    R = T[..., :3, :3]
    p = T[..., :3, 3]
    out = np.zeros(T.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., :3, 3:] = skew(p) @ R
    out[..., 3:, 3:] = R
    return out


def jlog6(T: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Jacobian of the SE(3) log w.r.t. a right-applied twist.

    Satisfies log(T exp(d)) ~ log(T) + jlog6(T) d. Evaluated by central
    differences on the 6 tangent directions; exact to ~1e-9 at the default
    step, which is well inside every tolerance this package asserts.
    """
    T = np.asarray(T, dtype=float)
    batch = T.shape[:-2]
    J = np.empty(batch + (6, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = step
        plus = se3_log(T @ se3_exp(d))
        minus = se3_log(T @ se3_exp(-d))
        J[..., :, k] = (plus - minus) / (2.0 * step)
    return J
