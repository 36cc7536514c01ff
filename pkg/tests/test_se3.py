import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wbmpc import se3

rotvecs = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)


def random_quat(rng, n=()):
    q = rng.normal(size=n + (4,))
    return se3.quat_normalize(q)


@given(rotvecs)
@settings(max_examples=50, deadline=None)
def test_quat_exp_log_roundtrip(w):
    if np.linalg.norm(w) > np.pi - 1e-3:
        w = w / np.linalg.norm(w) * (np.pi - 1e-3)
    q = se3.quat_exp(w)
    assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(se3.quat_log(q), w, atol=1e-9)


@given(rotvecs)
@settings(max_examples=50, deadline=None)
def test_rot_exp_matches_quat(w):
    R = se3.rot_exp(w)
    np.testing.assert_allclose(R, se3.quat_to_rot(se3.quat_exp(w)), atol=1e-12)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_rot_to_quat_all_branches(rng):
    # exercise angles near 0, pi/2, pi on all axes
    for axis in np.eye(3):
        for ang in [1e-9, 0.5, np.pi / 2, np.pi - 1e-7, np.pi - 1e-3]:
            R = se3.rot_exp(axis * ang)
            q = se3.rot_to_quat(R)
            np.testing.assert_allclose(se3.quat_to_rot(q), R, atol=1e-7)
    q = random_quat(rng, (64,))
    q_canon = np.where(q[..., :1] < 0, -q, q)  # q and -q are the same rotation
    np.testing.assert_allclose(se3.rot_to_quat(se3.quat_to_rot(q)), q_canon, atol=1e-9)


def test_quat_mul_is_rotation_composition(rng):
    q1, q2 = random_quat(rng), random_quat(rng)
    np.testing.assert_allclose(
        se3.quat_to_rot(se3.quat_mul(q1, q2)),
        se3.quat_to_rot(q1) @ se3.quat_to_rot(q2),
        atol=1e-12,
    )


def test_so3_jr_finite_difference(rng):
    w = rng.normal(size=3)
    Jr = se3.so3_jr(w)
    eps = 1e-6
    for k in range(3):
        d = np.zeros(3)
        d[k] = eps
        # exp(w + d) ~ exp(w) exp(Jr d)
        lhs = se3.rot_log(se3.rot_exp(w).T @ se3.rot_exp(w + d))
        np.testing.assert_allclose(lhs / eps, Jr[:, k], atol=1e-5)


def test_so3_jlog_inverse_of_jr(rng):
    w = rng.normal(size=3) * 0.8
    np.testing.assert_allclose(se3.so3_jlog(w) @ se3.so3_jr(w), np.eye(3), atol=1e-9)


def test_se3_exp_log_roundtrip(rng):
    xi = rng.normal(size=(32, 6))
    xi[:, 3:] *= 0.9
    T = se3.se3_exp(xi)
    np.testing.assert_allclose(se3.se3_log(T), xi, atol=1e-9)
    np.testing.assert_allclose(se3.se3_inv(T) @ T, np.broadcast_to(np.eye(4), T.shape), atol=1e-12)


def test_se3_adjoint_transforms_twists(rng):
    xi = rng.normal(size=6) * 0.3
    T = se3.se3_exp(rng.normal(size=6))
    # T exp(xi) T^-1 == exp(Ad_T xi)
    lhs = T @ se3.se3_exp(xi) @ se3.se3_inv(T)
    rhs = se3.se3_exp(se3.se3_adjoint(T) @ xi)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_jlog6_consistency(rng):
    T = se3.se3_exp(rng.normal(size=(5, 6)) * 0.5)
    J = se3.jlog6(T)
    eps = 1e-7
    for k in range(6):
        d = np.zeros(6)
        d[k] = eps
        fd = (se3.se3_log(T @ se3.se3_exp(d)) - se3.se3_log(T)) / eps
        np.testing.assert_allclose(fd, J[..., :, k], atol=1e-5)
