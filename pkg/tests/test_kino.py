import numpy as np
import pytest

from wbmpc import kino, se3
from wbmpc.kino import KinoSpace, ModelConstants


@pytest.fixture(scope="module")
def setup(biped):
    consts = ModelConstants.from_model(biped, dt=0.02)
    return biped, consts, KinoSpace(biped)


def random_state(space, rng):
    q = space.model.random_configuration(rng)
    dq = rng.normal(size=space.nv) * 0.4
    lip = rng.normal(size=8) * 0.3
    return space.pack(q, dq, lip)


def test_constants_validate():
    with pytest.raises(ValueError):
        ModelConstants(g=-1, z_c=0.8, m=100, dt=0.02)
    with pytest.raises(ValueError):
        ModelConstants(g=9.81, z_c=0.8, m=100, dt=0.0)


def test_state_dimension(setup):
    model, consts, space = setup
    assert space.nx == model.nq + model.nv + 8
    assert space.ndx == 2 * model.nv + 8
    assert space.nu == model.nv + 4


def test_add_diff_roundtrip(setup, rng):
    _, _, space = setup
    x = random_state(space, rng)
    dx = rng.normal(size=space.ndx) * 0.2
    np.testing.assert_allclose(space.diff(x, space.add(x, dx)), dx, atol=1e-10)


# ---------------------------------------------------------------------------
# pendulum dynamics


def test_lipfm_equilibrium(setup):
    _, consts, space = setup
    lip = np.zeros(8)
    lip[0] = lip[4] = 0.3  # x == px
    xdd, ydd = kino.lipfm_accel(lip, np.zeros(4), consts)
    assert xdd == 0.0 and ydd == 0.0


def test_lipfm_unit_flywheel_torque(setup):
    _, consts, space = setup
    lip = np.zeros(8)
    u = np.zeros(4)
    u[3] = consts.m * consts.z_c  # tau_y
    xdd, _ = kino.lipfm_accel(lip, u, consts)
    assert xdd == pytest.approx(-1.0, abs=1e-12)


def test_lipfm_reference_numbers():
    consts = ModelConstants(g=9.81, z_c=0.8, m=100.0, dt=0.02)
    lip = np.zeros(8)
    lip[0] = 0.1  # x - px = 0.1
    xdd, _ = kino.lipfm_accel(lip, np.zeros(4), consts)
    assert xdd == pytest.approx(1.22625, abs=1e-12)


def test_integrate_fixed_point(setup):
    model, consts, space = setup
    q = model.nominal_q
    lip = np.zeros(8)
    x = space.pack(q, np.zeros(space.nv), lip)
    np.testing.assert_allclose(kino.integrate(space, consts, x, np.zeros(space.nu)), x, atol=1e-15)


def lip_closed_form(consts, x0, xd0, p, t):
    w = consts.omega
    c, s = np.cosh(w * t), np.sinh(w * t)
    return p + (x0 - p) * c + xd0 / w * s, (x0 - p) * w * s + xd0 * c


def _endpoint_error(model, space, dt, steps):
    # 3 mm initial COM offset: the unstable cosh mode grows by e^(omega t),
    # so the tolerance scale is tied to a perturbation-sized amplitude
    consts = ModelConstants.from_model(model, dt=dt)
    x = space.pack(model.nominal_q, np.zeros(space.nv), np.zeros(8))
    x[space.sl_lip][0] = 0.003  # sets x with p = 0
    lip0 = x[space.sl_lip].copy()
    for _ in range(steps):
        x = kino.integrate(space, consts, x, np.zeros(space.nu))
    xa, xda = lip_closed_form(consts, lip0[0], lip0[2], 0.0, dt * steps)
    assert abs(x[space.sl_lip][2] - xda) < 3 * abs(x[space.sl_lip][0] - xa) + 1e-9
    return abs(x[space.sl_lip][0] - xa)


def test_integrate_matches_lip_closed_form(setup):
    model, _, space = setup
    err = _endpoint_error(model, space, 0.02, 50)
    assert err < 2e-3
    err_half = _endpoint_error(model, space, 0.01, 100)
    assert err_half == pytest.approx(err / 2, rel=0.2)


def test_flywheel_momentum_linear_growth(setup):
    model, consts, space = setup
    x = space.pack(model.nominal_q, np.zeros(space.nv), np.zeros(8))
    u = np.zeros(space.nu)
    u[space.cl_tau][0] = 2.5
    for _ in range(10):
        x = kino.integrate(space, consts, x, u)
    assert x[space.sl_lip][6] == pytest.approx(10 * consts.dt * 2.5, abs=1e-14)


def test_integrate_dt_consistency(setup, rng):
    model, _, space = setup
    x0 = random_state(space, rng)
    u = rng.normal(size=space.nu) * 0.1
    c1 = ModelConstants.from_model(model, dt=0.02)
    c2 = ModelConstants.from_model(model, dt=0.01)
    xa = kino.integrate(space, c1, x0, u)
    xb = kino.integrate(space, c2, kino.integrate(space, c2, x0, u), u)
    # halving dt & doubling steps moves the endpoint by O(dt)
    assert np.max(np.abs(space.diff(xa, xb))) < 0.02


# ---------------------------------------------------------------------------
# coupling residuals


def consistent_setup(setup, rng, contacts=("right_foot", "left_foot")):
    model, consts, space = setup
    q = model.nominal_q.copy()
    q[7:] += rng.normal(size=model.nact) * 0.1
    qv = rng.normal(size=model.nv) * 0.2
    x = kino.consistent_state(model, consts, space, q, qv, p_xy=(0.01, 0.0))
    tau = rng.normal(size=2) * 5.0
    u = kino.consistent_control(model, consts, space, q, qv, tau)
    placements, _ = model.forward_kinematics(q)
    targets = {c: placements[c] for c in contacts}
    return x, u, targets


def test_residuals_vanish_on_consistent_state(setup, rng):
    model, consts, space = setup
    # the COM-height row measures deviation from z_c, which the random pose
    # changes; verify every other row vanishes and that row equals the offset
    x, u, targets = consistent_setup(setup, rng)
    r = kino.fkm_residuals(model, consts, space, x, u, targets)
    com_z = kino.alg.com_position(model, x[None, space.sl_q])[0, 2]
    mask = np.ones(kino.R_DIM, dtype=bool)
    mask[kino.R_COM.start + 2] = False
    assert np.max(np.abs(r[mask])) < 1e-10
    assert r[kino.R_COM.start + 2] == pytest.approx(com_z - consts.z_c, abs=1e-12)


def test_residual_com_linearity(setup, rng):
    model, consts, space = setup
    x, u, targets = consistent_setup(setup, rng)
    delta = 0.017
    x2 = x.copy()
    x2[space.sl_lip.start + 0] += delta
    r1 = kino.fkm_residuals(model, consts, space, x, u, targets)
    r2 = kino.fkm_residuals(model, consts, space, x2, u, targets)
    assert r2[kino.R_COM.start] - r1[kino.R_COM.start] == pytest.approx(-delta, abs=1e-12)


def test_swing_foot_rows_are_zero(setup, rng):
    model, consts, space = setup
    x, u, targets = consistent_setup(setup, rng, contacts=("right_foot",))
    r = kino.fkm_residuals(model, consts, space, x, u, targets)
    np.testing.assert_allclose(r[kino.R_FOOT["left_foot"]], 0.0)


def test_unknown_stance_key_raises(setup, rng):
    model, consts, space = setup
    x, u, targets = consistent_setup(setup, rng)
    with pytest.raises(KeyError):
        kino.fkm_residuals(model, consts, space, x, u, {"head": np.eye(4)})


@pytest.mark.parametrize("mode", ["fd", "analytic"])
def test_residual_jacobians_match_outer_fd(setup, rng, mode):
    model, consts, space = setup
    x, u, targets = consistent_setup(setup, rng)
    # move the targets off the feet so the log residual is nonzero
    targets = {k: kino.se3.se3_exp(rng.normal(size=6) * 0.05) @ v for k, v in targets.items()}
    _, _, r0, Jx, Ju = kino.dynamics_derivatives(model, consts, space, x, u, targets, mode=mode)

    eps = 1e-6
    Jx_fd = np.zeros_like(Jx)
    for k in range(space.ndx):
        d = np.zeros(space.ndx)
        d[k] = eps
        rp = kino.fkm_residuals(model, consts, space, space.add(x, d), u, targets)
        rm = kino.fkm_residuals(model, consts, space, space.add(x, -d), u, targets)
        Jx_fd[:, k] = (rp - rm) / (2 * eps)
    assert np.max(np.abs(Jx - Jx_fd)) < 1e-4

    Ju_fd = np.zeros_like(Ju)
    for k in range(space.nu):
        d = np.zeros(space.nu)
        d[k] = eps
        rp = kino.fkm_residuals(model, consts, space, x, u + d, targets)
        rm = kino.fkm_residuals(model, consts, space, x, u - d, targets)
        Ju_fd[:, k] = (rp - rm) / (2 * eps)
    assert np.max(np.abs(Ju - Ju_fd)) < 1e-4


def test_modes_agree(setup, rng):
    model, consts, space = setup
    x, u, targets = consistent_setup(setup, rng)
    targets = {k: kino.se3.se3_exp(rng.normal(size=6) * 0.03) @ v for k, v in targets.items()}
    _, _, _, Jx_fd, _ = kino.dynamics_derivatives(model, consts, space, x, u, targets, mode="fd")
    _, _, _, Jx_an, _ = kino.dynamics_derivatives(model, consts, space, x, u, targets, mode="analytic")
    assert np.max(np.abs(Jx_fd - Jx_an)) < 1e-5


# ---------------------------------------------------------------------------
# integrator derivatives


def test_integrator_jacobians_fd(setup, rng):
    model, consts, space = setup
    for _ in range(3):
        x = random_state(space, rng)
        u = rng.normal(size=space.nu) * 0.5
        Fx, Fu = kino.integrate_jacobians(space, consts, x, u)
        Fx, Fu = Fx[0], Fu[0]
        f0 = kino.integrate(space, consts, x, u)
        eps = 1e-6
        for k in range(space.ndx):
            d = np.zeros(space.ndx)
            d[k] = eps
            fp = kino.integrate(space, consts, space.add(x, d), u)
            fm = kino.integrate(space, consts, space.add(x, -d), u)
            col = space.diff(fm, fp) / (2 * eps)
            assert np.max(np.abs(col - Fx[:, k])) < 1e-7, k
        for k in range(space.nu):
            d = np.zeros(space.nu)
            d[k] = eps
            col = space.diff(kino.integrate(space, consts, x, u - d),
                             kino.integrate(space, consts, x, u + d)) / (2 * eps)
            assert np.max(np.abs(col - Fu[:, k])) < 1e-7, k


def test_integrator_jacobian_lip_entries(setup):
    model, consts, space = setup
    x = space.pack(model.nominal_q, np.zeros(space.nv), np.zeros(8))
    Fx, Fu = kino.integrate_jacobians(space, consts, x, np.zeros(space.nu))
    dt, w2 = consts.dt, consts.omega2
    i0 = space.tl_lip.start
    assert Fx[0, i0, i0] == pytest.approx(1 + w2 * dt**2)
    # pdot_x feeds only the px row, with gain dt
    col = Fu[0, :, space.cl_pdot.start]
    assert col[i0 + 4] == pytest.approx(dt)
    col_rest = col.copy()
    col_rest[i0 + 4] = 0.0
    np.testing.assert_allclose(col_rest, 0.0)
