import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wbmpc import gait
from wbmpc.gait import DSP, LF, LF_SSP, RF, RF_SSP, GaitParams


def make_feet(width=0.2, x0=0.0):
    T_rf, T_lf = np.eye(4), np.eye(4)
    T_rf[:3, 3] = [x0, -width / 2, 0.0]
    T_lf[:3, 3] = [x0, width / 2, 0.0]
    return {RF: T_rf, LF: T_lf}


@pytest.fixture()
def schedule():
    return gait.build_schedule(GaitParams(n_steps=4), make_feet(), terminal_hold=1.5)


def test_params_validation():
    with pytest.raises(ValueError):
        GaitParams(step_time=-1.0)
    with pytest.raises(ValueError):
        GaitParams(dsp_ratio=1.0)
    with pytest.raises(ValueError):
        gait.build_schedule(GaitParams(n_steps=0), make_feet())


def test_dsp_ssp_durations(schedule):
    # 1 s steps at a 1:4 DSP:SSP split
    for ph in schedule.phases[:-1]:
        if ph.kind == DSP:
            assert ph.duration == pytest.approx(0.2)
        else:
            assert ph.duration == pytest.approx(0.8)


def test_minimal_schedule_phase_count():
    s = gait.build_schedule(GaitParams(n_steps=1), make_feet())
    assert len(s.phases) == 3  # DSP, SSP, terminal DSP
    assert s.phases[-1].kind == DSP


def test_footsteps_form_arithmetic_sequence(schedule):
    events = []
    for foot in (RF, LF):
        times, mats = schedule._placements[foot]
        events += [(t, m[0, 3]) for t, m in zip(times[1:], mats[1:])]
    xs = [x for _, x in sorted(events)]
    np.testing.assert_allclose(np.diff(xs), 0.10, atol=1e-12)


@given(
    step_time=st.floats(0.4, 2.0),
    dsp_ratio=st.floats(0.05, 0.6),
    n_steps=st.integers(1, 8),
)
@settings(max_examples=40, deadline=None)
def test_phases_tile_without_gaps(step_time, dsp_ratio, n_steps):
    params = GaitParams(step_time=step_time, dsp_ratio=dsp_ratio, n_steps=n_steps)
    s = gait.build_schedule(params, make_feet(), terminal_hold=0.7)
    assert s.phases[0].t0 == 0.0
    for a, b in zip(s.phases[:-1], s.phases[1:]):
        assert a.t1 == pytest.approx(b.t0, abs=1e-12)
    assert s.duration == pytest.approx(n_steps * step_time + 0.7)
    for ph in s.phases:
        if ph.kind == DSP:
            assert set(ph.contacts) == {RF, LF}
        else:
            assert len(ph.contacts) == 1


def test_zmp_reference_cases(schedule):
    # DSP midpoint with the initial symmetric stance
    np.testing.assert_allclose(gait.zmp_reference(schedule, 0.1), [0.0, 0.0], atol=1e-12)
    # SSP pins the stance-foot center exactly
    ph = schedule.phases[1]
    assert ph.kind == LF_SSP
    t = 0.5 * (ph.t0 + ph.t1)
    np.testing.assert_allclose(gait.zmp_reference(schedule, t), schedule.foot_center(LF, t), atol=1e-15)


def test_zmp_reference_zero_order_hold(schedule):
    for ph in schedule.phases:
        t1, t2 = ph.t0 + 0.01, ph.t1 - 0.01
        np.testing.assert_allclose(gait.zmp_reference(schedule, t1), gait.zmp_reference(schedule, t2), atol=1e-15)


def test_zmp_reference_out_of_range(schedule):
    with pytest.raises(ValueError):
        gait.zmp_reference(schedule, -0.1)
    with pytest.raises(ValueError):
        gait.zmp_reference(schedule, schedule.duration + 1.0)


def test_support_polygon_rectangle_arithmetic():
    # stance rectangle from a known center and half extents
    feet = make_feet()
    feet[RF][:3, 3] = [0.1, -0.1, 0.0]
    # left foot swings first, so the right foot still sits at its initial spot
    s = gait.build_schedule(GaitParams(n_steps=2, foot_half_extents=(0.12, 0.06)), feet, first_swing=LF)
    ph = next(p for p in s.phases if p.kind == RF_SSP)
    t = 0.5 * (ph.t0 + ph.t1)
    p_l, p_u = gait.support_polygon(s, t)
    np.testing.assert_allclose(p_l, [-0.02, -0.16], atol=1e-12)
    np.testing.assert_allclose(p_u, [0.22, -0.04], atol=1e-12)


def test_support_polygon_dsp_contains_both_feet(schedule):
    p_l, p_u = gait.support_polygon(schedule, 0.1)
    he = np.asarray(schedule.params.foot_half_extents)
    for foot in (RF, LF):
        c = schedule.foot_center(foot, 0.1)
        assert np.all(c - he >= p_l - 1e-12)
        assert np.all(c + he <= p_u + 1e-12)


def test_reference_always_inside_polygon(schedule):
    for t in np.linspace(0.0, schedule.duration, 400):
        p = gait.zmp_reference(schedule, t)
        p_l, p_u = gait.support_polygon(schedule, t)
        assert np.all(p >= p_l - 1e-12) and np.all(p <= p_u + 1e-12)


def test_alpha_c_cases(schedule):
    assert gait.alpha_c(schedule, 0.1) == pytest.approx(0.5)  # mid-DSP
    ssp = schedule.phases[1]
    assert gait.alpha_c(schedule, ssp.t0 + 0.3) == pytest.approx(1.0)  # LF stance
    rf_ssp = next(p for p in schedule.phases if p.kind == RF_SSP)
    assert gait.alpha_c(schedule, rf_ssp.t0 + 0.3) == pytest.approx(0.0)


def test_alpha_c_interpolation_window(schedule):
    rf_ssp = next(p for p in schedule.phases if p.kind == RF_SSP)
    # halfway through the 0.02 s window before RF-SSP (0.0) -> DSP (0.5)
    assert gait.alpha_c(schedule, rf_ssp.t1 - 0.01) == pytest.approx(0.25)


def test_alpha_c_continuity(schedule):
    ts = np.linspace(0.0, schedule.duration, 4001)
    a = np.array([gait.alpha_c(schedule, t) for t in ts])
    assert np.max(np.abs(np.diff(a))) < 0.52 * (ts[1] - ts[0]) / gait.ALPHA_BLEND + 1e-9


def test_contact_force_reference():
    frf, flf = gait.contact_force_reference(0.5, 100.0, 9.81)
    assert frf == pytest.approx(490.5) and flf == pytest.approx(490.5)
    assert gait.contact_force_reference(0.0, 80.0, 9.81) == (80.0 * 9.81, 0.0)
    with pytest.raises(ValueError):
        gait.contact_force_reference(1.2, 100.0, 9.81)


@given(alpha=st.floats(0.0, 1.0))
@settings(max_examples=30, deadline=None)
def test_force_reference_partitions_weight(alpha):
    frf, flf = gait.contact_force_reference(alpha, 95.0, 9.81)
    assert frf + flf == pytest.approx(95.0 * 9.81, rel=1e-12)


def test_swing_trajectory_boundary_conditions(schedule):
    ssp = schedule.phases[1]  # LF stance, RF swings
    T_start = gait.swing_trajectory(schedule, ssp.t0)[RF]
    np.testing.assert_allclose(T_start, schedule.placement(RF, ssp.t0), atol=1e-12)
    T_end = gait.swing_trajectory(schedule, ssp.t1 - 1e-12)[RF]
    np.testing.assert_allclose(T_end[:3, 3], schedule.placement(RF, ssp.t1 + 1e-9)[:3, 3], atol=1e-6)


def test_swing_trajectory_apex_and_end_velocities(schedule):
    ssp = schedule.phases[1]
    t_mid = 0.5 * (ssp.t0 + ssp.t1)
    z_mid = gait.swing_trajectory(schedule, t_mid)[RF][2, 3]
    assert z_mid == pytest.approx(schedule.params.swing_apex_height, abs=1e-12)
    eps = 1e-7
    for t_edge in (ssp.t0, ssp.t1):
        za = gait.swing_trajectory(schedule, np.clip(t_edge - eps, ssp.t0, ssp.t1))[RF][2, 3]
        zb = gait.swing_trajectory(schedule, np.clip(t_edge + eps, ssp.t0, ssp.t1))[RF][2, 3]
        assert abs(zb - za) / eps < 1e-5


def test_swing_stance_feet_hold_placements(schedule):
    ssp = schedule.phases[1]
    t = 0.5 * (ssp.t0 + ssp.t1)
    np.testing.assert_allclose(gait.swing_trajectory(schedule, t)[LF], schedule.placement(LF, t), atol=1e-15)


# ---------------------------------------------------------------------------
# capture point


def test_cp_static_stance_equals_reference():
    s = gait.build_schedule(GaitParams(n_steps=1), make_feet(), terminal_hold=6.0)
    ref = gait.CpReference(s, omega=3.2)
    # deep inside the long terminal hold the CP has settled onto the ZMP
    t = s.duration - 0.05
    np.testing.assert_allclose(ref(t), gait.zmp_reference(s, t), atol=1e-6)


def test_cp_fallback_converges_toward_final_zmp(schedule):
    ref = gait.CpReference(schedule, omega=3.2)
    p_end = gait.zmp_reference(schedule, schedule.duration)
    d0 = np.linalg.norm(ref(0.0) - gait.zmp_reference(schedule, 0.0))
    dT = np.linalg.norm(ref(schedule.duration) - p_end)
    assert dT < d0 or dT < 1e-9


def test_cp_satisfies_dcm_dynamics(schedule):
    ref = gait.CpReference(schedule, omega=3.2)
    ph = schedule.phases[2]
    t = 0.5 * (ph.t0 + ph.t1)
    eps = 1e-6
    xidot = (ref(t + eps) - ref(t - eps)) / (2 * eps)
    expected = 3.2 * (ref(t) - gait.zmp_reference(schedule, t))
    np.testing.assert_allclose(xidot, expected, atol=1e-5)


def test_cp_file_roundtrip(tmp_path, schedule):
    ts = np.arange(0.0, schedule.duration, 0.02)
    ref = gait.CpReference(schedule, omega=3.2)
    rows = np.array([[t, *ref(t)] for t in ts])
    path = tmp_path / "cp.csv"
    np.savetxt(path, rows, delimiter=",", header="t,xi_x,xi_y", comments="")
    loaded = gait.CpReference.from_file(schedule, omega=3.2, path=str(path))
    for i in (0, 5, len(ts) - 1):
        np.testing.assert_array_equal(loaded(ts[i]), rows[i, 1:])


def test_cp_file_missing_raises(schedule):
    with pytest.raises(FileNotFoundError):
        gait.CpReference.from_file(schedule, omega=3.2, path="/nonexistent/cp.csv")
