import numpy as np
import pytest

from wbmpc import ddp, gait, kino, ocp
from wbmpc.ddp import DdpSolver, SolverSettings, box_qp
from wbmpc.kino import KinoSpace, ModelConstants
from wbmpc.ocp import CostWeights

from _toy_problems import LqrProblem, double_integrator


# ---------------------------------------------------------------------------
# box QP


def test_box_qp_unconstrained_matches_solve(rng):
    n = 8
    A = rng.normal(size=(n, n))
    H = A @ A.T + n * np.eye(n)
    g = rng.normal(size=n)
    x, free, ok = box_qp(H, g, np.full(n, -1e10), np.full(n, 1e10), np.zeros(n))
    assert ok and np.all(free)
    np.testing.assert_allclose(x, -np.linalg.solve(H, g), atol=1e-9)


def test_box_qp_kkt_conditions(rng):
    for trial in range(20):
        n = 6
        A = rng.normal(size=(n, n))
        H = A @ A.T + 0.5 * np.eye(n)
        g = rng.normal(size=n) * 3.0
        lb, ub = -np.ones(n), np.ones(n)
        x, free, ok = box_qp(H, g, lb, ub, np.zeros(n))
        assert ok
        grad = g + H @ x
        assert np.all(x >= lb - 1e-12) and np.all(x <= ub + 1e-12)
        # free coordinates are stationary, clamped ones push outward
        assert np.max(np.abs(grad[free])) < 1e-8 if np.any(free) else True
        clamped = ~free
        for i in np.flatnonzero(clamped):
            if x[i] <= lb[i] + 1e-10:
                assert grad[i] >= -1e-8
            else:
                assert grad[i] <= 1e-8


# ---------------------------------------------------------------------------
# LQR oracles


def test_unconstrained_lqr_matches_riccati():
    prob = double_integrator(N=20)
    sol = ddp.solve(prob, settings=SolverSettings(max_iters=10, tol=1e-12))
    Xr, Ur = prob.riccati_solution()
    assert sol.converged
    assert sol.iterations == 1  # one full step solves a linear-quadratic problem
    assert np.max(np.abs(sol.U - Ur)) < 1e-8
    assert np.max(np.abs(sol.X - Xr)) < 1e-8


def test_already_optimal_guess_converges_immediately():
    # cost centered on the zero-control rollout: the cold-start rollout is optimal
    prob = double_integrator(N=10, x0=(0.0, 0.0))
    sol = ddp.solve(prob, settings=SolverSettings(max_iters=5, tol=1e-9))
    assert sol.converged
    assert sol.iterations <= 1
    assert sol.expected_improvement < 1e-9


def test_box_constrained_lqr_matches_dense_qp():
    cvxpy = pytest.importorskip("cvxpy")
    prob = double_integrator(N=20, x0=(1.5, 0.0), u_min=[-2.0], u_max=[2.0])
    sol = ddp.solve(prob, settings=SolverSettings(max_iters=40, tol=1e-12))
    U_qp = prob.cvxpy_solution()
    assert np.max(np.abs(sol.U - U_qp)) < 1e-6
    # bound-active controls sit exactly at the bound
    active = np.abs(U_qp) > 2.0 - 1e-6
    assert np.any(active)
    np.testing.assert_allclose(np.abs(sol.U[active]), 2.0, atol=1e-12)
    assert np.all(sol.U >= -2.0) and np.all(sol.U <= 2.0)


def test_infeasible_warm_start_gaps_close():
    prob = double_integrator(N=15)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(prob.N + 1, prob.nx))
    X[0] = prob.x0
    U = rng.normal(size=(prob.N, prob.nu))
    sol = ddp.solve(prob, init=(X, U), settings=SolverSettings(max_iters=20, tol=1e-12))
    assert sol.converged
    assert sol.gap_norm < 1e-10
    Xr, Ur = prob.riccati_solution()
    assert np.max(np.abs(sol.U - Ur)) < 1e-7


# ---------------------------------------------------------------------------
# warm-start shifting


def test_warm_start_shift_definitional():
    prob = double_integrator(N=12)
    sol = ddp.solve(prob, settings=SolverSettings(max_iters=10, tol=1e-10))
    Xs, Us = ddp.warm_start_from(sol)
    np.testing.assert_array_equal(Xs[0], sol.X[1])
    np.testing.assert_array_equal(Xs[-1], sol.X[-1])
    np.testing.assert_array_equal(Us[:-1], sol.U[1:])
    np.testing.assert_array_equal(Us[-1], sol.U[-1])


def test_warm_start_twice_shifted_equals_shift_by_two():
    prob = double_integrator(N=12)
    sol = ddp.solve(prob, settings=SolverSettings(max_iters=10, tol=1e-10))
    X1, U1 = ddp.warm_start_from(sol)
    sol1 = ddp.DdpSolution(X=X1, U=U1, k=sol.k, K=sol.K, cost=0.0, iterations=0,
                           converged=True, stop_reason="")
    X2, U2 = ddp.warm_start_from(sol1)
    np.testing.assert_array_equal(X2[:-2], sol.X[2:])
    np.testing.assert_array_equal(U2[:-2], sol.U[2:])


# ---------------------------------------------------------------------------
# error handling and determinism


def test_bad_init_dimensions_raise():
    prob = double_integrator(N=10)
    with pytest.raises(ValueError):
        ddp.solve(prob, init=(np.zeros((5, 2)), np.zeros((10, 1))))


def test_non_finite_initial_state_raises():
    prob = double_integrator(N=10)
    X = np.tile(prob.x0, (11, 1))
    X[4] = np.nan
    with pytest.raises(FloatingPointError) as exc:
        ddp.solve(prob, init=(X, np.zeros((10, 1))))
    assert "node" in str(exc.value)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(max_iters=0)
    with pytest.raises(ValueError):
        SolverSettings(tol=0.0)


def test_determinism_bit_identical():
    prob = double_integrator(N=20, u_min=[-2.0], u_max=[2.0])
    a = ddp.solve(prob, settings=SolverSettings(max_iters=10))
    b = ddp.solve(prob, settings=SolverSettings(max_iters=10))
    assert np.array_equal(a.X, b.X) and np.array_equal(a.U, b.U)
    assert a.cost == b.cost


# ---------------------------------------------------------------------------
# on the walking problem


@pytest.fixture(scope="module")
def walking_problem(biped):
    consts = ModelConstants.from_model(biped, dt=0.02)
    space = KinoSpace(biped)
    placements, com = biped.forward_kinematics(biped.nominal_q)
    feet = {gait.RF: placements["right_foot"], gait.LF: placements["left_foot"]}
    schedule = gait.build_schedule(gait.GaitParams(n_steps=2), feet, terminal_hold=1.5, lead_in=0.6)
    cp_ref = gait.CpReference(schedule, consts.omega)
    x0 = kino.consistent_state(biped, consts, space, biped.nominal_q, np.zeros(space.nv),
                               p_xy=com[:2])
    return ocp.build_ocp(biped, schedule, cp_ref, 0.0, x0, CostWeights(), N=15, dt=0.02)


def test_walking_ocp_cost_decreases_monotonically(walking_problem):
    sol = ddp.solve(walking_problem, settings=SolverSettings(max_iters=6, tol=1e-7))
    assert sol.iterations >= 1
    hist = np.array(sol.cost_history)
    assert np.all(np.diff(hist) <= 1e-10)  # cold start has no gaps to close
    assert np.all(sol.U >= walking_problem.u_min - 1e-15)
    assert np.all(sol.U <= walking_problem.u_max + 1e-15)


def test_walking_ocp_warm_start_converges_fast(walking_problem):
    s1 = ddp.solve(walking_problem, settings=SolverSettings(max_iters=60, tol=1e-6))
    assert s1.converged
    s2 = ddp.solve(walking_problem, init=(s1.X, s1.U), settings=SolverSettings(max_iters=5, tol=1e-5))
    assert s2.converged
    assert s2.iterations <= 1
