import numpy as np
import pytest

from wbmpc import kino, memory
from wbmpc.kino import KinoSpace, ModelConstants
from wbmpc.memory import (Mlp, MemoryModel, MotionDataset, PcaModel, RbfBasis,
                          SamplerConfig, TrainingConfig)


# ---------------------------------------------------------------------------
# RBF


def make_smooth_trajs(rng, n_traj=20, n_nodes=61, dims=4):
    t = np.linspace(0, 1, n_nodes)[:, None]
    out = []
    for _ in range(n_traj):
        coef = rng.normal(size=(4, dims))
        traj = coef[0] + coef[1] * t + coef[2] * np.sin(2 * np.pi * t) + coef[3] * np.cos(3 * t)
        out.append(traj)
    return out


def test_rbf_in_span_recovery(rng):
    basis = RbfBasis(n_nodes=61, n_basis=55)
    w_true = rng.normal(size=(55, 3))
    traj = basis.reconstruct(w_true)
    w_fit = basis.fit(traj)
    assert np.max(np.abs(basis.reconstruct(w_fit) - traj)) < 1e-10


def test_rbf_r_squared_on_smooth_trajectories(rng):
    trajs = make_smooth_trajs(rng)
    basis = RbfBasis.tuned(61, trajs, n_basis=55)
    for traj in trajs:
        assert basis.r_squared(traj) >= 0.999


def test_rbf_matches_dense_least_squares(rng):
    basis = RbfBasis(n_nodes=61, n_basis=30)
    traj = rng.normal(size=(61, 2))
    w = basis.fit(traj)
    # brute-force normal equations
    Phi = basis.design
    w_ne = np.linalg.solve(Phi.T @ Phi, Phi.T @ traj)
    np.testing.assert_allclose(w, w_ne, atol=1e-8)
    res = np.sum((basis.reconstruct(w) - traj) ** 2)
    res_ne = np.sum((Phi @ w_ne - traj) ** 2)
    assert res == pytest.approx(res_ne, rel=1e-10)


def test_rbf_validation():
    with pytest.raises(ValueError):
        RbfBasis(n_nodes=61, n_basis=1)
    with pytest.raises(ValueError):
        RbfBasis(n_nodes=61, n_basis=55, sd=-1.0)
    with pytest.raises(ValueError):
        RbfBasis(n_nodes=10, n_basis=55)  # rank deficient: more bumps than nodes


# ---------------------------------------------------------------------------
# PCA


def test_pca_exact_on_low_rank_data(rng):
    basis_vecs = rng.normal(size=(5, 40))
    data = rng.normal(size=(100, 5)) @ basis_vecs + rng.normal(size=40)
    model = PcaModel.fit(data, 8)
    rec = model.reconstruct(model.project(data))
    assert np.max(np.abs(rec - data)) < 1e-8


def test_pca_explained_variance_monotone(rng):
    data = rng.normal(size=(50, 20)) * np.linspace(5, 0.1, 20)
    model = PcaModel.fit(data, 10)
    assert np.all(np.diff(model.explained_variance) <= 1e-12)


def test_pca_matches_eigendecomposition_oracle(rng):
    data = rng.normal(size=(60, 12))
    k = 5
    model = PcaModel.fit(data, k)
    centered = data - data.mean(axis=0)
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    top = evecs[:, ::-1][:, :k]
    proj_oracle = centered @ top @ top.T + data.mean(axis=0)
    rec = model.reconstruct(model.project(data))
    np.testing.assert_allclose(np.sum((rec - data) ** 2), np.sum((proj_oracle - data) ** 2), rtol=1e-10)


def test_pca_orthonormal_invariant(rng):
    model = PcaModel.fit(rng.normal(size=(30, 10)), 4)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(4), atol=1e-10)
    with pytest.raises(ValueError):
        PcaModel(np.zeros(3), np.array([[1.0, 0, 0], [1.0, 0, 0]]))


def test_pca_insufficient_samples(rng):
    with pytest.raises(ValueError):
        PcaModel.fit(rng.normal(size=(5, 10)), 8)


# ---------------------------------------------------------------------------
# MLP


def test_mlp_fits_constant_targets(rng):
    X = rng.normal(size=(24, 6))
    Y = np.tile([1.5, -2.0], (24, 1))
    net = Mlp.init(6, 16, 2, X.mean(0), X.std(0), 0.01, rng)
    cfg = TrainingConfig(hidden=16, epochs=800, learning_rate=2e-2, batch_size=24)
    net.train(X, Y, cfg, rng)
    assert net.mse(X, Y) < 1e-6


def test_mlp_training_reduces_loss(rng):
    X = rng.normal(size=(40, 5))
    Y = np.column_stack([np.sin(X[:, 0]), X[:, 1] * X[:, 2]])
    net = Mlp.init(5, 32, 2, X.mean(0), X.std(0), 0.01, rng)
    cfg = TrainingConfig(hidden=32, epochs=500, learning_rate=5e-3, batch_size=10)
    losses = net.train(X, Y, cfg, rng)
    assert losses[-1] < losses[0] / 10.0


# ---------------------------------------------------------------------------
# dataset container


def make_dataset(rng, n=12, n_nodes=8, nx=10, input_dim=7):
    ticks = rng.integers(0, 3, size=n)
    return MotionDataset(ticks, rng.normal(size=(n, input_dim)),
                         rng.normal(size=(n, n_nodes, nx)),
                         {"joint_pos": 0.1}, {"attempted": n, "stored": n, "discarded": 0}, n_nodes)


def test_dataset_roundtrip(tmp_path, rng):
    ds = make_dataset(rng)
    path = tmp_path / "data.bin"
    ds.save(str(path))
    loaded = MotionDataset.load(str(path))
    np.testing.assert_array_equal(loaded.ticks, ds.ticks)
    np.testing.assert_array_equal(loaded.inputs, ds.inputs)
    np.testing.assert_array_equal(loaded.targets, ds.targets)
    assert loaded.counts == ds.counts


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"NOTADATASET")
    with pytest.raises(ValueError):
        MotionDataset.load(str(path))


def test_dataset_csv_export(tmp_path, rng):
    ds = make_dataset(rng)
    path = tmp_path / "data.csv"
    ds.export_csv(str(path))
    table = np.genfromtxt(path, delimiter=",", names=True)
    assert len(table) == len(ds)


def test_dataset_accounting():
    counts = {"attempted": 10, "stored": 8, "discarded": 2}
    assert counts["stored"] + counts["discarded"] == counts["attempted"]


# ---------------------------------------------------------------------------
# perturbation sampler


def test_sampled_state_is_consistent(biped, rng):
    consts = ModelConstants.from_model(biped, dt=0.02)
    space = KinoSpace(biped)
    x_nom = kino.consistent_state(biped, consts, space, biped.nominal_q, np.zeros(space.nv),
                                  p_xy=(0.0, 0.0))
    sampler = SamplerConfig()
    x = memory.sample_perturbed_state(biped, consts, space, x_nom, sampler, rng)
    # the pendulum entries must match the sampled kinematics exactly
    q, dq = x[space.sl_q], x[space.sl_dq]
    A, h, _ = biped.centroidal_momentum(q, dq)
    com = kino.alg.com_position(biped, q[None])[0]
    np.testing.assert_allclose(x[space.sl_lip][0:2], com[:2], atol=1e-12)
    np.testing.assert_allclose(x[space.sl_lip][2:4], h[0:2] / consts.m, atol=1e-12)
    np.testing.assert_allclose(x[space.sl_lip][6:8], h[3:5], atol=1e-12)
    # shoulders untouched by default
    for name in ("right_shoulder_pitch", "left_shoulder_roll"):
        k = biped.actuated_v_index(name) - 6
        assert x[space.sl_q][7 + k] == biped.nominal_q[7 + k]


def test_zero_ranges_reproduce_nominal(biped, rng):
    consts = ModelConstants.from_model(biped, dt=0.02)
    space = KinoSpace(biped)
    x_nom = kino.consistent_state(biped, consts, space, biped.nominal_q, np.zeros(space.nv),
                                  p_xy=(0.0, 0.0))
    sampler = SamplerConfig(joint_pos=0.0, joint_vel=0.0, com_pos=0.0, com_vel=0.0, zmp=0.0)
    x = memory.sample_perturbed_state(biped, consts, space, x_nom, sampler, rng)
    np.testing.assert_allclose(x, x_nom, atol=1e-12)


# ---------------------------------------------------------------------------
# control recovery and end-to-end prediction


def test_recover_controls_inverts_integrator(biped, rng):
    consts = ModelConstants.from_model(biped, dt=0.02)
    space = KinoSpace(biped)
    x = kino.consistent_state(biped, consts, space, biped.nominal_q,
                              rng.normal(size=space.nv) * 0.1, p_xy=(0.01, 0.0))
    U_true = rng.uniform(-0.5, 0.5, size=(10, space.nu))
    X = np.empty((11, space.nx))
    X[0] = x
    for i in range(10):
        X[i + 1] = kino.integrate(space, consts, X[i], U_true[i])
    lo = np.full(space.nu, -50.0)
    hi = np.full(space.nu, 50.0)
    U_rec = memory.recover_controls(X, consts.dt, space, lo, hi)
    np.testing.assert_allclose(U_rec, U_true, atol=1e-10)
    # rolling the recovered controls reproduces the states
    x_roll = X[0]
    for i in range(10):
        x_roll = kino.integrate(space, consts, x_roll, U_rec[i])
    np.testing.assert_allclose(x_roll, X[10], atol=1e-9)


def synthetic_trained_memory(biped, rng, n_ticks=2, per_tick=30):
    """Train a tiny memory on synthetic rollouts (solver-free)."""
    consts = ModelConstants.from_model(biped, dt=0.02)
    space = KinoSpace(biped)
    n_nodes = 13
    ticks, inputs, targets = [], [], []
    for tick in range(n_ticks):
        for _ in range(per_tick):
            q = biped.nominal_q.copy()
            q[7:] += rng.uniform(-0.05, 0.05, biped.nact)
            dq = rng.uniform(-0.2, 0.2, space.nv)
            x = kino.consistent_state(biped, consts, space, q, dq, p_xy=rng.uniform(-0.02, 0.02, 2))
            U = 0.2 * np.sin(0.1 * np.arange(n_nodes - 1))[:, None] * np.ones(space.nu)
            X = np.empty((n_nodes, space.nx))
            X[0] = x
            for i in range(n_nodes - 1):
                X[i + 1] = kino.integrate(space, consts, X[i], U[i])
            ticks.append(tick)
            inputs.append(np.concatenate([x[space.sl_q], x[space.sl_dq], x[space.sl_lip][4:6]]))
            targets.append(X)
    ds = MotionDataset(ticks, inputs, np.array(targets), {}, {}, n_nodes)
    cfg = TrainingConfig(n_basis=10, n_components=12, epochs=150, seed=3)
    mem = memory.train(ds, space, cfg,
                       meta_extra={"dt": consts.dt,
                                   "u_min": (-50 * np.ones(space.nu)).tolist(),
                                   "u_max": (50 * np.ones(space.nu)).tolist()})
    return mem, ds, space, consts


def test_memory_train_predict_and_serialize(biped, rng, tmp_path):
    mem, ds, space, consts = synthetic_trained_memory(biped, rng)
    x_t = ds.targets[0][0]
    X, U = mem.predict(x_t, 0, space)
    assert X.shape == (ds.n_nodes, space.nx)
    np.testing.assert_array_equal(X[0], x_t)
    # quaternions renormalized
    np.testing.assert_allclose(np.linalg.norm(X[:, 3:7], axis=1), 1.0, atol=1e-12)
    with pytest.raises(KeyError):
        mem.predict(x_t, 99, space)

    path = tmp_path / "memory.json"
    mem.save(str(path))
    loaded = MemoryModel.load(str(path))
    X2, U2 = loaded.predict(x_t, 0, space)
    np.testing.assert_array_equal(X, X2)
    np.testing.assert_array_equal(U, U2)


def test_memory_modularity(biped, rng):
    # nets for distinct (tick, group) share no parameters
    mem, ds, space, consts = synthetic_trained_memory(biped, rng)
    keys = list(mem.nets)
    assert len(keys) == len(set(keys))
    ids = [id(p) for net in mem.nets.values() for p in (net.W1, net.b1, net.W2, net.b2)]
    assert len(ids) == len(set(ids))


def test_memory_per_group_metrics_reported(biped, rng):
    mem, *_ = synthetic_trained_memory(biped, rng)
    for g in memory.GROUPS:
        assert mem.metrics["per_group_val_mse"][g] is not None


def test_uncovered_tick_raises(biped, rng):
    consts = ModelConstants.from_model(biped, dt=0.02)
    space = KinoSpace(biped)
    ds = MotionDataset([0], [np.zeros(space.nq + space.nv + 2)],
                       np.zeros((1, 5, space.nx)), {}, {}, 5)
    with pytest.raises(ValueError):
        memory.train(ds, space, TrainingConfig(min_samples_per_tick=2))
