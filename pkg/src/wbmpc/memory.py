"""Warm-start memory: compress solver trajectories and learn to predict them.

Offline, near-optimal state trajectories are collected around a nominal walk,
compressed per variable group (joint positions, joint velocities, pendulum
states) by radial-basis fitting over the horizon axis followed by PCA, and a
small two-layer network per (walking tick, group) is trained to map the
reduced measurement x_bar = [q, qv, p_x, p_y] to the reduced trajectory.

Online, the three group networks evaluate independently (they share no
parameters), the inverse PCA/RBF transforms reconstruct the state trajectory,
and the control trajectory is recovered by inverting the integrator's Euler
channels with finite differences.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from wbmpc import kino, se3

GROUPS = ("q", "dq", "lip")


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=np.float64).tobytes()).decode("ascii")


def _unb64(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype=np.float64).reshape(shape).copy()


# ---------------------------------------------------------------------------
# RBF trajectory compression


class RbfBasis:
    """Gaussian bumps over the horizon-node axis, shared by one variable group."""

    def __init__(self, n_nodes: int, n_basis: int = 55, sd: float | None = None):
        if n_basis < 2:
            raise ValueError("need at least 2 basis functions")
        self.n_nodes = n_nodes
        self.n_basis = n_basis
        spacing = (n_nodes - 1) / (n_basis - 1)
        self.means = np.linspace(0.0, n_nodes - 1, n_basis)
        self.sd = float(sd) if sd is not None else float(spacing)
        if self.sd <= 0:
            raise ValueError("sd must be > 0")
        self._update_design()

    def _update_design(self):
        t = np.arange(self.n_nodes)[:, None]
        self.design = np.exp(-0.5 * ((t - self.means[None, :]) / self.sd) ** 2)
        if np.linalg.matrix_rank(self.design) < self.n_basis:
            raise ValueError("RBF design matrix is rank deficient on the node grid")
        self._pinv = np.linalg.pinv(self.design)

    @classmethod
    def tuned(cls, n_nodes: int, trajectories, n_basis: int = 55,
              grid=(0.5, 0.75, 1.0, 1.25, 1.5, 2.0)) -> "RbfBasis":
        """Line-search the shared width over a grid, minimizing reconstruction error."""
        spacing = (n_nodes - 1) / (n_basis - 1)
        best, best_err = None, np.inf
        for mult in grid:
            try:
                basis = cls(n_nodes, n_basis, sd=mult * spacing)
            except ValueError:
                continue
            err = 0.0
            for traj in trajectories:
                w = basis.fit(traj)
                err += float(np.sum((basis.reconstruct(w) - traj) ** 2))
            if err < best_err:
                best, best_err = basis, err
        return best

    def fit(self, traj: np.ndarray) -> np.ndarray:
        """Least-squares weights, one column per trajectory dimension."""
        traj = np.asarray(traj, dtype=float)
        return self._pinv @ traj

    def reconstruct(self, weights: np.ndarray) -> np.ndarray:
        return self.design @ weights

    def r_squared(self, traj: np.ndarray) -> float:
        rec = self.reconstruct(self.fit(traj))
        ss_res = np.sum((traj - rec) ** 2)
        ss_tot = np.sum((traj - np.mean(traj, axis=0)) ** 2)
        return 1.0 - ss_res / max(ss_tot, 1e-300)


# ---------------------------------------------------------------------------
# PCA


class PcaModel:
    def __init__(self, mean: np.ndarray, components: np.ndarray):
        self.mean = mean
        self.components = components  # (n_comp, dim), orthonormal rows
        ortho = components @ components.T
        if np.max(np.abs(ortho - np.eye(len(components)))) > 1e-8:
            raise ValueError("principal components are not orthonormal")

    @classmethod
    def fit(cls, data: np.ndarray, n_components: int) -> "PcaModel":
        data = np.asarray(data, dtype=float)
        n, dim = data.shape
        if n < n_components:
            raise ValueError(f"need at least {n_components} samples, got {n}")
        mean = data.mean(axis=0)
        _, svals, Vt = np.linalg.svd(data - mean, full_matrices=False)
        n_components = min(n_components, Vt.shape[0])
        comps = Vt[:n_components].copy()
        # deterministic sign: largest-magnitude entry of each component positive
        for row in comps:
            k = np.argmax(np.abs(row))
            if row[k] < 0:
                row *= -1.0
        model = cls(mean, comps)
        var = svals**2
        model.explained_variance = var[:n_components] / max(np.sum(var), 1e-300)
        return model

    @property
    def n_components(self) -> int:
        return len(self.components)

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) @ self.components.T

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self.components + self.mean

    def r_squared(self, data: np.ndarray) -> float:
        rec = self.reconstruct(self.project(data))
        ss_res = np.sum((data - rec) ** 2)
        ss_tot = np.sum((data - data.mean(axis=0)) ** 2)
        return 1.0 - ss_res / max(ss_tot, 1e-300)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class SamplerConfig:
    joint_pos: float = 0.1     # rad, legs and waist
    joint_vel: float = 0.5     # rad/s
    com_pos: float = 0.05      # m, applied as a base x-y translation
    com_vel: float = 0.3       # m/s, base x-y velocity
    zmp: float = 0.04          # m
    include_shoulders: bool = False
    samples_per_tick: int = 6
    focus_ticks: tuple | None = None   # (first, last) tick of a denser window
    focus_multiplier: int = 3

    def counts(self, ticks) -> dict:
        out = {}
        for t in ticks:
            n = self.samples_per_tick
            if self.focus_ticks is not None and self.focus_ticks[0] <= t <= self.focus_ticks[1]:
                n *= self.focus_multiplier
            out[t] = n
        return out


class MotionDataset:
    MAGIC = b"WBMPCDS1\n"

    def __init__(self, ticks, inputs, targets, sampler: dict, counts: dict, n_nodes: int):
        self.ticks = np.asarray(ticks, dtype=int)
        self.inputs = np.asarray(inputs, dtype=float)     # (n, nq + nv + 2)
        self.targets = np.asarray(targets, dtype=float)   # (n, n_nodes, nx)
        self.sampler = sampler
        self.counts = counts  # attempted / stored / discarded
        self.n_nodes = n_nodes

    def __len__(self):
        return len(self.ticks)

    def tick_indices(self):
        return sorted(set(int(t) for t in self.ticks))

    def by_tick(self, tick: int):
        sel = self.ticks == tick
        return self.inputs[sel], self.targets[sel]

    def save(self, path: str):
        header = {
            "version": 1,
            "n": len(self),
            "n_nodes": self.n_nodes,
            "nx": int(self.targets.shape[2]),
            "input_dim": int(self.inputs.shape[1]),
            "sampler": self.sampler,
            "counts": self.counts,
        }
        with open(path, "wb") as f:
            f.write(self.MAGIC)
            f.write((json.dumps(header) + "\n").encode())
            for i in range(len(self)):
                rec = np.concatenate([[float(self.ticks[i])], self.inputs[i], self.targets[i].ravel()])
                f.write(rec.astype(np.float64).tobytes())

    @classmethod
    def load(cls, path: str) -> "MotionDataset":
        with open(path, "rb") as f:
            magic = f.read(len(cls.MAGIC))
            if magic != cls.MAGIC:
                raise ValueError(f"{path} is not a dataset file (bad magic)")
            header = json.loads(f.readline().decode())
            n, n_nodes = header["n"], header["n_nodes"]
            nx, input_dim = header["nx"], header["input_dim"]
            rec_len = 1 + input_dim + n_nodes * nx
            raw = np.frombuffer(f.read(), dtype=np.float64)
        if raw.size != n * rec_len:
            raise ValueError(f"{path} is truncated: expected {n * rec_len} floats, got {raw.size}")
        raw = raw.reshape(n, rec_len)
        return cls(raw[:, 0].astype(int), raw[:, 1: 1 + input_dim],
                   raw[:, 1 + input_dim:].reshape(n, n_nodes, nx),
                   header["sampler"], header["counts"], n_nodes)

    def export_csv(self, path: str):
        """Inputs table for inspection (targets stay in the binary container)."""
        dim = self.inputs.shape[1]
        header = "tick," + ",".join(f"xbar_{i}" for i in range(dim))
        rows = np.column_stack([self.ticks.astype(float), self.inputs])
        np.savetxt(path, rows, delimiter=",", header=header, comments="")


def sample_perturbed_state(model, consts, space, x_nom, sampler: SamplerConfig, rng):
    """Perturb a nominal composite state the way an impulse-disturbed robot
    would move: joint pose/velocity noise, a base translation and velocity
    jump, and a ZMP offset; pendulum entries are rebuilt consistently."""
    q = x_nom[space.sl_q].copy()
    dq = x_nom[space.sl_dq].copy()
    p = x_nom[space.sl_lip][4:6].copy()

    mask = np.ones(model.nact, dtype=bool)
    if not sampler.include_shoulders:
        for name in model.upper_body_joints:
            if "shoulder" in name:
                mask[model.actuated_v_index(name) - 6] = False
    q[7:][mask] += rng.uniform(-sampler.joint_pos, sampler.joint_pos, int(mask.sum()))
    q[:2] += rng.uniform(-sampler.com_pos, sampler.com_pos, 2)
    dq[6:][mask] += rng.uniform(-sampler.joint_vel, sampler.joint_vel, int(mask.sum()))
    dq[:2] += rng.uniform(-sampler.com_vel, sampler.com_vel, 2)
    p += rng.uniform(-sampler.zmp, sampler.zmp, 2)
    return kino.consistent_state(model, consts, space, q, dq, p)


def collect_dataset(nominal: dict, build_problem, solve, sampler: SamplerConfig,
                    model, consts, space, rng, max_failure_ratio: float = 0.5) -> MotionDataset:
    """Sample perturbed states around the nominal pass and solve each to high
    accuracy.

    nominal: tick -> (x_t, X, U) from a nominal closed-loop run at dataset
    tolerance; build_problem(tick, x0) -> OcpProblem; solve(problem, init) ->
    solution with .converged/.X.  Failed solves are discarded and counted;
    more than max_failure_ratio failures aborts with diagnostics.
    """
    ticks = sorted(nominal.keys())
    counts = sampler.counts(ticks)
    rows_t, rows_x, rows_T = [], [], []
    attempted = stored = 0
    for tick in ticks:
        x_nom, X_nom, U_nom = nominal[tick]
        for _ in range(counts[tick]):
            attempted += 1
            x = sample_perturbed_state(model, consts, space, x_nom, sampler, rng)
            problem = build_problem(tick, x)
            sol = solve(problem, (X_nom, U_nom))
            if not sol.converged:
                continue
            stored += 1
            rows_t.append(tick)
            rows_x.append(np.concatenate([x[space.sl_q], x[space.sl_dq], x[space.sl_lip][4:6]]))
            rows_T.append(sol.X)
    discarded = attempted - stored
    if attempted and discarded / attempted > max_failure_ratio:
        raise RuntimeError(
            f"sampler ranges too aggressive: {discarded}/{attempted} solves failed to converge"
        )
    return MotionDataset(rows_t, rows_x, np.array(rows_T),
                         sampler.__dict__.copy(),
                         {"attempted": attempted, "stored": stored, "discarded": discarded},
                         n_nodes=rows_T[0].shape[0] if rows_T else 0)


# ---------------------------------------------------------------------------
# modular networks


@dataclass
class TrainingConfig:
    hidden: int = 80
    lrelu_slope: float = 0.01
    epochs: int = 400
    learning_rate: float = 3e-3
    lr_decay: float = 0.1        # final learning-rate fraction, geometric schedule
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 1e-6
    final_linear_polish: bool = True  # ridge least-squares on the output layer
    val_fraction: float = 0.25
    n_components: int = 32
    n_basis: int = 55
    min_samples_per_tick: int = 2
    seed: int = 0


class Mlp:
    """One hidden layer of leaky-ReLU units, trained on standardized inputs."""

    def __init__(self, W1, b1, W2, b2, x_mean, x_std, slope: float):
        self.W1, self.b1, self.W2, self.b2 = W1, b1, W2, b2
        self.x_mean, self.x_std = x_mean, x_std
        self.slope = slope

    @classmethod
    def init(cls, n_in, n_hidden, n_out, x_mean, x_std, slope, rng):
        W1 = rng.normal(size=(n_hidden, n_in)) * np.sqrt(2.0 / n_in)
        W2 = rng.normal(size=(n_out, n_hidden)) * np.sqrt(2.0 / n_hidden)
        return cls(W1, np.zeros(n_hidden), W2, np.zeros(n_out), x_mean, x_std, slope)

    def forward(self, X):
        Xs = (X - self.x_mean) / self.x_std
        A = Xs @ self.W1.T + self.b1
        H = np.where(A > 0, A, self.slope * A)
        return H @ self.W2.T + self.b2, (Xs, A, H)

    def __call__(self, x):
        return self.forward(np.atleast_2d(x))[0][0]

    def train(self, X, Y, cfg: TrainingConfig, rng):
        n = len(X)
        # center the outputs on the target mean so the net only learns residuals
        out0, _ = self.forward(X)
        self.b2 += Y.mean(axis=0) - out0.mean(axis=0)
        vel = [np.zeros_like(p) for p in (self.W1, self.b1, self.W2, self.b2)]
        losses = []
        for epoch in range(cfg.epochs):
            lr = cfg.learning_rate * cfg.lr_decay ** (epoch / max(cfg.epochs - 1, 1))
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start: start + cfg.batch_size]
                Xb, Yb = X[idx], Y[idx]
                out, (Xs, A, H) = self.forward(Xb)
                err = out - Yb
                total += float(np.sum(err**2))
                m = len(idx)
                gW2 = 2.0 * err.T @ H / m + cfg.weight_decay * self.W2
                gb2 = 2.0 * err.sum(axis=0) / m
                dH = 2.0 * err @ self.W2
                dA = dH * np.where(A > 0, 1.0, self.slope)
                gW1 = dA.T @ Xs / m + cfg.weight_decay * self.W1
                gb1 = dA.sum(axis=0) / m
                for p, g, v in zip((self.W1, self.b1, self.W2, self.b2), (gW1, gb1, gW2, gb2), vel):
                    v *= cfg.momentum
                    v -= lr * g
                    p += v
            losses.append(total / n)
        if cfg.final_linear_polish:
            # the output layer is linear in the learned features: finish it
            # with a ridge solve (deterministic, exact for constant targets)
            _, (_, _, H) = self.forward(X)
            A = np.column_stack([H, np.ones(n)])
            lam = max(cfg.weight_decay, 1e-10) * n
            reg = lam * np.eye(A.shape[1])
            reg[-1, -1] = 0.0
            theta = np.linalg.solve(A.T @ A + reg, A.T @ Y)
            self.W2 = theta[:-1].T.copy()
            self.b2 = theta[-1].copy()
            losses.append(self.mse(X, Y))
        return losses

    def mse(self, X, Y):
        out, _ = self.forward(X)
        return float(np.mean(np.sum((out - Y) ** 2, axis=1)))


class MemoryModel:
    """Trained warm-start memory: bases, PCA models, and per-(tick, group) nets."""

    def __init__(self, model_meta: dict, bases: dict, pcas: dict, nets: dict, metrics: dict):
        self.meta = model_meta
        self.bases = bases      # group -> RbfBasis
        self.pcas = pcas        # group -> PcaModel
        self.nets = nets        # (tick, group) -> Mlp
        self.metrics = metrics

    def ticks(self):
        return sorted({t for t, _ in self.nets})

    # -- prediction -----------------------------------------------------------

    def predict(self, x_t: np.ndarray, tick: int, space: kino.KinoSpace):
        """Initial guess (X_hat, U_hat) from the measured state at a trained tick."""
        if (tick, "q") not in self.nets:
            raise KeyError(f"no trained memory for walking tick {tick}")
        xbar = np.concatenate([x_t[space.sl_q], x_t[space.sl_dq], x_t[space.sl_lip][4:6]])
        parts = {}
        for g in GROUPS:
            z = self.nets[(tick, g)](xbar)
            w = self.pcas[g].reconstruct(z).reshape(self.bases[g].n_basis, -1)
            parts[g] = self.bases[g].reconstruct(w)
        n_nodes = self.meta["n_nodes"]
        X = np.empty((n_nodes, space.nx))
        X[:, space.sl_q] = parts["q"]
        X[:, 3:7] = se3.quat_normalize(X[:, 3:7])
        X[:, space.sl_dq] = parts["dq"]
        X[:, space.sl_lip] = parts["lip"]
        X[0] = x_t

        U = recover_controls(X, self.meta["dt"], space,
                             np.asarray(self.meta["u_min"]), np.asarray(self.meta["u_max"]))
        return X, U

    # -- serialization ---------------------------------------------------------

    def save(self, path: str):
        doc = {"version": 1, "meta": self.meta, "metrics": self.metrics,
               "bases": {}, "pca": {}, "nets": {}}
        for g, b in self.bases.items():
            doc["bases"][g] = {"n_nodes": b.n_nodes, "n_basis": b.n_basis, "sd": b.sd}
        for g, p in self.pcas.items():
            doc["pca"][g] = {"mean": _b64(p.mean), "components": _b64(p.components),
                             "shape": list(p.components.shape)}
        for (tick, g), net in self.nets.items():
            doc["nets"][f"{tick}:{g}"] = {
                "W1": _b64(net.W1), "b1": _b64(net.b1), "W2": _b64(net.W2), "b2": _b64(net.b2),
                "x_mean": _b64(net.x_mean), "x_std": _b64(net.x_std),
                "shapes": [list(net.W1.shape), list(net.W2.shape)], "slope": net.slope,
            }
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path: str) -> "MemoryModel":
        with open(path) as f:
            doc = json.load(f)
        bases = {g: RbfBasis(d["n_nodes"], d["n_basis"], d["sd"]) for g, d in doc["bases"].items()}
        pcas = {}
        for g, d in doc["pca"].items():
            shape = tuple(d["shape"])
            pcas[g] = PcaModel(_unb64(d["mean"], (shape[1],)), _unb64(d["components"], shape))
        nets = {}
        for key, d in doc["nets"].items():
            tick_s, g = key.split(":")
            s1, s2 = (tuple(s) for s in d["shapes"])
            nets[(int(tick_s), g)] = Mlp(
                _unb64(d["W1"], s1), _unb64(d["b1"], (s1[0],)),
                _unb64(d["W2"], s2), _unb64(d["b2"], (s2[0],)),
                _unb64(d["x_mean"], (s1[1],)), _unb64(d["x_std"], (s1[1],)), d["slope"],
            )
        return cls(doc["meta"], bases, pcas, nets, doc.get("metrics", {}))


def recover_controls(X: np.ndarray, dt: float, space: kino.KinoSpace,
                     u_min: np.ndarray, u_max: np.ndarray) -> np.ndarray:
    """Invert the integrator's Euler channels: finite differences of the
    velocity, ZMP, and flywheel-momentum trajectories give the controls."""
    U = np.empty((len(X) - 1, space.nu))
    U[:, space.cl_ddq] = (X[1:, space.sl_dq] - X[:-1, space.sl_dq]) / dt
    lip = X[:, space.sl_lip]
    U[:, space.cl_pdot] = (lip[1:, 4:6] - lip[:-1, 4:6]) / dt
    U[:, space.cl_tau] = (lip[1:, 6:8] - lip[:-1, 6:8]) / dt
    np.clip(U, u_min, u_max, out=U)
    return U


def _group_slices(space: kino.KinoSpace):
    return {"q": space.sl_q, "dq": space.sl_dq, "lip": space.sl_lip}


def train(dataset: MotionDataset, space: kino.KinoSpace, cfg: TrainingConfig,
          meta_extra: dict | None = None) -> MemoryModel:
    """Fit bases and PCA on the whole dataset, then one net per (tick, group)."""
    ticks = dataset.tick_indices()
    for t in ticks:
        n_t = int(np.sum(dataset.ticks == t))
        if n_t < cfg.min_samples_per_tick:
            raise ValueError(f"walking tick {t} has only {n_t} samples "
                             f"(minimum {cfg.min_samples_per_tick})")
    slices = _group_slices(space)

    bases = {}
    pcas = {}
    weights = {}
    rng = np.random.default_rng(cfg.seed)
    sel = rng.choice(len(dataset), size=min(len(dataset), 32), replace=False)
    for g, sl in slices.items():
        bases[g] = RbfBasis.tuned(dataset.n_nodes, [dataset.targets[i][:, sl] for i in sel],
                                  n_basis=cfg.n_basis)
        W = np.array([bases[g].fit(T[:, sl]).ravel() for T in dataset.targets])
        n_comp = min(cfg.n_components, len(W) - 1, W.shape[1])
        pcas[g] = PcaModel.fit(W, n_comp)
        weights[g] = pcas[g].project(W)

    nets = {}
    metrics = {"per_group_val_mse": {g: [] for g in GROUPS}, "train_curves": {}}
    for tick in ticks:
        sel = np.flatnonzero(dataset.ticks == tick)
        X_in = dataset.inputs[sel]
        x_mean = X_in.mean(axis=0)
        x_std = np.maximum(X_in.std(axis=0), 1e-8)
        n = len(sel)
        n_val = int(np.floor(cfg.val_fraction * n)) if n >= 4 else 0
        rng_split = np.random.default_rng(cfg.seed + 7919 * tick)
        order = rng_split.permutation(n)
        val, trn = order[:n_val], order[n_val:]
        for gi, g in enumerate(GROUPS):
            Y = weights[g][sel]
            net_rng = np.random.default_rng(cfg.seed + 104729 * tick + 31 * gi)
            net = Mlp.init(X_in.shape[1], cfg.hidden, Y.shape[1], x_mean, x_std,
                           cfg.lrelu_slope, net_rng)
            losses = net.train(X_in[trn], Y[trn], cfg, net_rng)
            nets[(tick, g)] = net
            metrics["train_curves"][f"{tick}:{g}"] = [losses[0], losses[-1]]
            if n_val:
                metrics["per_group_val_mse"][g].append(net.mse(X_in[val], Y[val]))
    for g in GROUPS:
        vals = metrics["per_group_val_mse"][g]
        metrics["per_group_val_mse"][g] = float(np.mean(vals)) if vals else None

    meta = {"n_nodes": dataset.n_nodes, "dt": None, "u_min": None, "u_max": None,
            "ticks": ticks, "input_dim": int(dataset.inputs.shape[1])}
    if meta_extra:
        meta.update(meta_extra)
    return MemoryModel(meta, bases, pcas, nets, metrics)
