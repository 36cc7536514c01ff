"""Model-consistent closed-loop harness.

The plant is the kino-dynamic model itself: each tick solves the
receding-horizon problem from the measured state, runs the whole-body
controller on the first output, advances the plant with the first optimal
control, and logs one metrics record.  Perturbations enter as instantaneous
velocity jumps between ticks.

Because plant and model coincide, re-integrating the logged controls from the
logged initial state (replaying logged impulses) reproduces the logged states
bit-exactly; wall-clock latency columns are the only non-deterministic output.
"""

from __future__ import annotations

import dataclasses
import json
import multiprocessing as mp
import time
from dataclasses import dataclass, field

import numpy as np

from wbmpc import ddp, gait, kino, memory as memory_mod, ocp, wbc
from wbmpc.config import PerturbationEvent, RolloutConfig, RunConfig
from wbmpc.ddp import SolverSettings
from wbmpc.kino import KinoSpace, ModelConstants
from wbmpc.robot.biped import default_biped_dict
from wbmpc.robot.model import RobotModel

WBC_STATUS_CODE = {"optimal": 0, "softened": 1, "failed": 2}

METRICS_HEADER = ("tick,time,iters,solve_ms,per_iter_ms,residual_cost,"
                  "zmp_x,zmp_y,pref_x,pref_y,viol,cp_err,wbc_status")

# columns whose values depend on wall-clock time rather than the computation
TIMING_COLUMNS = ("solve_ms", "per_iter_ms")


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# context


class RunContext:
    """Everything a rollout needs, built once from a RunConfig."""

    def __init__(self, cfg: RunConfig, model: RobotModel | None = None):
        self.cfg = cfg
        self.model = model if model is not None else (
            RobotModel.from_json(cfg.model_file) if cfg.model_file
            else RobotModel.from_dict(default_biped_dict()))
        self.consts = ModelConstants.from_model(self.model, cfg.rollout.control_period)
        self.space = KinoSpace(self.model)
        placements, com = self.model.forward_kinematics(self.model.nominal_q)
        feet = {gait.RF: placements["right_foot"], gait.LF: placements["left_foot"]}
        need = cfg.rollout.duration + cfg.rollout.horizon * cfg.rollout.control_period
        walk_span = cfg.lead_in + cfg.gait.n_steps * cfg.gait.step_time
        hold = max(1.0, need - walk_span + 0.2)
        self.schedule = gait.build_schedule(cfg.gait, feet, first_swing=cfg.first_swing,
                                            terminal_hold=hold, lead_in=cfg.lead_in)
        if cfg.rollout.cp_reference_file:
            self.cp_ref = gait.CpReference.from_file(self.schedule, self.consts.omega,
                                                     cfg.rollout.cp_reference_file)
        else:
            self.cp_ref = gait.CpReference(self.schedule, self.consts.omega)
        self.x0 = kino.consistent_state(
            self.model, self.consts, self.space, self.model.nominal_q,
            np.zeros(self.space.nv), p_xy=gait.zmp_reference(self.schedule, 0.0))
        self.memory: memory_mod.MemoryModel | None = None

    def load_memory(self, path: str):
        try:
            self.memory = memory_mod.MemoryModel.load(path)
        except FileNotFoundError:
            raise FileNotFoundError(f"memory model file not found: {path}")

    def build_problem(self, t_now: float, x0: np.ndarray) -> ocp.OcpProblem:
        return ocp.build_ocp(self.model, self.schedule, self.cp_ref, t_now, x0,
                             self.cfg.weights, N=self.cfg.rollout.horizon,
                             dt=self.cfg.rollout.control_period,
                             derivative_mode=self.cfg.rollout.derivative_mode)


# ---------------------------------------------------------------------------
# rollout data


@dataclass
class TickRecord:
    tick: int
    time: float
    iters: int
    solve_s: float
    per_iter_s: float
    residual_cost: float
    zmp: np.ndarray
    p_ref: np.ndarray
    violation: float
    cp_err: float
    wbc_status: int
    converged: bool
    predict_s: float = 0.0


@dataclass
class RolloutMetrics:
    records: list
    aggregates: dict

    def to_csv(self, path: str, zero_timing: bool = False):
        with open(path, "w") as f:
            f.write(METRICS_HEADER + "\n")
            for r in self.records:
                solve_ms = 0.0 if zero_timing else r.solve_s * 1e3
                per_ms = 0.0 if zero_timing else r.per_iter_s * 1e3
                f.write(",".join([
                    str(r.tick), _fmt(r.time), str(r.iters), _fmt(solve_ms), _fmt(per_ms),
                    _fmt(r.residual_cost), _fmt(r.zmp[0]), _fmt(r.zmp[1]),
                    _fmt(r.p_ref[0]), _fmt(r.p_ref[1]), _fmt(r.violation), _fmt(r.cp_err),
                    str(r.wbc_status),
                ]) + "\n")


@dataclass
class TrajectoryLog:
    times: np.ndarray
    X: np.ndarray            # (n_ticks + 1, nx) plant states (post-impulse)
    U: np.ndarray            # (n_ticks, nu) applied controls
    events: list             # (tick, PerturbationEvent)

    def column_names(self, model, space) -> dict:
        qn = ["base_x", "base_y", "base_z", "base_qw", "base_qx", "base_qy", "base_qz"]
        qn += [f"q_{n}" for n in model.joint_names[1:]]
        vn = ["v_x", "v_y", "v_z", "w_x", "w_y", "w_z"] + [f"dq_{n}" for n in model.joint_names[1:]]
        lip = ["com_x", "com_y", "comd_x", "comd_y", "zmp_x", "zmp_y", "cam_x", "cam_y"]
        un = [f"ddq_{n}" for n in ["base_vx", "base_vy", "base_vz", "base_wx", "base_wy", "base_wz"]]
        un += [f"ddq_{n}" for n in model.joint_names[1:]]
        un += ["zmpd_x", "zmpd_y", "camd_x", "camd_y"]
        return {"state": qn + vn + lip, "control": un}

    def to_csv(self, path: str, model, space):
        names = self.column_names(model, space)
        cols = ["time"] + names["state"] + [f"u_{c}" for c in names["control"]]
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for i, t in enumerate(self.times):
                u = self.U[i] if i < len(self.U) else np.zeros(self.U.shape[1])
                f.write(",".join([_fmt(t)] + [_fmt(v) for v in self.X[i]] + [_fmt(v) for v in u]) + "\n")
        with open(path.replace(".csv", "_columns.json"), "w") as f:
            json.dump({"time": ["time"], **names,
                       "events": [{"tick": t, "impulse": ev.impulse,
                                   "direction": list(ev.direction), "time": ev.time}
                                  for t, ev in self.events]}, f, indent=1)


def apply_impulse(space: KinoSpace, mass: float, x: np.ndarray, impulse: float,
                  direction) -> np.ndarray:
    """Instantaneous velocity jump dv = (J/m) d on the COM and base rows."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"direction must be a unit vector, |d| = {n}")
    dv = impulse / mass * d
    out = np.asarray(x, dtype=float).copy()
    out[space.sl_lip][2:4] += dv[:2]
    sl = space.sl_dq
    out[sl.start: sl.start + 3] += dv
    return out


# ---------------------------------------------------------------------------
# closed loop


def closed_loop_rollout(ctx: RunContext, rollout: RolloutConfig | None = None,
                        record_solutions: bool = False):
    """Run the tick loop; returns (RolloutMetrics, TrajectoryLog[, solutions])."""
    cfg = ctx.cfg
    rollout = rollout or cfg.rollout
    space, consts, model = ctx.space, ctx.consts, ctx.model
    dt = rollout.control_period
    n_ticks = rollout.n_ticks
    if rollout.warm_start == "mlp":
        if ctx.memory is None:
            raise ValueError("warm-start mode 'mlp' requires a trained memory model")
        have = set(ctx.memory.ticks())
        missing = [k for k in range(n_ticks) if k not in have]
        if missing:
            raise ValueError(f"memory model does not cover walking ticks {missing[:5]}...")

    events_by_tick = {}
    for ev in rollout.perturbations:
        events_by_tick.setdefault(int(round(ev.time / dt)), []).append(ev)

    x = ctx.x0.copy()
    X_log = np.empty((n_ticks + 1, space.nx))
    U_log = np.empty((n_ticks, space.nu))
    times = dt * np.arange(n_ticks + 1)
    applied_events = []
    records = []
    solutions = []
    prev_solution = None

    for k in range(n_ticks):
        for ev in events_by_tick.get(k, []):
            x = apply_impulse(space, consts.m, x, ev.impulse, ev.unit_direction())
            applied_events.append((k, ev))
        X_log[k] = x
        t_now = k * dt
        problem = ctx.build_problem(t_now, x)

        t_pred = 0.0
        if rollout.warm_start == "cold":
            init = None
        elif rollout.warm_start == "previous":
            init = ddp.warm_start_from(prev_solution) if prev_solution is not None else None
        else:
            tp0 = time.perf_counter()
            init = ctx.memory.predict(x, k, space)
            t_pred = time.perf_counter() - tp0

        settings = cfg.solver if k > 0 else dataclasses.replace(
            cfg.solver, max_iters=rollout.warmup_max_iters)
        sol = ddp.solve(problem, init=init, settings=settings)
        if not np.all(np.isfinite(sol.X)) or not np.all(np.isfinite(sol.U)):
            raise FloatingPointError(f"solver returned non-finite trajectory at tick {k}")
        prev_solution = sol
        if record_solutions:
            solutions.append((x.copy(), sol.X.copy(), sol.U.copy()))

        # whole-body controller on the first output
        contacts = list(ctx.schedule.contacts_at(t_now))
        alpha = gait.alpha_c(ctx.schedule, t_now)
        f_rf, f_lf = gait.contact_force_reference(alpha, consts.m, consts.g)
        f_ref = {"right_foot": f_rf, "left_foot": f_lf}
        qdd_des = (sol.X[1][space.sl_dq] - sol.X[0][space.sl_dq]) / dt
        p_zmp_des = sol.X[1][space.sl_lip][4:6]
        prob_wbc = wbc.build_wbc_qp(model, x[space.sl_q], x[space.sl_dq], qdd_des, contacts,
                                    p_zmp_des, {c: f_ref[c] for c in contacts}, cfg.wbc,
                                    half_extents=cfg.gait.foot_half_extents)
        res_wbc = wbc.solve_wbc(prob_wbc)
        gamma_cmd = wbc.command_torque(
            res_wbc.torques, sol.X[1][space.sl_q][7:], sol.X[1][space.sl_dq][6:],
            x[space.sl_q][7:], x[space.sl_dq][6:],
            cfg.wbc.kp, cfg.wbc.kv, model.gamma_min, model.gamma_max)
        assert np.all(gamma_cmd >= model.gamma_min - 1e-12)
        assert np.all(gamma_cmd <= model.gamma_max + 1e-12)

        # advance the plant with the first optimal control
        u0 = sol.U[0]
        U_log[k] = u0
        x = kino.integrate(space, consts, x, u0)

        lo, hi = gait.support_polygon(ctx.schedule, t_now)
        zmp = X_log[k][space.sl_lip][4:6]
        viol = float(max(np.max(zmp - hi, initial=0.0), np.max(lo - zmp, initial=0.0), 0.0))
        lip = X_log[k][space.sl_lip]
        xi = lip[0:2] + lip[2:4] / consts.omega
        cp_err = float(np.linalg.norm(xi - ctx.cp_ref(t_now)))
        records.append(TickRecord(
            tick=k, time=t_now, iters=sol.iterations,
            solve_s=float(np.sum(sol.iter_times)),
            per_iter_s=float(np.mean(sol.iter_times)) if sol.iter_times else 0.0,
            residual_cost=sol.cost, zmp=zmp.copy(),
            p_ref=ocp_p_ref(ctx, t_now), violation=viol, cp_err=cp_err,
            wbc_status=WBC_STATUS_CODE[res_wbc.status], converged=sol.converged,
            predict_s=t_pred,
        ))
    X_log[n_ticks] = x

    metrics = RolloutMetrics(records, aggregate(ctx, records, rollout))
    log = TrajectoryLog(times, X_log, U_log, applied_events)
    if record_solutions:
        return metrics, log, solutions
    return metrics, log


def ocp_p_ref(ctx: RunContext, t: float) -> np.ndarray:
    return gait.zmp_reference(ctx.schedule, t)


def replay_log(ctx: RunContext, log: TrajectoryLog) -> np.ndarray:
    """Re-integrate logged controls (replaying impulses); returns the states."""
    space, consts = ctx.space, ctx.consts
    events_by_tick = {}
    for k, ev in log.events:
        events_by_tick.setdefault(k, []).append(ev)
    X = np.empty_like(log.X)
    x = log.X[0].copy()
    for k in range(len(log.U)):
        for ev in events_by_tick.get(k, []):
            if k > 0:
                x = apply_impulse(space, consts.m, x, ev.impulse, ev.unit_direction())
        X[k] = x
        x = kino.integrate(space, consts, x, log.U[k])
    X[len(log.U)] = x
    return X


# ---------------------------------------------------------------------------
# aggregation


def aggregate(ctx: RunContext, records, rollout: RolloutConfig) -> dict:
    dt = rollout.control_period
    iters = np.array([r.iters for r in records])
    lat = np.array([r.per_iter_s for r in records])
    cost = np.array([r.residual_cost for r in records])
    out = {
        "ticks": len(records),
        "mean_iters": float(np.mean(iters)) if len(iters) else 0.0,
        "max_iters": int(np.max(iters, initial=0)),
        "all_converged": bool(all(r.converged for r in records)),
        "max_violation": float(max((r.violation for r in records), default=0.0)),
        "max_latency_s": float(np.max(lat, initial=0.0)),
        "mean_residual_cost": float(np.mean(cost)) if len(cost) else 0.0,
        "wbc_status_counts": {s: int(sum(1 for r in records if r.wbc_status == c))
                              for s, c in WBC_STATUS_CODE.items()},
        "mean_predict_s": float(np.mean([r.predict_s for r in records])) if records else 0.0,
    }
    # per-phase latency
    phase_lat = {}
    for r in records:
        kind = ctx.schedule.phase_at(r.time).kind
        phase_lat.setdefault(kind, []).append(r.per_iter_s)
    out["latency_per_phase"] = {k: {"mean_s": float(np.mean(v)), "sd_s": float(np.std(v)), "n": len(v)}
                                for k, v in phase_lat.items()}
    # cost recovery after each perturbation
    recov = []
    for ev in rollout.perturbations:
        pre = [r.residual_cost for r in records if ev.time - 1.0 <= r.time < ev.time]
        if not pre:
            continue
        pre_mean = float(np.mean(pre))
        rec_t = None
        for r in records:
            if r.time > ev.time and r.residual_cost <= 2.0 * pre_mean:
                rec_t = r.time - ev.time
                break
        recov.append({"time": ev.time, "pre_mean_cost": pre_mean, "recovery_s": rec_t})
    out["perturbation_recovery"] = recov
    return out


# ---------------------------------------------------------------------------
# nominal pass, dataset and memory drivers


def nominal_pass(ctx: RunContext) -> dict:
    """High-accuracy closed loop used for dataset targets and the capture-point
    reference file; returns tick -> (x_t, X, U)."""
    mc = ctx.cfg.memory
    rollout = dataclasses.replace(
        ctx.cfg.rollout, warm_start="previous", perturbations=[], memory_file=None)
    saved = ctx.cfg.solver
    ctx.cfg.solver = SolverSettings(max_iters=mc.dataset_max_iters, tol=mc.dataset_tol)
    try:
        metrics, log, sols = closed_loop_rollout(ctx, rollout, record_solutions=True)
    finally:
        ctx.cfg.solver = saved
    return {k: sols[k] for k in range(len(sols))}


def export_cp_reference(ctx: RunContext, nominal: dict, path: str):
    dt = ctx.cfg.rollout.control_period
    with open(path, "w") as f:
        f.write("t,xi_x,xi_y\n")
        for k in sorted(nominal):
            x = nominal[k][0]
            lip = x[ctx.space.sl_lip]
            xi = lip[0:2] + lip[2:4] / ctx.consts.omega
            f.write(f"{_fmt(k * dt)},{_fmt(xi[0])},{_fmt(xi[1])}\n")


def collect_dataset(ctx: RunContext, rng: np.random.Generator,
                    nominal: dict | None = None) -> memory_mod.MotionDataset:
    mc = ctx.cfg.memory
    if nominal is None:
        nominal = nominal_pass(ctx)
    settings = SolverSettings(max_iters=mc.dataset_max_iters, tol=mc.dataset_tol)
    dt = ctx.cfg.rollout.control_period

    def build(tick, x0):
        return ctx.build_problem(tick * dt, x0)

    def solve(problem, init):
        return ddp.solve(problem, init=init, settings=settings)

    return memory_mod.collect_dataset(nominal, build, solve, mc.sampler,
                                      ctx.model, ctx.consts, ctx.space, rng)


def train_memory(ctx: RunContext, dataset: memory_mod.MotionDataset) -> memory_mod.MemoryModel:
    space = ctx.space
    u_min, u_max = ctx.cfg.weights.control_bounds(space)
    return memory_mod.train(dataset, space, ctx.cfg.memory.training,
                            meta_extra={"dt": ctx.cfg.rollout.control_period,
                                        "u_min": u_min.tolist(), "u_max": u_max.tolist()})


# ---------------------------------------------------------------------------
# latency benchmark


def latency_benchmark(ctx: RunContext, n_cycles: int) -> dict:
    """Per-iteration latency bucketed by phase type and transition proximity."""
    bench = ctx.cfg.benchmark
    if n_cycles == 0:
        return {"buckets": {}, "rows": [], "n_cycles": 0}
    cfg = ctx.cfg
    duration = cfg.lead_in + n_cycles * cfg.gait.step_time
    rollout = dataclasses.replace(cfg.rollout, duration=duration, warm_start="previous",
                                  perturbations=[])
    sub = RunContext(dataclasses.replace(
        cfg, gait=dataclasses.replace(cfg.gait, n_steps=n_cycles), rollout=rollout),
        model=ctx.model)
    metrics, _ = closed_loop_rollout(sub, rollout)
    records = metrics.records[bench.warmup_ticks:]
    dt = rollout.control_period
    transitions = sub.schedule.transition_times()
    window = bench.transition_window * dt + 1e-9

    buckets = {}
    for r in records:
        near = any(abs(r.time - tt) <= window for tt in transitions)
        kind = "transition" if near else sub.schedule.phase_at(r.time).kind
        buckets.setdefault(kind, []).append(r.per_iter_s)
    rows = [{"bucket": k, "n": len(v), "mean_ms": float(np.mean(v) * 1e3),
             "sd_ms": float(np.std(v) * 1e3), "max_ms": float(np.max(v) * 1e3)}
            for k, v in sorted(buckets.items())]
    all_lat = np.array([r.per_iter_s for r in records])
    mid = [r.per_iter_s for r in records
           if not any(abs(r.time - tt) <= window for tt in transitions)]
    trans = buckets.get("transition", [])
    out = {
        "buckets": {k: v for k, v in zip(sorted(buckets), [buckets[k] for k in sorted(buckets)])},
        "rows": rows,
        "n_cycles": n_cycles,
        "sd_over_mean": float(np.std(all_lat) / np.mean(all_lat)) if len(all_lat) else 0.0,
        "flatness_ratio": float(np.mean(trans) / np.mean(mid)) if trans and mid else 1.0,
    }
    return out


def write_latency_csv(result: dict, path: str):
    with open(path, "w") as f:
        f.write("bucket,n,mean_ms,sd_ms,max_ms\n")
        for row in result["rows"]:
            f.write(f"{row['bucket']},{row['n']},{_fmt(row['mean_ms'])},"
                    f"{_fmt(row['sd_ms'])},{_fmt(row['max_ms'])}\n")


# ---------------------------------------------------------------------------
# warm-start comparison

_CMP_CTX = None


def _trial_events(cfg, rng) -> list:
    """Jittered copy of the configured perturbation (default: forward impulse
    just before the second single-to-double support transition)."""
    cmp_cfg = cfg.compare
    if cfg.rollout.perturbations:
        base = cfg.rollout.perturbations[0]
    else:
        base = PerturbationEvent(time=cfg.lead_in + 2 * cfg.gait.step_time - 0.04,
                                 impulse=40.0, direction=(1.0, 0.0, 0.0))
    mag = base.impulse * (1.0 + cmp_cfg.impulse_jitter * rng.uniform(-1, 1))
    ang = cmp_cfg.direction_jitter * rng.uniform(-1, 1)
    d = np.asarray(base.direction, dtype=float)
    c, s = np.cos(ang), np.sin(ang)
    d = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1], d[2]])
    d /= np.linalg.norm(d)
    t = base.time + cmp_cfg.time_jitter * rng.uniform(-1, 1)
    t = min(max(t, 0.0), cfg.rollout.duration - cfg.rollout.control_period)
    return [PerturbationEvent(time=float(t), impulse=float(mag), direction=tuple(d))]


def _run_cmp_trial(args):
    mode, trial, events = args
    ctx = _CMP_CTX
    rollout = dataclasses.replace(ctx.cfg.rollout, warm_start=mode,
                                  perturbations=list(events))
    metrics, _ = closed_loop_rollout(ctx, rollout)
    recov = metrics.aggregates["perturbation_recovery"]
    return {
        "mode": mode,
        "trial": trial,
        "mean_iters": metrics.aggregates["mean_iters"],
        "mean_residual_cost": metrics.aggregates["mean_residual_cost"],
        "mean_predict_ms": metrics.aggregates["mean_predict_s"] * 1e3,
        "recovery_s": recov[0]["recovery_s"] if recov else None,
        "pre_mean_cost": recov[0]["pre_mean_cost"] if recov else None,
    }


def compare_warmstart(ctx: RunContext, n_trials: int | None = None,
                      modes=("cold", "previous", "mlp")) -> dict:
    """Matched perturbed rollouts differing only in warm-start mode."""
    global _CMP_CTX
    cfg = ctx.cfg
    n_trials = n_trials if n_trials is not None else cfg.compare.n_trials
    if "mlp" in modes and ctx.memory is None:
        raise ValueError("warm-start comparison with 'mlp' requires a memory model")
    trials = []
    for trial in range(n_trials):
        rng = np.random.default_rng([cfg.rollout.seed, trial])
        events = _trial_events(cfg, rng)
        for mode in modes:
            trials.append((mode, trial, events))

    _CMP_CTX = ctx
    workers = max(1, min(cfg.compare.workers, len(trials)))
    if workers > 1:
        with mp.get_context("fork").Pool(workers) as pool:
            results = pool.map(_run_cmp_trial, trials)
    else:
        results = [_run_cmp_trial(t) for t in trials]
    _CMP_CTX = None

    table = {}
    for mode in modes:
        rows = [r for r in results if r["mode"] == mode]
        table[mode] = {
            "n_trials": len(rows),
            "mean_iters": float(np.mean([r["mean_iters"] for r in rows])),
            "mean_residual_cost": float(np.mean([r["mean_residual_cost"] for r in rows])),
            "mean_predict_ms": float(np.mean([r["mean_predict_ms"] for r in rows])),
            "recovery_s": [r["recovery_s"] for r in rows],
        }
    return {"per_mode": table, "trials": results}


def write_compare_csv(result: dict, path: str):
    with open(path, "w") as f:
        f.write("mode,n_trials,mean_iters,mean_residual_cost,mean_predict_ms\n")
        for mode, row in result["per_mode"].items():
            f.write(f"{mode},{row['n_trials']},{_fmt(row['mean_iters'])},"
                    f"{_fmt(row['mean_residual_cost'])},{_fmt(row['mean_predict_ms'])}\n")
