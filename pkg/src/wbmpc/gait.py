"""Gait scheduling and reference signals for walking.

A schedule is an alternating sequence of double-support (DSP) and
single-support (SSP) phases tiling [0, duration], plus piecewise-constant
footstep placements.  Everything downstream (ZMP reference, support polygon,
capture-point reference, swing trajectories, force switching) is a pure
function of the schedule and time, so schedules are immutable and queries are
thread-safe.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

DSP = "dsp"
RF_SSP = "rf_ssp"
LF_SSP = "lf_ssp"

RF = "right_foot"
LF = "left_foot"

ALPHA_BLEND = 0.02  # s of linear interpolation before each contact transition


@dataclass(frozen=True)
class GaitParams:
    step_time: float = 1.0
    step_length: float = 0.10
    dsp_ratio: float = 0.2  # fraction of the step spent in double support
    n_steps: int = 4
    foot_half_extents: tuple = (0.12, 0.06)
    lateral_stance_width: float = 0.20
    swing_apex_height: float = 0.05

    def __post_init__(self):
        if self.step_time <= 0:
            raise ValueError("step_time must be > 0")
        if not 0 < self.dsp_ratio < 1:
            raise ValueError("dsp_ratio must lie in (0, 1)")
        if min(self.foot_half_extents) <= 0:
            raise ValueError("foot_half_extents must be > 0")


@dataclass(frozen=True)
class Phase:
    kind: str
    t0: float
    t1: float
    contacts: tuple

    @property
    def duration(self):
        return self.t1 - self.t0


class GaitSchedule:
    """Immutable phase sequence plus footstep placement timelines."""

    def __init__(self, phases, placements, params: GaitParams):
        self.phases = list(phases)
        self.params = params
        self.duration = self.phases[-1].t1
        self._starts = [ph.t0 for ph in self.phases]
        # placements: {foot: (change_times list, [T0, T1, ...])}; placement i
        # is active on [change_times[i], change_times[i+1])
        self._placements = placements

    # queries are right-continuous with a 1 ns snap so times computed as
    # t0 + k*dt versus (k0+k)*dt land in the same phase at boundaries
    _SNAP = 1e-9

    def _check_t(self, t: float):
        if t < -self._SNAP or t > self.duration + self._SNAP:
            raise ValueError(f"t = {t} outside schedule [0, {self.duration}]")

    def phase_at(self, t: float) -> Phase:
        self._check_t(t)
        i = bisect.bisect_right(self._starts, t + self._SNAP) - 1
        return self.phases[max(i, 0)]

    def contacts_at(self, t: float) -> tuple:
        return self.phase_at(t).contacts

    def placement(self, foot: str, t: float) -> np.ndarray:
        self._check_t(t)
        times, mats = self._placements[foot]
        i = bisect.bisect_right(times, t + self._SNAP) - 1
        return mats[max(i, 0)]

    def foot_center(self, foot: str, t: float) -> np.ndarray:
        return self.placement(foot, t)[:2, 3]

    def stance_targets(self, t: float) -> dict:
        return {foot: self.placement(foot, t) for foot in self.contacts_at(t)}

    def transition_times(self) -> list:
        return [ph.t1 for ph in self.phases[:-1]]


def build_schedule(params: GaitParams, initial_feet: dict, first_swing: str = RF,
                   terminal_hold: float = 1.0, lead_in: float = 0.0) -> GaitSchedule:
    """Alternating DSP/SSP schedule with footsteps advancing in x.

    initial_feet maps foot name to its SE(3) placement; new placements keep
    each foot's lateral position and orientation.  The k-th new placement sits
    k * step_length ahead, so consecutive footsteps (alternating feet) form an
    arithmetic sequence in x.  lead_in extends the first double-support phase:
    a standing hold that lets the receding-horizon references ramp up smoothly.
    """
    if params.n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if first_swing not in (RF, LF):
        raise ValueError(f"first_swing must be {RF!r} or {LF!r}")

    dsp_time = params.dsp_ratio * params.step_time
    phases = []
    times = {RF: [0.0], LF: [0.0]}
    mats = {RF: [np.asarray(initial_feet[RF], dtype=float)],
            LF: [np.asarray(initial_feet[LF], dtype=float)]}

    swing = first_swing
    t = 0.0
    for k in range(params.n_steps):
        extra = lead_in if k == 0 else 0.0
        phases.append(Phase(DSP, t, t + dsp_time + extra, (RF, LF)))
        t += dsp_time + extra
        kind = LF_SSP if swing == RF else RF_SSP  # named after the stance foot
        phases.append(Phase(kind, t, t + params.step_time - dsp_time,
                            (LF,) if swing == RF else (RF,)))
        t += params.step_time - dsp_time
        target = mats[swing][-1].copy()
        target[0, 3] = mats[swing][0][0, 3] + (k + 1) * params.step_length
        times[swing].append(t)  # placement becomes active at touch-down
        mats[swing].append(target)
        swing = LF if swing == RF else RF

    phases.append(Phase(DSP, t, t + terminal_hold, (RF, LF)))
    return GaitSchedule(phases, {RF: (times[RF], mats[RF]), LF: (times[LF], mats[LF])}, params)


# ---------------------------------------------------------------------------
# references


def zmp_reference(schedule: GaitSchedule, t: float) -> np.ndarray:
    """Zero-order-hold ZMP reference: support-foot center, or the midpoint in DSP."""
    ph = schedule.phase_at(t)
    if ph.kind == DSP:
        return 0.5 * (schedule.foot_center(RF, t) + schedule.foot_center(LF, t))
    if ph.kind == RF_SSP:
        return schedule.foot_center(RF, t).copy()
    return schedule.foot_center(LF, t).copy()


def support_polygon(schedule: GaitSchedule, t: float, params: GaitParams | None = None):
    """Axis-aligned ZMP bounds (p_l, p_u): stance-foot rectangle in SSP, the
    bounding box of both foot rectangles in DSP."""
    params = params or schedule.params
    he = np.asarray(params.foot_half_extents, dtype=float)
    ph = schedule.phase_at(t)
    lows, highs = [], []
    for foot in ph.contacts:
        c = schedule.foot_center(foot, t)
        lows.append(c - he)
        highs.append(c + he)
    return np.min(lows, axis=0), np.max(highs, axis=0)


def alpha_c(schedule: GaitSchedule, t: float) -> float:
    """Contact-force switching coefficient, blended linearly over the
    ALPHA_BLEND window immediately before each contact transition."""
    base = {DSP: 0.5, RF_SSP: 0.0, LF_SSP: 1.0}
    ph = schedule.phase_at(t)
    a = base[ph.kind]
    if ph is schedule.phases[-1]:
        return a
    idx = schedule.phases.index(ph)
    nxt = base[schedule.phases[idx + 1].kind]
    if t >= ph.t1 - ALPHA_BLEND:
        s = (t - (ph.t1 - ALPHA_BLEND)) / ALPHA_BLEND
        return (1.0 - s) * a + s * nxt
    return a


def contact_force_reference(alpha: float, m: float, g: float) -> tuple:
    """Vertical contact-force references (right, left): weight split by alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return ((1.0 - alpha) * m * g, alpha * m * g)


def _quintic_blend(s):
    return ((6.0 * s - 15.0) * s + 10.0) * s**3


def swing_trajectory(schedule: GaitSchedule, t: float) -> dict:
    """Desired placement of both feet: stance feet hold their placements, the
    swing foot follows a C2 arc (quintic in x/y, quartic bump in z)."""
    ph = schedule.phase_at(t)
    params = schedule.params
    out = {}
    for foot in (RF, LF):
        if foot in ph.contacts:
            out[foot] = schedule.placement(foot, t).copy()
            continue
        T0 = schedule.placement(foot, ph.t0)
        # touch-down placement becomes active exactly at ph.t1
        T1 = schedule.placement(foot, ph.t1 + 1e-9) if ph.t1 < schedule.duration \
            else schedule.placement(foot, schedule.duration)
        s = np.clip((t - ph.t0) / ph.duration, 0.0, 1.0)
        b = _quintic_blend(s)
        T = T0.copy()
        T[:3, 3] = (1.0 - b) * T0[:3, 3] + b * T1[:3, 3]
        T[2, 3] += params.swing_apex_height * 16.0 * s**2 * (1.0 - s) ** 2
        out[foot] = T
    return out


# ---------------------------------------------------------------------------
# capture point


class CpReference:
    """Capture-point reference xi(t).

    Primary source: a stored trajectory file (CSV, header t,xi_x,xi_y) from an
    offline high-accuracy closed-loop run.  Fallback: the analytic pendulum
    capture point propagated backward phase-by-phase so it converges onto the
    final ZMP reference.
    """

    def __init__(self, schedule: GaitSchedule, omega: float, table: np.ndarray | None = None):
        self.schedule = schedule
        self.omega = omega
        self.table = table
        if table is None:
            self._ends = self._solve_backward()

    @classmethod
    def from_file(cls, schedule: GaitSchedule, omega: float, path: str) -> "CpReference":
        try:
            raw = np.genfromtxt(path, delimiter=",", names=True)
        except OSError as e:
            raise FileNotFoundError(f"capture-point reference file not found: {path}") from e
        table = np.column_stack([raw["t"], raw["xi_x"], raw["xi_y"]])
        return cls(schedule, omega, table=table)

    def _solve_backward(self):
        phases = self.schedule.phases
        ends = [None] * len(phases)
        xi_end = zmp_reference(self.schedule, self.schedule.duration)
        for i in range(len(phases) - 1, -1, -1):
            ends[i] = xi_end
            p = zmp_reference(self.schedule, phases[i].t0)
            xi_end = p + np.exp(-self.omega * phases[i].duration) * (ends[i] - p)
        return ends

    def __call__(self, t: float) -> np.ndarray:
        if self.table is not None:
            ts = self.table[:, 0]
            i = int(np.clip(np.searchsorted(ts, t), 0, len(ts) - 1))
            if i > 0 and abs(ts[i] - t) >= abs(t - ts[i - 1]):
                i -= 1
            if abs(ts[i] - t) < 1e-9 or i in (0, len(ts) - 1):
                return self.table[i, 1:].copy()
            j = i + 1 if ts[i] < t else i - 1
            lo, hi = sorted((i, j))
            w = (t - ts[lo]) / (ts[hi] - ts[lo])
            return (1 - w) * self.table[lo, 1:] + w * self.table[hi, 1:]
        ph = self.schedule.phase_at(t)
        idx = self.schedule.phases.index(ph)
        p = zmp_reference(self.schedule, ph.t0)
        xi_end = self._ends[idx]
        return p + np.exp(self.omega * (t - ph.t1)) * (xi_end - p)


def cp_reference(schedule: GaitSchedule, t: float, omega: float, source: CpReference | None = None):
    """Capture-point reference at time t (see CpReference for sources)."""
    ref = source if source is not None else CpReference(schedule, omega)
    return ref(t)
