"""Fixed-step closed-loop simulation with safety auditing and call timing.

Each control step evaluates the waypoint target, the nominal LQR force, and
the selected safety filter, then integrates the plant one step of classical
RK4 with the filtered force held constant (zero-order hold).  Per-call filter
times cover the filter's own constraint construction and solve, measured over
identical work boundaries for the closed-form and QP paths.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import fastpath
from .barriers import BarrierConfig, evaluate
from .dynamics import PlantState, PlatformModel, _rhs_arrays, dynamics_terms
from .errors import ConfigError, SimulationDiverged
from .nominal import LqrWeights, TrackingTarget, f_des, lqr_gain, u_des
from .qp import qp_filter
from .safety_filter import Branch, _resolve_engine, closed_form_filter

FILTER_MODES = ("none", "qp", "cf", "cf-weighted")

# Trajectory-audit threshold on every enabled barrier value.
AUDIT_TOL = 1e-6

# Active runs separated by less inactivity than this merge into one region.
REGION_GAP_S = 0.5


@dataclass
class WaypointSegment:
    t_start: float
    t_end: float
    q_des: np.ndarray

    def __post_init__(self):
        self.q_des = np.asarray(self.q_des, dtype=float).reshape(6)
        if not self.t_end > self.t_start:
            raise ConfigError("waypoint segment must have t_end > t_start")


@dataclass
class ScenarioConfig:
    initial_state: PlantState
    duration: float
    dt: float
    waypoint_schedule: list
    filter_mode: str
    barrier: BarrierConfig
    lqr: LqrWeights
    model: PlatformModel
    rng_seed: int = 0
    fallback: str = "damped"
    engine: str = "auto"

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.duration < self.dt:
            raise ConfigError("duration must cover at least one step")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"filter_mode must be one of {FILTER_MODES}")
        segs = sorted(self.waypoint_schedule, key=lambda s: s.t_start)
        if not segs or segs[0].t_start > 0:
            raise ConfigError("waypoint schedule must start at t = 0")
        for prev, cur in zip(segs, segs[1:]):
            if cur.t_start < prev.t_end - 1e-12:
                raise ConfigError("waypoint segments overlap")
            if cur.t_start > prev.t_end + 1e-12:
                raise ConfigError("waypoint schedule has a gap")
        if segs[-1].t_end < self.duration - 1e-12:
            raise ConfigError("waypoint schedule must cover the full duration")
        self.waypoint_schedule = segs


@dataclass
class LogRecord:
    """One control step of a scenario run."""

    t: float
    q: np.ndarray
    qdot: np.ndarray
    q_des: np.ndarray
    F_des: np.ndarray
    F_out: np.ndarray
    h_D: np.ndarray
    h_v: np.ndarray
    hbar_D: float
    hbar_v: float
    branch: Branch
    solve_time: float
    cbf_active: bool


@dataclass
class ScenarioLog:
    """Column-oriented record of a full run."""

    filter_mode: str
    dt: float
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    q_des: np.ndarray
    F_des: np.ndarray
    F_out: np.ndarray
    h_D: np.ndarray
    h_v: np.ndarray
    hbar_D: np.ndarray
    hbar_v: np.ndarray
    branch: np.ndarray           # Branch .value strings
    solve_time: np.ndarray
    cbf_active: np.ndarray
    position_labels: list
    velocity_labels: list
    status: str = "ok"
    error: str = None

    def __len__(self):
        return len(self.t)

    def record(self, i):
        return LogRecord(
            t=float(self.t[i]), q=self.q[i], qdot=self.qdot[i],
            q_des=self.q_des[i], F_des=self.F_des[i], F_out=self.F_out[i],
            h_D=self.h_D[i], h_v=self.h_v[i], hbar_D=float(self.hbar_D[i]),
            hbar_v=float(self.hbar_v[i]), branch=Branch(self.branch[i]),
            solve_time=float(self.solve_time[i]),
            cbf_active=bool(self.cbf_active[i]))

    def min_barriers(self):
        return {
            "min_h_D": float(np.min(self.h_D)),
            "min_h_v": float(np.min(self.h_v)),
            "min_hbar_D": float(np.min(self.hbar_D)),
            "min_hbar_v": float(np.min(self.hbar_v)),
        }

    def violations(self, tol=AUDIT_TOL):
        mins = self.min_barriers()
        return mins["min_h_D"] < -tol or mins["min_h_v"] < -tol

    def to_csv(self, path):
        cols = ["t"]
        cols += [f"q{i}" for i in range(1, 7)]
        cols += [f"qd{i}" for i in range(1, 7)]
        cols += [f"qdes{i}" for i in range(1, 7)]
        cols += [f"Fdes{i}" for i in range(1, 7)]
        cols += [f"Fout{i}" for i in range(1, 7)]
        cols += [f"hD_{lab}" for lab in self.position_labels]
        cols += [f"hv_{lab}" for lab in self.velocity_labels]
        cols += ["hbarD", "hbarV", "branch", "solve_time_s", "cbf_active"]
        fmt = "%.17g"
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self.t)):
                nums = np.concatenate([
                    [self.t[i]], self.q[i], self.qdot[i], self.q_des[i],
                    self.F_des[i], self.F_out[i], self.h_D[i], self.h_v[i],
                    [self.hbar_D[i], self.hbar_v[i]]])
                row = [fmt % v for v in nums]
                row += [self.branch[i], fmt % self.solve_time[i],
                        str(int(self.cbf_active[i]))]
                fh.write(",".join(row) + "\n")

    def summary(self):
        out = {
            "filter": self.filter_mode,
            "status": self.status,
            "steps": int(len(self.t)),
            "dt": self.dt,
            "violations": bool(self.violations()),
            "audit_tolerance": AUDIT_TOL,
            "branch_counts": {b.value: int(np.sum(self.branch == b.value))
                              for b in Branch},
            "solve_time_avg_s": float(np.mean(self.solve_time)) if len(self.t) else 0.0,
            "solve_time_max_s": float(np.max(self.solve_time)) if len(self.t) else 0.0,
        }
        out.update(self.min_barriers())
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class RegionTiming:
    index: int
    t_start: float
    t_end: float
    steps: int
    avg_solve_time: float
    max_solve_time: float


@dataclass
class TimingReport:
    regions: list
    notice: str = None

    def as_dict(self):
        return {
            "regions": [{
                "index": r.index,
                "t_start": r.t_start,
                "t_end": r.t_end,
                "steps": r.steps,
                "avg_solve_time_s": r.avg_solve_time,
                "max_solve_time_s": r.max_solve_time,
            } for r in self.regions],
            "notice": self.notice,
        }


def waypoint(t, schedule):
    """Tracking target at time ``t``; segments are half-open [start, end)."""
    if t < 0 or t >= schedule[-1].t_end:
        raise ValueError(f"t = {t} outside the scheduled horizon")
    for seg in schedule:
        if seg.t_start <= t < seg.t_end:
            return TrackingTarget(seg.q_des, np.zeros(6))
    raise ValueError(f"no waypoint segment covers t = {t}")


def step(state, force, model, dt, engine="auto"):
    """One classical RK4 step with the force held constant."""
    q, qd = state.q, state.qdot
    if _resolve_engine(engine) == "jit":
        q_new, qd_new = fastpath.step_kernel(
            q, qd, np.asarray(force, dtype=float), dt,
            model.geometry.base_points, model.geometry.platform_points,
            model.inertia.body_inertia, model.inertia.mass,
            model.inertia.gravity)
    else:
        k1 = _rhs_arrays(q, qd, force, model)
        k2 = _rhs_arrays(q + 0.5 * dt * k1[:6], qd + 0.5 * dt * k1[6:], force, model)
        k3 = _rhs_arrays(q + 0.5 * dt * k2[:6], qd + 0.5 * dt * k2[6:], force, model)
        k4 = _rhs_arrays(q + dt * k3[:6], qd + dt * k3[6:], force, model)
        q_new = q + dt * (k1[:6] + 2 * k2[:6] + 2 * k3[:6] + k4[:6]) / 6
        qd_new = qd + dt * (k1[6:] + 2 * k2[6:] + 2 * k3[6:] + k4[6:]) / 6
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        raise SimulationDiverged("state became non-finite during integration")
    return PlantState(q_new, qd_new)


def run_scenario(config):
    """Run the closed loop and return ``(ScenarioLog, TimingReport)``."""
    cfg = config.barrier
    model = config.model
    mode = config.filter_mode
    weighted = mode == "cf-weighted"
    engine = _resolve_engine(config.engine)
    n = int(round(config.duration / config.dt))
    gain = lqr_gain(config.lqr)

    state = config.initial_state
    if mode != "none":
        ev0 = evaluate(state, model, cfg, np.zeros(6), weighted=weighted)
        if ev0.hbar_D < 0 or ev0.hbar_v < 0:
            raise ConfigError(
                "initial state violates the aggregated barriers: "
                f"hbar_D = {ev0.hbar_D:.6g}, hbar_v = {ev0.hbar_v:.6g}")

    if engine == "jit":
        # First calls trigger compilation / cache loads; keep them out of the
        # per-step timing statistics.
        warm = dynamics_terms(state, model)
        step(state, warm.J.T @ warm.G, model, config.dt, engine=engine)
        if mode in ("cf", "cf-weighted"):
            closed_form_filter(state, model, warm.J.T @ warm.G, cfg,
                               weighted=weighted, dyn=warm,
                               fallback=config.fallback, engine=engine)
        elif mode == "qp":
            qp_filter(state, model, warm.J.T @ warm.G, cfg, dyn=warm,
                      engine=engine)

    log = ScenarioLog(
        filter_mode=mode, dt=config.dt,
        t=np.empty(n), q=np.empty((n, 6)), qdot=np.empty((n, 6)),
        q_des=np.empty((n, 6)), F_des=np.empty((n, 6)), F_out=np.empty((n, 6)),
        h_D=np.empty((n, cfg.n_position)), h_v=np.empty((n, cfg.n_velocity)),
        hbar_D=np.empty(n), hbar_v=np.empty(n),
        branch=np.empty(n, dtype=object), solve_time=np.empty(n),
        cbf_active=np.zeros(n, dtype=bool),
        position_labels=cfg.position_labels(),
        velocity_labels=cfg.velocity_labels())

    for k in range(n):
        t = k * config.dt
        target = waypoint(t, config.waypoint_schedule)
        dyn = dynamics_terms(state, model)
        force_des = f_des(state, model, u_des(state, target, gain), dyn=dyn)

        if mode == "none":
            t0 = time.perf_counter()
            force_out = force_des
            branch = Branch.NONE_ACTIVE
            solve_time = time.perf_counter() - t0
            ev = evaluate(state, model, cfg, force_des, dyn=dyn)
        elif mode == "qp":
            dec = qp_filter(state, model, force_des, cfg, dyn=dyn, engine=engine)
            force_out, branch, solve_time = dec.F_out, dec.branch, dec.solve_time
            ev = evaluate(state, model, cfg, force_des, dyn=dyn)
        else:
            dec = closed_form_filter(state, model, force_des, cfg,
                                     weighted=weighted, dyn=dyn,
                                     fallback=config.fallback, engine=engine)
            force_out, branch, solve_time = dec.F_out, dec.branch, dec.solve_time
            ev = dec.evaluation
        log.t[k] = t
        log.q[k] = state.q
        log.qdot[k] = state.qdot
        log.q_des[k] = target.q_des
        log.F_des[k] = force_des
        log.F_out[k] = force_out
        log.h_D[k] = ev.h_D
        log.h_v[k] = ev.h_v
        log.hbar_D[k] = ev.hbar_D
        log.hbar_v[k] = ev.hbar_v
        log.branch[k] = branch.value
        log.solve_time[k] = solve_time
        log.cbf_active[k] = branch is not Branch.NONE_ACTIVE

        try:
            state = step(state, force_out, model, config.dt, engine=engine)
        except SimulationDiverged as exc:
            log.status = "diverged"
            log.error = f"{exc} at t = {t:.6f}"
            log = _truncate(log, k + 1)
            return log, timing_report(log)

    return log, timing_report(log)


def _truncate(log, n):
    for name in ("t", "q", "qdot", "q_des", "F_des", "F_out", "h_D", "h_v",
                 "hbar_D", "hbar_v", "branch", "solve_time", "cbf_active"):
        setattr(log, name, getattr(log, name)[:n])
    return log


def detect_regions(t, active, gap=REGION_GAP_S):
    """Maximal runs of active steps, merged across gaps shorter than ``gap``."""
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return []
    regions = []
    start = prev = idx[0]
    for i in idx[1:]:
        if t[i] - t[prev] >= gap:
            regions.append((start, prev))
            start = i
        prev = i
    regions.append((start, prev))
    return regions


def timing_report(log, gap=REGION_GAP_S):
    """Per-region solve-time statistics over the detected active regions."""
    if not np.any(log.cbf_active):
        return TimingReport(regions=[], notice="no constraint-active steps")
    regions = []
    for idx, (lo, hi) in enumerate(detect_regions(log.t, log.cbf_active, gap)):
        mask = log.cbf_active[lo:hi + 1]
        times = log.solve_time[lo:hi + 1][mask]
        regions.append(RegionTiming(
            index=idx + 1, t_start=float(log.t[lo]), t_end=float(log.t[hi]),
            steps=int(times.size), avg_solve_time=float(np.mean(times)),
            max_solve_time=float(np.max(times))))
    return TimingReport(regions=regions)
