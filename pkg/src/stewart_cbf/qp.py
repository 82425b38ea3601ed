"""Dense least-distance QP over the individual barrier constraint rows.

``build_constraints`` turns every enabled barrier inequality into a halfspace
row ``A_i F <= b_i`` over the absolute force, arranged so the slack of row i
at the nominal force equals that constraint's residual.  ``solve_qp`` is a
small primal active-set method specialized to the identity-Hessian objective
``min |F - F_des|^2``: the equality-constrained subproblems are solved through
the Gram matrix of the active rows, rows with negative multipliers are
dropped, and the most violated row (normalized by row norm) is added next.
Linearly dependent candidate rows are handled by swapping out an active row,
which doubles as the infeasibility certificate when no swap exists.
"""

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import fastpath
from .barriers import evaluate
from .dynamics import AXIS_NAMES, dynamics_terms
from .errors import QpCycleError, QpInfeasibleError
from .safety_filter import Branch, FilterDecision, _resolve_engine

ROW_NORM_MIN = 1e-12
FEAS_TOL = 1e-10
MULT_TOL = 1e-11
DEP_RTOL = 1e-10


class Family(Enum):
    POSITION = "position"
    VELOCITY = "velocity"


@dataclass
class RowLabel:
    family: Family
    axis: int = None            # None for aggregated rows
    side: str = None            # "max" / "min" / None

    def __str__(self):
        if self.axis is None:
            return f"{self.family.value}:aggregate"
        return f"{self.family.value}:{AXIS_NAMES[self.axis]}:{self.side}"


@dataclass
class QpProblem:
    F_des: np.ndarray
    A: np.ndarray
    b: np.ndarray
    labels: list


@dataclass
class QpSolution:
    F_star: np.ndarray
    active_set: list
    multipliers: np.ndarray
    iterations: int
    solve_time: float


def build_constraints(state, model, cfg, mode="individual", force_des=None,
                      weighted=False, dyn=None):
    """Constraint rows ``A F <= b`` for the enabled barriers.

    ``individual`` emits one row per constraint; ``aggregated`` emits the two
    soft-min rows the closed-form filter enforces.  Rows whose sensitivity is
    numerically zero are dropped when trivially satisfied and reported as
    infeasible otherwise.
    """
    if force_des is None:
        force_des = np.zeros(6)
    dyn = dyn if dyn is not None else dynamics_terms(state, model)

    if mode == "aggregated":
        ev = evaluate(state, model, cfg, force_des, weighted=weighted, dyn=dyn)
        a = np.vstack([ev.a_p, ev.a_v])
        b = np.array([ev.a_p @ force_des + ev.psi_p,
                      ev.a_v @ force_des + ev.psi_v])
        labels = [RowLabel(Family.POSITION), RowLabel(Family.VELOCITY)]
        return QpProblem(F_des=np.asarray(force_des, dtype=float), A=a, b=b,
                         labels=labels)
    if mode != "individual":
        raise ValueError(f"unknown constraint mode {mode!r}")

    qd = state.qdot
    rhs = np.concatenate([dyn.H, (dyn.C @ qd + dyn.G)[:, None]], axis=1)
    sol = np.linalg.solve(dyn.M, rhs)
    minv_h, minv_drift = sol[:, :6], sol[:, 6]

    ke = 0.5 * qd @ dyn.M @ qd
    rows, bs, labels = [], [], []

    a_p = dyn.H.T @ qd
    drift_base = dyn.G @ qd
    for j in range(cfg.n_position):
        axis, side = cfg.pos_axes[j], cfg.pos_sides[j]
        h = -ke + cfg.alpha_e * side * (cfg.pos_bounds[j] - state.q[axis])
        b_j = drift_base - cfg.alpha_e * side * qd[axis] + cfg.alpha_D * h
        label = RowLabel(Family.POSITION, axis, "max" if side > 0 else "min")
        if np.linalg.norm(a_p) <= ROW_NORM_MIN:
            if b_j < 0:
                raise QpInfeasibleError(
                    f"constraint {label} is violated and insensitive to force",
                    rows=[label])
            continue
        rows.append(a_p)
        bs.append(b_j)
        labels.append(label)

    for k in range(cfg.n_velocity):
        axis, side = cfg.vel_axes[k], cfg.vel_sides[k]
        h = side * (cfg.vel_bounds[k] - qd[axis])
        row = side * minv_h[axis]
        b_k = side * minv_drift[axis] + cfg.alpha_v * h
        rows.append(row)
        bs.append(b_k)
        labels.append(RowLabel(Family.VELOCITY, axis, "max" if side > 0 else "min"))

    return QpProblem(F_des=np.asarray(force_des, dtype=float),
                     A=np.array(rows), b=np.array(bs), labels=labels)


def solve_qp(problem, feas_tol=FEAS_TOL, max_iter=None):
    """Least-distance projection of ``F_des`` onto the rows' intersection."""
    t0 = time.perf_counter()
    a, b, f_des = problem.A, problem.b, problem.F_des
    n_c = a.shape[0]
    if n_c == 0:
        return QpSolution(F_star=f_des.copy(), active_set=[],
                          multipliers=np.zeros(0), iterations=0,
                          solve_time=time.perf_counter() - t0)
    row_norms = np.linalg.norm(a, axis=1)
    if np.any(row_norms <= ROW_NORM_MIN):
        raise ValueError("constraint rows must have positive norm")
    if max_iter is None:
        max_iter = max(10 * n_c, 10)

    work = []
    f = f_des.copy()
    lam_w = np.zeros(0)
    iterations = 0
    while True:
        iterations += 1
        if iterations > max_iter:
            raise QpCycleError(f"active-set iteration exceeded {max_iter} steps")

        if work:
            aw = a[work]
            y = np.linalg.solve(aw @ aw.T, b[work] - aw @ f_des)
            f = f_des + aw.T @ y
            lam_w = -2.0 * y
            neg = np.where(lam_w < -MULT_TOL)[0]
            if neg.size:
                # Most negative multiplier; ties resolved by lowest row index.
                order = np.lexsort((np.array(work)[neg], lam_w[neg]))
                work.pop(int(neg[order[0]]))
                continue
        else:
            f = f_des.copy()
            lam_w = np.zeros(0)

        viol = (a @ f - b) / row_norms
        if work:
            viol[work] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] <= feas_tol:
            break

        if work:
            aw_t = a[work].T
            coeff, *_ = np.linalg.lstsq(aw_t, a[j], rcond=None)
            if np.linalg.norm(aw_t @ coeff - a[j]) <= DEP_RTOL * row_norms[j]:
                # Row j lies in the span of the active rows.  Tightening it
                # requires relaxing an active row with a positive coefficient;
                # swap atomically so the blocker cannot be re-picked first.
                droppable = np.where(coeff > DEP_RTOL)[0]
                if droppable.size == 0:
                    members = [problem.labels[work[i]] for i in range(len(work))
                               if coeff[i] < -DEP_RTOL]
                    raise QpInfeasibleError(
                        "conflicting constraint rows admit no feasible force",
                        rows=members + [problem.labels[j]])
                order = np.lexsort((np.array(work)[droppable], -coeff[droppable]))
                work.pop(int(droppable[order[0]]))
        work.append(j)

    multipliers = np.zeros(n_c)
    multipliers[work] = lam_w
    return QpSolution(F_star=f, active_set=sorted(work), multipliers=multipliers,
                      iterations=iterations, solve_time=time.perf_counter() - t0)


def _branch_from_families(families):
    if not families:
        return Branch.NONE_ACTIVE
    if families == {Family.POSITION}:
        return Branch.POSITION_ACTIVE
    if families == {Family.VELOCITY}:
        return Branch.VELOCITY_ACTIVE
    return Branch.BOTH_ACTIVE


def _constraint_label(cfg, family, idx):
    if family is Family.POSITION:
        axis, side = cfg.pos_axes[idx], cfg.pos_sides[idx]
    else:
        axis, side = cfg.vel_axes[idx], cfg.vel_sides[idx]
    return RowLabel(family, int(axis), "max" if side > 0 else "min")


def _qp_filter_jit(state, model, force_des, cfg, dyn):
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    a, b, fam, source, n_rows, bad, t_build = fastpath.qp_build_kernel(
        state.q, state.qdot, np.ascontiguousarray(dyn.M[3:, 3:]), dyn.M[0, 0],
        dyn.C, dyn.G, dyn.H,
        cfg.pos_axes, cfg.pos_sides, cfg.pos_bounds, cfg.alpha_e, cfg.alpha_D,
        cfg.vel_axes, cfg.vel_sides, cfg.vel_bounds, cfg.alpha_v)
    if bad >= 0:
        raise QpInfeasibleError(
            "constraint is violated and insensitive to force",
            rows=[_constraint_label(cfg, Family.POSITION, bad)])
    f, lam, in_work, iterations, status, conflict, t_solve = fastpath.qp_solve_kernel(
        a[:n_rows], b[:n_rows], force_des, FEAS_TOL, max(10 * n_rows, 10))
    elapsed = t_build + t_solve

    if status == fastpath.QP_INFEASIBLE:
        rows = [_constraint_label(cfg,
                                  Family.POSITION if fam[i] == 0 else Family.VELOCITY,
                                  int(source[i]))
                for i in range(n_rows) if conflict[i]]
        raise QpInfeasibleError("conflicting constraint rows admit no feasible force",
                               rows=rows)
    if status == fastpath.QP_CYCLE:
        raise QpCycleError("active-set iteration exceeded its cycling guard")

    families = {Family.POSITION if fam[i] == 0 else Family.VELOCITY
                for i in range(n_rows) if in_work[i]}
    return FilterDecision(F_safe=f - force_des, F_out=f,
                          branch=_branch_from_families(families),
                          gamma_det=float("nan"), gamma=None, psi=None,
                          solve_time=elapsed)


def qp_filter(state, model, force_des, cfg, weighted=False, dyn=None,
              mode="individual", engine="auto"):
    """Safety filter backed by the QP over individual constraint rows."""
    if (mode == "individual" and not weighted
            and _resolve_engine(engine) == "jit"):
        return _qp_filter_jit(state, model, force_des, cfg, dyn)
    t0 = time.perf_counter()
    problem = build_constraints(state, model, cfg, mode=mode,
                                force_des=force_des, weighted=weighted, dyn=dyn)
    sol = solve_qp(problem)
    elapsed = time.perf_counter() - t0

    branch = _branch_from_families(
        {problem.labels[i].family for i in sol.active_set})
    return FilterDecision(F_safe=sol.F_star - force_des, F_out=sol.F_star,
                          branch=branch, gamma_det=float("nan"), gamma=None,
                          psi=None, solve_time=elapsed)
