"""Closed-form minimum-norm safety filtering.

The filter corrects a nominal force so the two aggregated barrier residuals
stay nonnegative.  Because a correction ``dF`` updates each residual exactly
as ``psi - a' dF``, the minimum-norm correction is the solution of a
two-constraint least-distance problem and admits a closed form, resolved by
direct case analysis over the optimal active set:

* no violation:      dF = 0
* one active:        dF = (psi / |a|^2) a       (residual driven exactly to 0)
* both active:       dF = A inv(G) psi          (A = [a_p a_v], G = A'A)

A candidate single projection is kept only when it leaves the other residual
nonnegative; a candidate two-active solution only when both its multipliers
are nonnegative.  Exactly one candidate survives, so the output matches the
corresponding quadratic program exactly, including the cross-coupled cases
where a constraint becomes active even though its nominal residual was
nonnegative.

Well-posedness of the two-active branch is equivalent to positive
definiteness of the 2x2 Gram matrix, diagnosed through the identity
``det = |a_p|^2 |a_v|^2 - (a_p . a_v)^2``.
"""

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import fastpath
from .barriers import BarrierEval, evaluate
from .dynamics import dynamics_terms
from .errors import DegenerateSensitivityError, GramSingularError

# Relative Gram-determinant threshold: det <= tol * |a_p|^2 |a_v|^2 is singular.
GRAM_REL_TOL = 1e-12

# |a|^2 below this means the active constraint cannot be moved by any force.
SENSITIVITY_TOL = 1e-18

FALLBACK_POLICIES = ("error", "position_priority", "damped")


class Branch(Enum):
    NONE_ACTIVE = "none_active"
    POSITION_ACTIVE = "position_active"
    VELOCITY_ACTIVE = "velocity_active"
    BOTH_ACTIVE = "both_active"


class GramCause(Enum):
    ZERO_VELOCITY = "zero_velocity"
    COLLINEAR = "collinear"
    OK = "ok"


@dataclass
class GramDiagnosis:
    det: float
    norm_ap: float
    norm_av: float
    cosine: float
    singular: bool
    cause: GramCause


@dataclass(slots=True)
class FilterDecision:
    """Outcome of one filter call."""

    F_safe: np.ndarray          # correction dF
    F_out: np.ndarray           # F_des + F_safe
    branch: Branch
    gamma_det: float            # Gram determinant (nan if never formed)
    gamma: np.ndarray           # 2x2 Gram matrix, or None
    psi: np.ndarray             # residual pair at the nominal force, or None
    solve_time: float
    fallback_applied: str = None
    evaluation: object = None   # BarrierEval the decision was computed from


def gram_diagnosis(a_p, a_v, tolerance=GRAM_REL_TOL):
    """Classify the well-posedness of the two-active-constraint system."""
    a_p = np.asarray(a_p, dtype=float)
    a_v = np.asarray(a_v, dtype=float)
    app = float(a_p @ a_p)
    avv = float(a_v @ a_v)
    apv = float(a_p @ a_v)
    det = app * avv - apv * apv
    norm_ap, norm_av = np.sqrt(app), np.sqrt(avv)
    if norm_ap * norm_av > 0:
        cosine = float(np.clip(apv / (norm_ap * norm_av), -1.0, 1.0))
    else:
        cosine = 0.0
    if norm_ap <= tolerance:
        return GramDiagnosis(det, norm_ap, norm_av, cosine, True, GramCause.ZERO_VELOCITY)
    if det <= tolerance * app * avv:
        return GramDiagnosis(det, norm_ap, norm_av, cosine, True, GramCause.COLLINEAR)
    return GramDiagnosis(det, norm_ap, norm_av, cosine, False, GramCause.OK)


def _projection(psi, a, family):
    aa = float(a @ a)
    if aa <= SENSITIVITY_TOL:
        raise DegenerateSensitivityError(
            f"{family} constraint is violated but its force sensitivity is zero")
    return (psi / aa) * a


def _two_active(a_p, a_v, psi_p, psi_v, app, avv, apv, det):
    inv = np.array([[avv, -apv], [-apv, app]]) / det
    mu = inv @ np.array([psi_p, psi_v])
    return mu[0] * a_p + mu[1] * a_v


def fallback_on_singularity(a_p, a_v, psi_p, psi_v, policy, diagnosis):
    """Resolve a singular two-active system according to ``policy``.

    ``error`` re-raises; ``position_priority`` applies the position-only
    projection; ``damped`` regularizes the Gram matrix with
    ``lambda = 1e-8 * trace`` before inverting.
    Returns ``(correction, branch)``.
    """
    if policy == "error":
        raise GramSingularError(
            f"two active constraints with singular Gram matrix ({diagnosis.cause.value})",
            diagnosis=diagnosis)
    if policy == "position_priority":
        return _projection(psi_p, a_p, "position"), Branch.POSITION_ACTIVE
    if policy == "damped":
        app = float(a_p @ a_p)
        avv = float(a_v @ a_v)
        apv = float(a_p @ a_v)
        lam = 1e-8 * (app + avv)
        if lam <= 0:
            raise DegenerateSensitivityError("both sensitivities are zero")
        gram = np.array([[app + lam, apv], [apv, avv + lam]])
        mu = np.linalg.solve(gram, np.array([psi_p, psi_v]))
        return mu[0] * a_p + mu[1] * a_v, Branch.BOTH_ACTIVE
    raise ValueError(f"unknown fallback policy {policy!r}")


def _piecewise_law(a_p, a_v, psi_p, psi_v, fallback):
    """Complete active-set case analysis; returns (dF, branch, gram, det, fb)."""
    app = float(a_p @ a_p)
    avv = float(a_v @ a_v)
    apv = float(a_p @ a_v)
    det = app * avv - apv * apv
    gram = np.array([[app, apv], [apv, avv]])

    viol_p = psi_p < 0.0
    viol_v = psi_v < 0.0

    if not viol_p and not viol_v:
        return np.zeros(6), Branch.NONE_ACTIVE, gram, det, None

    def both_active():
        diag = gram_diagnosis(a_p, a_v)
        if diag.singular:
            df, br = fallback_on_singularity(a_p, a_v, psi_p, psi_v, fallback, diag)
            return df, br, fallback
        return (_two_active(a_p, a_v, psi_p, psi_v, app, avv, apv, det),
                Branch.BOTH_ACTIVE, None)

    if viol_p and not viol_v:
        df = _projection(psi_p, a_p, "position")
        if psi_v - a_v @ df >= 0.0:
            return df, Branch.POSITION_ACTIVE, gram, det, None
        df, br, fb = both_active()
        return df, br, gram, det, fb

    if viol_v and not viol_p:
        df = _projection(psi_v, a_v, "velocity")
        if psi_p - a_p @ df >= 0.0:
            return df, Branch.VELOCITY_ACTIVE, gram, det, None
        df, br, fb = both_active()
        return df, br, gram, det, fb

    # Both residuals violated: the two-active solution is optimal unless one
    # of its multipliers goes negative, in which case that constraint drops.
    diag = gram_diagnosis(a_p, a_v)
    if diag.singular:
        df, br = fallback_on_singularity(a_p, a_v, psi_p, psi_v, fallback, diag)
        return df, br, gram, det, fallback
    mult_p = -(avv * psi_p - apv * psi_v) / det
    mult_v = -(app * psi_v - apv * psi_p) / det
    if mult_p < 0.0:
        return (_projection(psi_v, a_v, "velocity"), Branch.VELOCITY_ACTIVE,
                gram, det, None)
    if mult_v < 0.0:
        return (_projection(psi_p, a_p, "position"), Branch.POSITION_ACTIVE,
                gram, det, None)
    return (_two_active(a_p, a_v, psi_p, psi_v, app, avv, apv, det),
            Branch.BOTH_ACTIVE, gram, det, None)


_POLICY_CODES = {"error": fastpath.POLICY_ERROR,
                 "position_priority": fastpath.POLICY_POSITION_PRIORITY,
                 "damped": fastpath.POLICY_DAMPED}
_BRANCH_FROM_CODE = {fastpath.BR_NONE: Branch.NONE_ACTIVE,
                     fastpath.BR_POSITION: Branch.POSITION_ACTIVE,
                     fastpath.BR_VELOCITY: Branch.VELOCITY_ACTIVE,
                     fastpath.BR_BOTH: Branch.BOTH_ACTIVE}


def _resolve_engine(engine):
    if engine == "auto":
        return "jit" if fastpath.AVAILABLE else "numpy"
    if engine == "jit" and not fastpath.AVAILABLE:
        raise ValueError("jit engine requested but numba is unavailable")
    if engine not in ("jit", "numpy"):
        raise ValueError(f"unknown engine {engine!r}")
    return engine


def _closed_form_jit(state, model, force_des, cfg, weighted, dyn, fallback):
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    out = fastpath.cf_kernel(
        state.q, state.qdot, np.ascontiguousarray(dyn.M[3:, 3:]), dyn.M[0, 0],
        dyn.C, dyn.G, dyn.H,
        cfg.pos_axes, cfg._pos_s_ae, cfg._pos_sb_ae,
        cfg.vel_axes, cfg.vel_sides, cfg._vel_sb,
        cfg.alpha_Dj if weighted else cfg._ones_p,
        cfg.alpha_vk if weighted else cfg._ones_v,
        cfg.lse_beta, cfg.alpha_D, cfg.alpha_v,
        force_des, _POLICY_CODES[fallback])

    (df, h_d, h_v, hbar_d, hbar_v, pi_p, pi_v, a_p, a_v,
     psi_p, psi_v, app, apv, avv, det, branch_code, fb, elapsed) = out
    if branch_code == fastpath.BR_ERR_SINGULAR:
        raise GramSingularError(
            "two active constraints with singular Gram matrix",
            diagnosis=gram_diagnosis(a_p, a_v))
    if branch_code == fastpath.BR_ERR_DEGENERATE:
        raise DegenerateSensitivityError(
            "violated constraint with zero force sensitivity")
    ev = BarrierEval(h_D=h_d, h_v=h_v, hbar_D=float(hbar_d), hbar_v=float(hbar_v),
                     pi_p=pi_p, pi_v=pi_v, a_p=a_p, a_v=a_v,
                     psi_p=float(psi_p), psi_v=float(psi_v))
    gram = np.array([[app, apv], [apv, avv]])
    return FilterDecision(F_safe=df, F_out=force_des + df,
                          branch=_BRANCH_FROM_CODE[int(branch_code)],
                          gamma_det=float(det), gamma=gram,
                          psi=np.array([psi_p, psi_v]), solve_time=elapsed,
                          fallback_applied=fallback if fb else None,
                          evaluation=ev)


def closed_form_filter(state, model, force_des, cfg, weighted=False, dyn=None,
                       evaluation=None, fallback="damped", engine="auto"):
    """Minimum-norm safe force for the aggregated constraint pair.

    ``engine`` selects the numpy reference path or its compiled twin; both
    evaluate the same formulas.  A precomputed ``evaluation`` always routes
    through the reference path.
    """
    if fallback not in FALLBACK_POLICIES:
        raise ValueError(f"unknown fallback policy {fallback!r}")
    if evaluation is None and _resolve_engine(engine) == "jit":
        return _closed_form_jit(state, model, force_des, cfg, weighted, dyn,
                                fallback)
    t0 = time.perf_counter()
    ev = evaluation if evaluation is not None else evaluate(
        state, model, cfg, force_des, weighted=weighted, dyn=dyn)
    df, branch, gram, det, fb = _piecewise_law(ev.a_p, ev.a_v, ev.psi_p, ev.psi_v,
                                               fallback)
    elapsed = time.perf_counter() - t0
    return FilterDecision(F_safe=df, F_out=force_des + df, branch=branch,
                          gamma_det=det, gamma=gram,
                          psi=np.array([ev.psi_p, ev.psi_v]),
                          solve_time=elapsed, fallback_applied=fb,
                          evaluation=ev)


def single_constraint_filter(state, model, force_des, cfg, j=0, k=0, dyn=None,
                             fallback="damped", engine="auto"):
    """Closed-form filter for one position and one velocity constraint.

    Indices address the enabled-constraint enumeration of ``cfg``.  With a
    single constraint per family the soft-min layer is the identity, so this
    coincides bit-for-bit with ``closed_form_filter`` on the restricted
    configuration.
    """
    sub = cfg.restrict(j, k)
    return closed_form_filter(state, model, force_des, sub, dyn=dyn,
                              fallback=fallback, engine=engine)
