"""Barrier functions and their log-sum-exp soft-min composition.

Two constraint families guard the platform:

* position limits, enforced through an energy-augmented barrier
  ``hD = -0.5 qd' M qd + alpha_e * hp`` with ``hp`` the signed distance to the
  bound (this lowers the barrier's relative degree to one), and
* velocity limits ``hv = qdot_max - qd_k`` (lower bounds analogously).

Each family is aggregated into a single smooth soft-min via
``-(1/beta) log sum(exp(-beta * s_j * h_j))`` with optional per-constraint
positive scalings ``s_j``.  From the aggregate we derive, at a given nominal
force, the force-sensitivity vectors and the residuals of the two barrier
inequalities; residuals are affine in the force and a correction ``dF``
updates them exactly as ``psi - a' dF``.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import AXIS_NAMES, _solve3_sym, dynamics_terms, mass_matrix_partials
from .errors import ConfigError

UPPER = 1.0
LOWER = -1.0


@dataclass
class BarrierConfig:
    """Bounds, gains, and aggregation parameters.

    Bound vectors use ``nan`` for axes left unconstrained.  Enabled
    constraints are enumerated in a fixed order (upper bounds by axis, then
    lower bounds by axis); the per-constraint scaling arrays align with that
    order.
    """

    q_max: np.ndarray = None
    q_min: np.ndarray = None
    qdot_max: np.ndarray = None
    qdot_min: np.ndarray = None
    alpha_e: float = 1.0
    alpha_D: float = 1.0
    alpha_v: float = 1.0
    lse_beta: float = 2.0e4
    alpha_Dj: np.ndarray = None
    alpha_vk: np.ndarray = None

    # Filled by __post_init__: per-constraint axis / side / bound arrays.
    pos_axes: np.ndarray = field(init=False, repr=False)
    pos_sides: np.ndarray = field(init=False, repr=False)
    pos_bounds: np.ndarray = field(init=False, repr=False)
    vel_axes: np.ndarray = field(init=False, repr=False)
    vel_sides: np.ndarray = field(init=False, repr=False)
    vel_bounds: np.ndarray = field(init=False, repr=False)
    # Signed scatter matrix: column k has side_k at row axis_k.
    vel_scatter: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        def clean(vec):
            if vec is None:
                return np.full(6, np.nan)
            arr = np.array([np.nan if v is None else float(v) for v in np.ravel(vec)])
            if arr.shape != (6,):
                raise ConfigError("bound vectors must have six entries")
            return arr

        self.q_max = clean(self.q_max)
        self.q_min = clean(self.q_min)
        self.qdot_max = clean(self.qdot_max)
        self.qdot_min = clean(self.qdot_min)

        for name, hi, lo in (("q", self.q_max, self.q_min),
                             ("qdot", self.qdot_max, self.qdot_min)):
            both = ~np.isnan(hi) & ~np.isnan(lo)
            bad = both & (hi <= lo)
            if np.any(bad):
                axis = AXIS_NAMES[int(np.argmax(bad))]
                raise ConfigError(f"{name}_max must exceed {name}_min on axis {axis}")

        if not (self.alpha_e > 0 and self.alpha_D > 0 and self.alpha_v > 0
                and self.lse_beta > 0):
            raise ConfigError("alpha_e, alpha_D, alpha_v, and beta must be positive")

        self.pos_axes, self.pos_sides, self.pos_bounds = self._enumerate(
            self.q_max, self.q_min)
        self.vel_axes, self.vel_sides, self.vel_bounds = self._enumerate(
            self.qdot_max, self.qdot_min)
        if len(self.pos_axes) == 0 or len(self.vel_axes) == 0:
            raise ConfigError("at least one position and one velocity bound are required")

        self.alpha_Dj = self._clean_scalings(self.alpha_Dj, len(self.pos_axes), "alpha_Dj")
        self.alpha_vk = self._clean_scalings(self.alpha_vk, len(self.vel_axes), "alpha_vk")

        self.vel_scatter = np.zeros((6, len(self.vel_axes)))
        for k, (axis, side) in enumerate(zip(self.vel_axes, self.vel_sides)):
            self.vel_scatter[axis, k] = side

        # Cached products for the hot evaluation path.
        self._pos_sb_ae = self.alpha_e * self.pos_sides * self.pos_bounds
        self._pos_s_ae = self.alpha_e * self.pos_sides
        self._vel_sb = self.vel_sides * self.vel_bounds
        self._ones_p = np.ones(len(self.pos_axes))
        self._ones_v = np.ones(len(self.vel_axes))

    @staticmethod
    def _enumerate(hi, lo):
        axes, sides, bounds = [], [], []
        for axis in range(6):
            if not np.isnan(hi[axis]):
                axes.append(axis)
                sides.append(UPPER)
                bounds.append(hi[axis])
        for axis in range(6):
            if not np.isnan(lo[axis]):
                axes.append(axis)
                sides.append(LOWER)
                bounds.append(lo[axis])
        return np.array(axes, dtype=int), np.array(sides), np.array(bounds)

    @staticmethod
    def _clean_scalings(vec, n, name):
        if vec is None:
            return np.ones(n)
        arr = np.asarray(vec, dtype=float).ravel()
        if arr.shape != (n,):
            raise ConfigError(f"{name} must have one entry per enabled constraint ({n})")
        if np.any(arr <= 0):
            raise ConfigError(f"{name} entries must be positive")
        return arr

    @property
    def n_position(self):
        return len(self.pos_axes)

    @property
    def n_velocity(self):
        return len(self.vel_axes)

    def position_labels(self):
        return [f"{AXIS_NAMES[a]}_{'max' if s > 0 else 'min'}"
                for a, s in zip(self.pos_axes, self.pos_sides)]

    def velocity_labels(self):
        return [f"{AXIS_NAMES[a]}_{'max' if s > 0 else 'min'}"
                for a, s in zip(self.vel_axes, self.vel_sides)]

    def restrict(self, j, k):
        """Config with only position constraint j and velocity constraint k."""
        q_max = np.full(6, np.nan)
        q_min = np.full(6, np.nan)
        qdot_max = np.full(6, np.nan)
        qdot_min = np.full(6, np.nan)
        if self.pos_sides[j] > 0:
            q_max[self.pos_axes[j]] = self.pos_bounds[j]
        else:
            q_min[self.pos_axes[j]] = self.pos_bounds[j]
        if self.vel_sides[k] > 0:
            qdot_max[self.vel_axes[k]] = self.vel_bounds[k]
        else:
            qdot_min[self.vel_axes[k]] = self.vel_bounds[k]
        return BarrierConfig(
            q_max=q_max, q_min=q_min, qdot_max=qdot_max, qdot_min=qdot_min,
            alpha_e=self.alpha_e, alpha_D=self.alpha_D, alpha_v=self.alpha_v,
            lse_beta=self.lse_beta,
            alpha_Dj=self.alpha_Dj[[j]], alpha_vk=self.alpha_vk[[k]])


@dataclass(slots=True)
class BarrierEval:
    """Everything the filters need at one (state, nominal force) pair."""

    h_D: np.ndarray            # per-constraint energy barrier values
    h_v: np.ndarray            # per-constraint velocity barrier values
    hbar_D: float              # soft-min aggregate of h_D
    hbar_v: float              # soft-min aggregate of h_v
    pi_p: np.ndarray           # softmax weights over position constraints
    pi_v: np.ndarray           # softmax weights over velocity constraints
    a_p: np.ndarray            # force sensitivity of the position aggregate
    a_v: np.ndarray            # force sensitivity of the velocity aggregate
    psi_p: float               # position residual at the nominal force
    psi_v: float               # velocity residual at the nominal force


# ---------------------------------------------------------------------------
# Scalar barrier values
# ---------------------------------------------------------------------------


def position_barrier(state, cfg, j):
    """Signed margin of position constraint j: bound - q (upper) or q - bound."""
    s = cfg.pos_sides[j]
    return s * (cfg.pos_bounds[j] - state.q[cfg.pos_axes[j]])


def velocity_barrier(state, cfg, k):
    s = cfg.vel_sides[k]
    return s * (cfg.vel_bounds[k] - state.qdot[cfg.vel_axes[k]])


def energy_barrier(state, model, cfg, j, dyn=None):
    """Energy-augmented position barrier: -KE + alpha_e * hp."""
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    ke = 0.5 * state.qdot @ dyn.M @ state.qdot
    return -ke + cfg.alpha_e * position_barrier(state, cfg, j)


def _position_margins(state, cfg):
    return cfg.pos_sides * (cfg.pos_bounds - state.q[cfg.pos_axes])


def _velocity_margins(state, cfg):
    return cfg.vel_sides * (cfg.vel_bounds - state.qdot[cfg.vel_axes])


# ---------------------------------------------------------------------------
# Log-sum-exp composition
# ---------------------------------------------------------------------------


def softmin(values, beta, scalings=None):
    """Smooth minimum ``-(1/beta) log sum exp(-beta s_j v_j)``.

    Max-shifted so arbitrarily large ``|beta * v|`` cannot overflow.  With a
    single value the result is exact regardless of ``beta``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("softmin of an empty vector")
    if beta <= 0:
        raise ValueError("beta must be positive")
    z = beta * values
    if scalings is not None:
        scalings = np.asarray(scalings, dtype=float)
        if scalings.shape != values.shape or np.any(scalings <= 0):
            raise ValueError("scalings must be positive and match values")
        z = z * scalings
    zmin = np.min(z)
    return (zmin - np.log(np.sum(np.exp(zmin - z)))) / beta


def softmax_weights(values, beta, scalings=None):
    """Weights ``exp(-beta s_j v_j) / sum(...)``; nonnegative, sum to one."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("softmax_weights of an empty vector")
    if beta <= 0:
        raise ValueError("beta must be positive")
    z = beta * values
    if scalings is not None:
        scalings = np.asarray(scalings, dtype=float)
        if scalings.shape != values.shape or np.any(scalings <= 0):
            raise ValueError("scalings must be positive and match values")
        z = z * scalings
    w = np.exp(np.min(z) - z)
    return w / np.sum(w)


# ---------------------------------------------------------------------------
# Aggregate evaluation
# ---------------------------------------------------------------------------


def _lse(values, beta, scalings):
    """Fused soft-min and softmax weights over ``beta * scalings * values``."""
    z = beta * values
    if scalings is not None:
        z = z * scalings
    zmin = z.min()
    w = np.exp(zmin - z)
    total = w.sum()
    return (zmin - np.log(total)) / beta, w / total


def _minv_apply(dyn, x):
    """Apply inv(M) using the block-diagonal structure of the mass matrix."""
    out = np.empty_like(x)
    out[:3] = x[:3] / dyn.M[0, 0]
    out[3:] = _solve3_sym(dyn.M[3:, 3:], x[3:])
    return out


def evaluate(state, model, cfg, force_des, weighted=False, dyn=None):
    """Full barrier evaluation at a state and nominal force.

    ``weighted`` switches on the per-constraint scalings ``alpha_Dj`` /
    ``alpha_vk`` inside the soft-min; with unit scalings the two modes
    coincide exactly.

    The aggregates never need the full matrix inv(M) H: inv(M) is applied to
    two single vectors (the drift acceleration and the weighted velocity
    direction), which keeps this path light compared to per-row QP assembly.
    """
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    qd = state.qdot
    m, h, g = dyn.M, dyn.H, dyn.G
    m_rot = m[3:, 3:]
    mass = m[0, 0]
    pos_axes, vel_axes = cfg.pos_axes, cfg.vel_axes
    pos_s_ae = cfg._pos_s_ae

    scal_p = cfg.alpha_Dj if weighted else None
    scal_v = cfg.alpha_vk if weighted else None

    ke = 0.5 * (qd @ (m @ qd))
    aeq = pos_s_ae * state.q[pos_axes]
    h_d = cfg._pos_sb_ae - aeq - ke
    h_v = cfg._vel_sb - cfg.vel_sides * qd[vel_axes]

    hbar_d, pi_p = _lse(h_d, cfg.lse_beta, scal_p)
    hbar_v, pi_v = _lse(h_v, cfg.lse_beta, scal_v)

    hf = h @ force_des
    drift = hf - dyn.C @ qd - g
    pi_p_s = pi_p if scal_p is None else scal_p * pi_p
    pi_v_s = pi_v if scal_v is None else scal_v * pi_v
    weights6 = cfg.vel_scatter @ pi_v_s

    qdd_des = np.empty(6)
    qdd_des[:3] = drift[:3] / mass
    qdd_des[3:] = _solve3_sym(m_rot, drift[3:])
    minv_w = np.empty(6)
    minv_w[:3] = weights6[:3] / mass
    minv_w[3:] = _solve3_sym(m_rot, weights6[3:])

    a_p = pi_p_s.sum() * (h.T @ qd)
    a_v = h.T @ minv_w

    # Per-constraint barrier rates at the nominal force.
    common = g @ qd - qd @ hf
    hdot_d = common - pos_s_ae * qd[pos_axes]
    hdot_v = -cfg.vel_sides * qdd_des[vel_axes]

    psi_p = float(pi_p_s @ hdot_d + cfg.alpha_D * hbar_d)
    psi_v = float(pi_v_s @ hdot_v + cfg.alpha_v * hbar_v)

    return BarrierEval(h_D=h_d, h_v=h_v, hbar_D=float(hbar_d), hbar_v=float(hbar_v),
                       pi_p=pi_p, pi_v=pi_v, a_p=a_p, a_v=a_v,
                       psi_p=psi_p, psi_v=psi_v)


def _sensitivities(dyn, qd, minv_h, pi_p, pi_v, scal_p, scal_v, cfg):
    a_p = float(np.dot(scal_p, pi_p)) * (dyn.H.T @ qd)
    weights6 = np.zeros(6)
    np.add.at(weights6, cfg.vel_axes, cfg.vel_sides * scal_v * pi_v)
    a_v = minv_h.T @ weights6
    return a_p, a_v


def sensitivity_vectors(state, model, evaluation, cfg, weighted=False, dyn=None):
    """Force sensitivities of the two aggregates, from precomputed weights."""
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    scal_p = cfg.alpha_Dj if weighted else np.ones(cfg.n_position)
    scal_v = cfg.alpha_vk if weighted else np.ones(cfg.n_velocity)
    minv_h = np.linalg.solve(dyn.M, dyn.H)
    return _sensitivities(dyn, state.qdot, minv_h, evaluation.pi_p, evaluation.pi_v,
                          scal_p, scal_v, cfg)


def residuals(state, model, force_des, evaluation, cfg, weighted=False, dyn=None):
    """Aggregate barrier residuals evaluated at ``force_des``.

    A correction ``dF`` updates each residual exactly as ``psi - a' dF``.
    """
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    qd = state.qdot
    scal_p = cfg.alpha_Dj if weighted else np.ones(cfg.n_position)
    scal_v = cfg.alpha_vk if weighted else np.ones(cfg.n_velocity)

    rhs = np.concatenate([dyn.H, (dyn.C @ qd + dyn.G)[:, None]], axis=1)
    sol = np.linalg.solve(dyn.M, rhs)
    minv_h, minv_drift = sol[:, :6], sol[:, 6]

    common = -qd @ (dyn.H @ force_des) + dyn.G @ qd
    hdot_d = common - cfg.alpha_e * cfg.pos_sides * qd[cfg.pos_axes]
    qdd_des = minv_h @ force_des - minv_drift
    hdot_v = -cfg.vel_sides * qdd_des[cfg.vel_axes]

    psi_p = float(np.dot(scal_p * evaluation.pi_p, hdot_d)
                  + cfg.alpha_D * evaluation.hbar_D)
    psi_v = float(np.dot(scal_v * evaluation.pi_v, hdot_v)
                  + cfg.alpha_v * evaluation.hbar_v)
    return psi_p, psi_v


def barrier_gradients(state, model, cfg, weighted=False):
    """State-space gradients of the two aggregates, each a 12-vector.

    Layout is ``[d/dq, d/dqdot]``.  Uses the exact chain rule through the
    softmax weights and the analytic mass-matrix partials.
    """
    m, dm = mass_matrix_partials(state, model)
    qd = state.qdot
    scal_p = cfg.alpha_Dj if weighted else np.ones(cfg.n_position)
    scal_v = cfg.alpha_vk if weighted else np.ones(cfg.n_velocity)

    ke = 0.5 * qd @ m @ qd
    h_d = -ke + cfg.alpha_e * _position_margins(state, cfg)
    h_v = _velocity_margins(state, cfg)
    pi_p = softmax_weights(h_d, cfg.lse_beta, scal_p)
    pi_v = softmax_weights(h_v, cfg.lse_beta, scal_v)

    wsum_p = float(np.dot(scal_p, pi_p))
    grad_d = np.zeros(12)
    # KE depends on q through M and on qdot directly; every position
    # constraint shares those terms.
    ke_q = 0.5 * np.einsum("ajk,j,k->a", dm, qd, qd)
    grad_d[:6] -= wsum_p * ke_q
    grad_d[6:] -= wsum_p * (m @ qd)
    np.add.at(grad_d[:6], cfg.pos_axes,
              -cfg.alpha_e * scal_p * pi_p * cfg.pos_sides)

    grad_v = np.zeros(12)
    np.add.at(grad_v[6:], cfg.vel_axes, -scal_v * pi_v * cfg.vel_sides)
    return grad_d, grad_v
