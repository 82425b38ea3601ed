"""Nominal tracking controller: LQR state feedback through exact inverse
dynamics.

The feedback-linearized plant is a stack of six double integrators, so for
diagonal weights the continuous Riccati equation splits into six 2x2 problems
with closed-form positive roots.  Dense (non-diagonal) weights fall back to a
Newton matrix-sign iteration on the Hamiltonian.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import dynamics_terms
from .errors import ConfigError


@dataclass
class LqrWeights:
    """State weight Q (12x12, PSD) and input weight R (6x6, PD)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.Q.shape != (12, 12) or self.R.shape != (6, 6):
            raise ConfigError("Q must be 12x12 and R 6x6")
        if (np.max(np.abs(self.Q - self.Q.T)) > 1e-12
                or np.max(np.abs(self.R - self.R.T)) > 1e-12):
            raise ConfigError("Q and R must be symmetric")
        if np.min(np.linalg.eigvalsh(self.Q)) < -1e-12:
            raise ConfigError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ConfigError("R must be positive definite")

    @classmethod
    def from_diagonal(cls, q_pos, q_vel, r):
        q_pos = np.asarray(q_pos, dtype=float).reshape(6)
        q_vel = np.asarray(q_vel, dtype=float).reshape(6)
        r = np.asarray(r, dtype=float).reshape(6)
        return cls(Q=np.diag(np.concatenate([q_pos, q_vel])), R=np.diag(r))

    def is_diagonal(self):
        return (np.count_nonzero(self.Q - np.diag(np.diag(self.Q))) == 0
                and np.count_nonzero(self.R - np.diag(np.diag(self.R))) == 0)


@dataclass
class TrackingTarget:
    q_des: np.ndarray
    qdot_des: np.ndarray

    def __post_init__(self):
        self.q_des = np.asarray(self.q_des, dtype=float).reshape(6)
        self.qdot_des = np.asarray(self.qdot_des, dtype=float).reshape(6)
        if not (np.all(np.isfinite(self.q_des)) and np.all(np.isfinite(self.qdot_des))):
            raise ConfigError("tracking target must be finite")

    @property
    def x(self):
        return np.concatenate([self.q_des, self.qdot_des])


def _care_sign_iteration(a, b, q, r):
    """Riccati solution via the matrix sign of the Hamiltonian."""
    n = a.shape[0]
    rinv_bt = np.linalg.solve(r, b.T)
    ham = np.block([[a, -b @ rinv_bt], [-q, -a.T]])
    z = ham.copy()
    for _ in range(100):
        z_inv = np.linalg.inv(z)
        # Determinant scaling accelerates convergence.
        mu = abs(np.linalg.det(z)) ** (-1.0 / (2 * n))
        z_next = 0.5 * (mu * z + z_inv / mu)
        if np.linalg.norm(z_next - z) <= 1e-14 * np.linalg.norm(z):
            z = z_next
            break
        z = z_next
    w = z + np.eye(2 * n)
    # Columns of [w11; w21] span the stable subspace complement: solve
    # [w12; w22] P = -[w11; w21] in the least-squares sense.
    top = np.vstack([w[:n, n:], w[n:, n:]])
    rhs = -np.vstack([w[:n, :n], w[n:, :n]])
    p, *_ = np.linalg.lstsq(top, rhs, rcond=None)
    return 0.5 * (p + p.T)


def lqr_gain(weights):
    """Gain K (6x12) for the double-integrator pair xdot = [[0,I],[0,0]]x + [[0],[I]]u."""
    if weights.is_diagonal():
        q_pos = np.diag(weights.Q)[:6]
        q_vel = np.diag(weights.Q)[6:]
        r = np.diag(weights.R)
        k = np.zeros((6, 12))
        for i in range(6):
            # 2x2 Riccati closed form: p12 = sqrt(qp r), p22 = sqrt(r qv + 2 r p12).
            p12 = np.sqrt(q_pos[i] * r[i])
            p22 = np.sqrt(r[i] * q_vel[i] + 2.0 * r[i] * p12)
            k[i, i] = p12 / r[i]
            k[i, 6 + i] = p22 / r[i]
        return k

    a = np.zeros((12, 12))
    a[:6, 6:] = np.eye(6)
    b = np.zeros((12, 6))
    b[6:, :] = np.eye(6)
    p = _care_sign_iteration(a, b, weights.Q, weights.R)
    return np.linalg.solve(weights.R, b.T @ p)


def u_des(state, target, k):
    """Commanded acceleration: full-state feedback on the tracking error."""
    return -k @ (state.x - target.x)


def f_des(state, model, u, dyn=None):
    """Leg forces realizing acceleration ``u``: inverse dynamics J'(M u + C qd + G)."""
    dyn = dyn if dyn is not None else dynamics_terms(state, model)
    return dyn.J.T @ (dyn.M @ u + dyn.C @ state.qdot + dyn.G)
