"""Stewart platform geometry, kinematics, and rigid-body dynamics.

The moving platform is modelled as a single rigid body (legs are treated as
massless force lines).  Pose is ``q = [X, Y, Z, roll, pitch, yaw]`` with the
Z-Y-X Euler convention: the platform rotation is ``R = Rz(yaw) @ Ry(pitch) @
Rx(roll)``.  The equations of motion are

    M(q) qdd + C(q, qd) qd + G(q) = H(q) F,      H = inv(J).T

where ``F`` holds the six axial leg forces and ``J`` is the kinematic
Jacobian mapping pose rates to leg-length rates.  ``C`` is built from the
Christoffel symbols of ``M`` so that ``Mdot - 2C`` is exactly skew-symmetric,
which in turn makes the kinetic-energy rate identity
``d/dt(0.5 qd' M qd) = qd' (H F - G)`` hold to machine precision.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingularPoseError

GRAVITY_DEFAULT = 9.81

# Pitch values this close to +-pi/2 put the Euler-rate map at its singularity.
PITCH_MARGIN = 1e-3

# |det J| below this is treated as a singular pose (well under any value the
# bundled scenario reaches, which stays above ~1e-4).
DET_J_MIN = 1e-9

AXIS_NAMES = ("X", "Y", "Z", "roll", "pitch", "yaw")


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class PlatformGeometry:
    """Attachment points of the six legs.

    ``base_points`` are expressed in the base frame (z = 0 plane);
    ``platform_points`` in the platform frame (z = 0 plane).  All six points
    of each set must lie on a common circle centred on the frame origin.
    """

    base_points: np.ndarray
    platform_points: np.ndarray
    effective_base_radius: float = field(init=False)
    effective_platform_radius: float = field(init=False)

    def __post_init__(self):
        self.base_points = np.asarray(self.base_points, dtype=float)
        self.platform_points = np.asarray(self.platform_points, dtype=float)
        for name, pts in (("base", self.base_points), ("platform", self.platform_points)):
            if pts.shape != (6, 3):
                raise ConfigError(f"{name} points must have shape (6, 3), got {pts.shape}")
            if np.max(np.abs(pts[:, 2])) > 1e-12:
                raise ConfigError(f"{name} points must lie in their frame's z = 0 plane")
            radii = np.linalg.norm(pts[:, :2], axis=1)
            if np.max(np.abs(radii - radii[0])) > 1e-12:
                raise ConfigError(f"{name} points must lie on a common circle")
        self.effective_base_radius = float(np.linalg.norm(self.base_points[0, :2]))
        self.effective_platform_radius = float(np.linalg.norm(self.platform_points[0, :2]))


def symmetric_geometry(base_radius=0.20, platform_radius=0.16,
                       base_half_angle_deg=15.0, platform_half_angle_deg=50.0):
    """Six attachment points in three pairs at 120 deg spacing.

    Base and platform pairs share centre angles (0, 120, 240 deg); each pair
    spreads by the given half-angle, so leg i meets the platform at an
    alternating +-(platform - base) half-angle offset, the usual crossed
    arrangement.
    """
    centers = np.repeat([0.0, 120.0, 240.0], 2)
    signs = np.tile([-1.0, 1.0], 3)
    base_ang = np.deg2rad(centers + signs * base_half_angle_deg)
    plat_ang = np.deg2rad(centers + signs * platform_half_angle_deg)
    base = np.stack([base_radius * np.cos(base_ang),
                     base_radius * np.sin(base_ang),
                     np.zeros(6)], axis=1)
    plat = np.stack([platform_radius * np.cos(plat_ang),
                     platform_radius * np.sin(plat_ang),
                     np.zeros(6)], axis=1)
    return PlatformGeometry(base, plat)


@dataclass
class InertiaParams:
    """Mass properties of the moving platform (platform frame)."""

    mass: float = 2.0
    body_inertia: np.ndarray = None
    gravity: float = GRAVITY_DEFAULT

    def __post_init__(self):
        if self.body_inertia is None:
            self.body_inertia = np.diag([0.02, 0.02, 0.04])
        self.body_inertia = np.asarray(self.body_inertia, dtype=float)
        if self.mass <= 0:
            raise ConfigError("mass must be positive")
        if self.body_inertia.shape != (3, 3):
            raise ConfigError("body_inertia must be 3x3")
        if np.max(np.abs(self.body_inertia - self.body_inertia.T)) > 1e-12:
            raise ConfigError("body_inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(self.body_inertia)) <= 0:
            raise ConfigError("body_inertia must be positive definite")


@dataclass
class PlatformModel:
    geometry: PlatformGeometry = field(default_factory=symmetric_geometry)
    inertia: InertiaParams = field(default_factory=InertiaParams)


@dataclass
class PlantState:
    """Pose ``q`` and pose rate ``qdot``, both length-6 arrays."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(6).copy()
        self.qdot = np.asarray(self.qdot, dtype=float).reshape(6).copy()
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ConfigError("state entries must be finite")
        if abs(self.q[4]) >= np.pi / 2 - PITCH_MARGIN:
            raise ConfigError(
                f"pitch {self.q[4]:.6f} rad is within {PITCH_MARGIN} of the Euler singularity")

    @property
    def x(self):
        """Stacked 12-vector [q; qdot]."""
        return np.concatenate([self.q, self.qdot])


@dataclass
class DynamicsEval:
    """All matrices of the manipulator equation at one state."""

    M: np.ndarray
    C: np.ndarray
    G: np.ndarray
    H: np.ndarray
    J: np.ndarray
    det_j: float


# ---------------------------------------------------------------------------
# Rotation and Euler-rate kinematics
# ---------------------------------------------------------------------------

_LX = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
_LY = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
_LZ = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def _rot_factors(eta):
    roll, pitch, yaw = eta
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rx, ry, rz


def rotation_matrix(eta):
    """Platform-to-base rotation for Euler angles ``eta = [roll, pitch, yaw]``."""
    eta = np.asarray(eta, dtype=float).reshape(3)
    if abs(eta[1]) >= np.pi / 2:
        raise SingularPoseError(f"pitch {eta[1]:.6f} rad is at the Euler singularity")
    rx, ry, rz = _rot_factors(eta)
    return rz @ ry @ rx


def rotation_partials(eta):
    """Rotation matrix and its three partial derivatives wrt the angles.

    The axis generators are applied by row shuffling instead of forming the
    sparse generator matrices.
    """
    rx, ry, rz = _rot_factors(eta)
    zy = rz @ ry
    r = zy @ rx
    lx_rx = np.empty((3, 3))
    lx_rx[0] = 0.0
    lx_rx[1] = -rx[2]
    lx_rx[2] = rx[1]
    d_roll = zy @ lx_rx
    ly_ry = np.empty((3, 3))
    ly_ry[0] = ry[2]
    ly_ry[1] = 0.0
    ly_ry[2] = -ry[0]
    d_pitch = rz @ ly_ry @ rx
    d_yaw = np.empty((3, 3))
    d_yaw[0] = -r[1]
    d_yaw[1] = r[0]
    d_yaw[2] = 0.0
    return r, (d_roll, d_pitch, d_yaw)


def euler_rate_map(eta):
    """Map ``T(eta)`` from Euler-angle rates to base-frame angular velocity."""
    _, pitch, yaw = eta
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([[cy * cp, -sy, 0.0],
                     [sy * cp, cy, 0.0],
                     [-sp, 0.0, 1.0]])


def euler_rate_map_partials(eta):
    _, pitch, yaw = eta
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    t = np.array([[cy * cp, -sy, 0.0],
                  [sy * cp, cy, 0.0],
                  [-sp, 0.0, 1.0]])
    d_roll = np.zeros((3, 3))
    d_pitch = np.array([[-cy * sp, 0.0, 0.0],
                        [-sy * sp, 0.0, 0.0],
                        [-cp, 0.0, 0.0]])
    d_yaw = np.array([[-sy * cp, -cy, 0.0],
                      [cy * cp, -sy, 0.0],
                      [0.0, 0.0, 0.0]])
    return t, (d_roll, d_pitch, d_yaw)


# ---------------------------------------------------------------------------
# Leg kinematics
# ---------------------------------------------------------------------------


def leg_vectors(state, geom):
    """Per-leg vectors ``l_i = xi + R p_i - b_i`` and their lengths."""
    r = rotation_matrix(state.q[3:])
    legs = state.q[:3] + geom.platform_points @ r.T - geom.base_points
    return legs, np.linalg.norm(legs, axis=1)


def jacobian(state, geom):
    """Kinematic Jacobian: row i maps ``qdot`` to the rate of leg length i."""
    r = rotation_matrix(state.q[3:])
    rp = geom.platform_points @ r.T
    legs = state.q[:3] + rp - geom.base_points
    lengths = np.linalg.norm(legs, axis=1)
    if np.min(lengths) < 1e-12:
        raise SingularPoseError("a leg has zero length; direction undefined")
    units = legs / lengths[:, None]
    t = euler_rate_map(state.q[3:])
    j = np.empty((6, 6))
    j[:, :3] = units
    j[:, 3:] = np.cross(rp, units) @ t
    return j


# ---------------------------------------------------------------------------
# Rigid-body terms
# ---------------------------------------------------------------------------


def mass_matrix(state, model):
    """Pose-space inertia: blockdiag(m I3, T' R Ib R' T)."""
    eta = state.q[3:]
    r = rotation_matrix(eta)
    t = euler_rate_map(eta)
    w = r @ model.inertia.body_inertia @ r.T
    m = np.zeros((6, 6))
    m[:3, :3] = model.inertia.mass * np.eye(3)
    m[3:, 3:] = t.T @ w @ t
    return m


def mass_matrix_partials(state, model):
    """Mass matrix and its (6, 6, 6) array of partials wrt the pose.

    Only the rotational block depends on the pose, so entries for the three
    translational coordinates are zero.
    """
    eta = state.q[3:]
    r, dr = rotation_partials(eta)
    t, dt = euler_rate_map_partials(eta)
    ib = model.inertia.body_inertia
    w = r @ ib @ r.T
    wt = w @ t

    m = np.zeros((6, 6))
    m[:3, :3] = model.inertia.mass * np.eye(3)
    m[3:, 3:] = t.T @ wt

    dm = np.zeros((6, 6, 6))
    for a in range(3):
        dw = dr[a] @ ib @ r.T
        dw = dw + dw.T
        block = dt[a].T @ wt + t.T @ dw @ t + wt.T @ dt[a]
        dm[3 + a, 3:, 3:] = block
    return m, dm


def _coriolis_from_partials(dm, qdot):
    """Christoffel Coriolis matrix: C = 0.5 (Mdot + A - A')."""
    mdot = np.tensordot(qdot, dm, axes=(0, 0))
    a = np.einsum("jik,k->ij", dm, qdot)
    return 0.5 * (mdot + a - a.T)


def gravity_vector(model):
    g = np.zeros(6)
    g[2] = model.inertia.mass * model.inertia.gravity
    return g


def dynamics_terms(state, model):
    """Evaluate M, C, G, H, J at a state.

    Raises ``SingularPoseError`` when |det J| falls below ``DET_J_MIN``.
    """
    j, m_rot, _, _, tmp, mdot = _rot_core(state.q, state.qdot, model)
    det_j = float(np.linalg.det(j))
    if abs(det_j) < DET_J_MIN:
        raise SingularPoseError(f"near-singular pose: |det J| = {abs(det_j):.3e}", det=det_j)
    h = np.linalg.inv(j).T
    m = np.zeros((6, 6))
    mass = model.inertia.mass
    m[0, 0] = m[1, 1] = m[2, 2] = mass
    m[3:, 3:] = m_rot
    c = np.zeros((6, 6))
    c[3:, 3:] = 0.5 * (mdot + tmp.T - tmp)
    return DynamicsEval(M=m, C=c, G=gravity_vector(model), H=h, J=j, det_j=det_j)


def control_affine_rhs(state, force, model):
    """State derivative [qdot; qdd] under leg forces ``force``."""
    dyn = dynamics_terms(state, model)
    qdd = np.linalg.solve(dyn.M, dyn.H @ force - dyn.C @ state.qdot - dyn.G)
    return np.concatenate([state.qdot, qdd])


def _cross_rows(a, b):
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _solve3_sym(a, b):
    """Cramer solve for a symmetric positive-definite 3x3 system."""
    a00, a01, a02 = a[0, 0], a[0, 1], a[0, 2]
    a11, a12, a22 = a[1, 1], a[1, 2], a[2, 2]
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    det = a00 * c00 + a01 * c01 + a02 * c02
    c11 = a00 * a22 - a02 * a02
    c12 = a01 * a02 - a00 * a12
    c22 = a00 * a11 - a01 * a01
    b0, b1, b2 = b[0], b[1], b[2]
    return np.array([(c00 * b0 + c01 * b1 + c02 * b2) / det,
                     (c01 * b0 + c11 * b1 + c12 * b2) / det,
                     (c02 * b0 + c12 * b1 + c22 * b2) / det])


def _rot_core(q, qdot, model):
    """Shared kinematic/inertial quantities on raw arrays.

    Returns ``(j, m_rot, cqd_rot, dm_rot, tmp, mdot)`` with ``j`` the
    Jacobian, ``m_rot`` the rotational inertia block, ``cqd_rot`` the
    rotational part of C qdot (the translational part is identically zero
    for this model), and the rotational mass-matrix partials.
    """
    roll, pitch, yaw = q[3], q[4], q[5]
    qd_rot = qdot[3:]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)

    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    zy = rz @ ry
    r = zy @ rx

    # Rotation partials via row-shuffled axis generators.
    dr = np.empty((3, 3, 3))
    lx_rx = np.empty((3, 3))
    lx_rx[0] = 0.0
    lx_rx[1] = -rx[2]
    lx_rx[2] = rx[1]
    dr[0] = zy @ lx_rx
    ly_ry = np.empty((3, 3))
    ly_ry[0] = ry[2]
    ly_ry[1] = 0.0
    ly_ry[2] = -ry[0]
    dr[1] = rz @ ly_ry @ rx
    dr[2, 0] = -r[1]
    dr[2, 1] = r[0]
    dr[2, 2] = 0.0

    t = np.array([[cy * cp, -sy, 0.0],
                  [sy * cp, cy, 0.0],
                  [-sp, 0.0, 1.0]])
    # Rate-map partials: dT/d(roll) = 0.
    dt1 = np.array([[-cy * sp, 0.0, 0.0],
                    [-sy * sp, 0.0, 0.0],
                    [-cp, 0.0, 0.0]])
    dt2 = np.array([[-sy * cp, -cy, 0.0],
                    [cy * cp, -sy, 0.0],
                    [0.0, 0.0, 0.0]])

    geom = model.geometry
    rp = geom.platform_points @ r.T
    legs = q[:3] + rp - geom.base_points
    lengths = np.sqrt(np.einsum("ij,ij->i", legs, legs))
    units = legs / lengths[:, None]
    j = np.empty((6, 6))
    j[:, :3] = units
    j[:, 3:] = _cross_rows(rp, units) @ t

    ib = model.inertia.body_inertia
    ib_rt = ib @ r.T
    wt = (r @ ib_rt) @ t
    m_rot = t.T @ wt

    # Stacked dW_a = dR_a Ib R' + (dR_a Ib R')'; then T' dW_a T plus the
    # dT cross terms for the pitch/yaw angles.
    dws = dr @ ib_rt
    dws = dws + dws.transpose(0, 2, 1)
    dm_rot = t.T @ dws @ t
    cross1 = dt1.T @ wt
    dm_rot[1] += cross1 + cross1.T
    cross2 = dt2.T @ wt
    dm_rot[2] += cross2 + cross2.T

    mdot = (qd_rot @ dm_rot.reshape(3, 9)).reshape(3, 3)
    tmp = dm_rot @ qd_rot
    cqd_rot = mdot @ qd_rot - 0.5 * (tmp @ qd_rot)
    return j, m_rot, cqd_rot, dm_rot, tmp, mdot


def _rhs_arrays(q, qdot, force, model):
    """Hot-path state derivative on raw arrays (no PlantState validation)."""
    j, m_rot, cqd_rot, _, _, _ = _rot_core(q, qdot, model)
    hf = np.linalg.solve(j.T, force)
    mass = model.inertia.mass
    out = np.empty(12)
    out[:6] = qdot
    out[6] = hf[0] / mass
    out[7] = hf[1] / mass
    out[8] = hf[2] / mass - model.inertia.gravity
    out[9:] = _solve3_sym(m_rot, hf[3:] - cqd_rot)
    return out
