"""Compiled kernels for the control-rate hot paths.

Both safety filters and the RK4 integrator have numba-compiled twins of the
numpy reference implementations.  The kernels reproduce the reference math
(same formulas, same branch logic, same tie-breaking) so either engine can
serve any call; the compiled pair exists so per-call timing reflects the
algorithms instead of interpreter dispatch, and so 60 s runs stay cheap.

Everything here is optional: when numba is unavailable ``AVAILABLE`` is False
and callers fall back to the numpy path.
"""

import ctypes

import numpy as np

try:
    from numba import njit

    # Monotonic wall-clock readable from inside nopython kernels, so each
    # filter times its own body and the (identical) call-dispatch overhead is
    # excluded from both sides of the timing comparison.
    _gomp = ctypes.CDLL("libgomp.so.1")
    wtime = _gomp.omp_get_wtime
    wtime.restype = ctypes.c_double
    wtime.argtypes = []
    AVAILABLE = True
except (ImportError, OSError):  # pragma: no cover - only without numba/libgomp
    AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap

    def wtime():
        return 0.0

# Branch codes shared with the wrappers.
BR_NONE = 0
BR_POSITION = 1
BR_VELOCITY = 2
BR_BOTH = 3
BR_ERR_SINGULAR = -1
BR_ERR_DEGENERATE = -2

POLICY_ERROR = 0
POLICY_POSITION_PRIORITY = 1
POLICY_DAMPED = 2

QP_OK = 0
QP_INFEASIBLE = 1
QP_CYCLE = 2

GRAM_REL_TOL = 1e-12
SENSITIVITY_TOL = 1e-18
ROW_NORM_MIN = 1e-12
FEAS_TOL = 1e-10
MULT_TOL = 1e-11
DEP_RTOL = 1e-10


@njit(cache=True)
def _inv3(a):
    a00, a01, a02 = a[0, 0], a[0, 1], a[0, 2]
    a11, a12, a22 = a[1, 1], a[1, 2], a[2, 2]
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    det = a00 * c00 + a01 * c01 + a02 * c02
    out = np.empty((3, 3))
    out[0, 0] = c00 / det
    out[0, 1] = c01 / det
    out[0, 2] = c02 / det
    out[1, 0] = c01 / det
    out[1, 1] = (a00 * a22 - a02 * a02) / det
    out[1, 2] = (a01 * a02 - a00 * a12) / det
    out[2, 0] = c02 / det
    out[2, 1] = out[1, 2]
    out[2, 2] = (a00 * a11 - a01 * a01) / det
    return out


@njit(cache=True)
def _solve6(a, b):
    """Gaussian elimination with partial pivoting for a 6x6 system."""
    m = a.copy()
    x = b.copy()
    for col in range(6):
        piv = col
        best = abs(m[col, col])
        for row in range(col + 1, 6):
            v = abs(m[row, col])
            if v > best:
                best = v
                piv = row
        if piv != col:
            for cc in range(6):
                tmp = m[col, cc]
                m[col, cc] = m[piv, cc]
                m[piv, cc] = tmp
            tmp = x[col]
            x[col] = x[piv]
            x[piv] = tmp
        inv_p = 1.0 / m[col, col]
        for row in range(col + 1, 6):
            factor = m[row, col] * inv_p
            if factor != 0.0:
                for cc in range(col, 6):
                    m[row, cc] -= factor * m[col, cc]
                x[row] -= factor * x[col]
    for col in range(5, -1, -1):
        acc = x[col]
        for cc in range(col + 1, 6):
            acc -= m[col, cc] * x[cc]
        x[col] = acc / m[col, col]
    return x


@njit(cache=True)
def _solve3(a, b):
    a00, a01, a02 = a[0, 0], a[0, 1], a[0, 2]
    a11, a12, a22 = a[1, 1], a[1, 2], a[2, 2]
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    det = a00 * c00 + a01 * c01 + a02 * c02
    c11 = a00 * a22 - a02 * a02
    c12 = a01 * a02 - a00 * a12
    c22 = a00 * a11 - a01 * a01
    out = np.empty(3)
    out[0] = (c00 * b[0] + c01 * b[1] + c02 * b[2]) / det
    out[1] = (c01 * b[0] + c11 * b[1] + c12 * b[2]) / det
    out[2] = (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det
    return out


@njit(cache=True)
def _rhs(q, qd, force, base_pts, plat_pts, ib, mass, grav):
    roll, pitch, yaw = q[3], q[4], q[5]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)

    rx = np.array(((1.0, 0.0, 0.0), (0.0, cr, -sr), (0.0, sr, cr)))
    ry = np.array(((cp, 0.0, sp), (0.0, 1.0, 0.0), (-sp, 0.0, cp)))
    rz = np.array(((cy, -sy, 0.0), (sy, cy, 0.0), (0.0, 0.0, 1.0)))
    zy = rz @ ry
    r = zy @ rx

    dr = np.empty((3, 3, 3))
    lx_rx = np.empty((3, 3))
    lx_rx[0, :] = 0.0
    lx_rx[1] = -rx[2]
    lx_rx[2] = rx[1]
    dr[0] = zy @ lx_rx
    ly_ry = np.empty((3, 3))
    ly_ry[0] = ry[2]
    ly_ry[1, :] = 0.0
    ly_ry[2] = -ry[0]
    dr[1] = rz @ ly_ry @ rx
    dr[2, 0] = -r[1]
    dr[2, 1] = r[0]
    dr[2, 2, :] = 0.0

    t = np.array(((cy * cp, -sy, 0.0), (sy * cp, cy, 0.0), (-sp, 0.0, 1.0)))
    dt1 = np.array(((-cy * sp, 0.0, 0.0), (-sy * sp, 0.0, 0.0), (-cp, 0.0, 0.0)))
    dt2 = np.array(((-sy * cp, -cy, 0.0), (cy * cp, -sy, 0.0), (0.0, 0.0, 0.0)))

    j = np.empty((6, 6))
    for i in range(6):
        lx = q[0] + r[0, 0] * plat_pts[i, 0] + r[0, 1] * plat_pts[i, 1] - base_pts[i, 0]
        ly = q[1] + r[1, 0] * plat_pts[i, 0] + r[1, 1] * plat_pts[i, 1] - base_pts[i, 1]
        lz = q[2] + r[2, 0] * plat_pts[i, 0] + r[2, 1] * plat_pts[i, 1] - base_pts[i, 2]
        length = np.sqrt(lx * lx + ly * ly + lz * lz)
        ux, uy, uz = lx / length, ly / length, lz / length
        rpx = r[0, 0] * plat_pts[i, 0] + r[0, 1] * plat_pts[i, 1]
        rpy = r[1, 0] * plat_pts[i, 0] + r[1, 1] * plat_pts[i, 1]
        rpz = r[2, 0] * plat_pts[i, 0] + r[2, 1] * plat_pts[i, 1]
        cxx = rpy * uz - rpz * uy
        cyy = rpz * ux - rpx * uz
        czz = rpx * uy - rpy * ux
        j[i, 0] = ux
        j[i, 1] = uy
        j[i, 2] = uz
        j[i, 3] = cxx * t[0, 0] + cyy * t[1, 0] + czz * t[2, 0]
        j[i, 4] = cxx * t[0, 1] + cyy * t[1, 1] + czz * t[2, 1]
        j[i, 5] = cxx * t[0, 2] + cyy * t[1, 2] + czz * t[2, 2]

    ib_rt = ib @ r.T
    wt = (r @ ib_rt) @ t
    m_rot = t.T @ wt

    dws0 = dr[0] @ ib_rt
    dws0 = dws0 + dws0.T
    dm0 = t.T @ dws0 @ t
    dws1 = dr[1] @ ib_rt
    dws1 = dws1 + dws1.T
    cross1 = dt1.T @ wt
    dm1 = cross1 + cross1.T + t.T @ dws1 @ t
    dws2 = dr[2] @ ib_rt
    dws2 = dws2 + dws2.T
    cross2 = dt2.T @ wt
    dm2 = cross2 + cross2.T + t.T @ dws2 @ t

    qr = qd[3:]
    mdot = qr[0] * dm0 + qr[1] * dm1 + qr[2] * dm2
    tmp = np.empty((3, 3))
    tmp[0] = dm0 @ qr
    tmp[1] = dm1 @ qr
    tmp[2] = dm2 @ qr
    cqd_rot = mdot @ qr - 0.5 * (tmp @ qr)

    hf = _solve6(j.T.copy(), force)
    out = np.empty(12)
    out[:6] = qd
    out[6] = hf[0] / mass
    out[7] = hf[1] / mass
    out[8] = hf[2] / mass - grav
    out[9:] = _solve3(m_rot, hf[3:] - cqd_rot)
    return out


@njit(cache=True)
def step_kernel(q, qd, force, dt, base_pts, plat_pts, ib, mass, grav):
    k1 = _rhs(q, qd, force, base_pts, plat_pts, ib, mass, grav)
    k2 = _rhs(q + 0.5 * dt * k1[:6], qd + 0.5 * dt * k1[6:], force,
              base_pts, plat_pts, ib, mass, grav)
    k3 = _rhs(q + 0.5 * dt * k2[:6], qd + 0.5 * dt * k2[6:], force,
              base_pts, plat_pts, ib, mass, grav)
    k4 = _rhs(q + dt * k3[:6], qd + dt * k3[6:], force,
              base_pts, plat_pts, ib, mass, grav)
    q_new = q + dt * (k1[:6] + 2.0 * k2[:6] + 2.0 * k3[:6] + k4[:6]) / 6.0
    qd_new = qd + dt * (k1[6:] + 2.0 * k2[6:] + 2.0 * k3[6:] + k4[6:]) / 6.0
    return q_new, qd_new


@njit(cache=True)
def cf_kernel(q, qd, m_rot, mass, c6, g6, h6,
              pos_axes, pos_s_ae, pos_sb_ae,
              vel_axes, vel_sides, vel_sb,
              scal_p, scal_v, beta, alpha_d, alpha_v,
              force_des, policy):
    """Barrier evaluation plus the complete closed-form case analysis.

    Mirrors ``barriers.evaluate`` + ``safety_filter._piecewise_law``.
    """
    t_start = wtime()
    n_p = pos_axes.shape[0]
    n_v = vel_axes.shape[0]

    ke = 0.0
    for i in range(3):
        ke += qd[i] * qd[i]
    ke *= mass
    for i in range(3):
        for jj in range(3):
            ke += qd[3 + i] * m_rot[i, jj] * qd[3 + jj]
    ke *= 0.5

    # Soft-min aggregation; the weight buffers double as scratch for the
    # shifted exponents.
    h_d = np.empty(n_p)
    pi_p = np.empty(n_p)
    zpmin = np.inf
    for i in range(n_p):
        hv_i = pos_sb_ae[i] - pos_s_ae[i] * q[pos_axes[i]] - ke
        h_d[i] = hv_i
        z = beta * scal_p[i] * hv_i
        pi_p[i] = z
        if z < zpmin:
            zpmin = z
    wp_sum = 0.0
    for i in range(n_p):
        w = np.exp(zpmin - pi_p[i])
        pi_p[i] = w
        wp_sum += w
    hbar_d = (zpmin - np.log(wp_sum)) / beta
    for i in range(n_p):
        pi_p[i] /= wp_sum

    h_v = np.empty(n_v)
    pi_v = np.empty(n_v)
    zvmin = np.inf
    for i in range(n_v):
        hv_i = vel_sb[i] - vel_sides[i] * qd[vel_axes[i]]
        h_v[i] = hv_i
        z = beta * scal_v[i] * hv_i
        pi_v[i] = z
        if z < zvmin:
            zvmin = z
    wv_sum = 0.0
    for i in range(n_v):
        w = np.exp(zvmin - pi_v[i])
        pi_v[i] = w
        wv_sum += w
    hbar_v = (zvmin - np.log(wv_sum)) / beta
    for i in range(n_v):
        pi_v[i] /= wv_sum

    hf = h6 @ force_des
    qdd_des = np.empty(6)
    rot_rhs = np.empty(3)
    for i in range(6):
        d = hf[i] - g6[i]
        for jj in range(6):
            d -= c6[i, jj] * qd[jj]
        if i < 3:
            qdd_des[i] = d / mass
        else:
            rot_rhs[i - 3] = d
    qdd_des[3:] = _solve3(m_rot, rot_rhs)

    wsum_p = 0.0
    for i in range(n_p):
        wsum_p += scal_p[i] * pi_p[i]
    a_p = np.empty(6)
    for i in range(6):
        acc = 0.0
        for jj in range(6):
            acc += h6[jj, i] * qd[jj]
        a_p[i] = wsum_p * acc

    minv_w = np.zeros(6)
    for i in range(n_v):
        minv_w[vel_axes[i]] += vel_sides[i] * scal_v[i] * pi_v[i]
    for i in range(3):
        minv_w[i] /= mass
        rot_rhs[i] = minv_w[3 + i]
    minv_w[3:] = _solve3(m_rot, rot_rhs)
    a_v = np.empty(6)
    for i in range(6):
        acc = 0.0
        for jj in range(6):
            acc += h6[jj, i] * minv_w[jj]
        a_v[i] = acc

    common = 0.0
    for i in range(6):
        common += g6[i] * qd[i] - qd[i] * hf[i]
    psi_p = alpha_d * hbar_d
    for i in range(n_p):
        psi_p += scal_p[i] * pi_p[i] * (common - pos_s_ae[i] * qd[pos_axes[i]])
    psi_v = alpha_v * hbar_v
    for i in range(n_v):
        psi_v -= scal_v[i] * pi_v[i] * vel_sides[i] * qdd_des[vel_axes[i]]

    app = a_p @ a_p
    avv = a_v @ a_v
    apv = a_p @ a_v
    det = app * avv - apv * apv

    df = np.zeros(6)
    branch = BR_NONE
    fb = 0
    viol_p = psi_p < 0.0
    viol_v = psi_v < 0.0

    if viol_p or viol_v:
        want_both = False
        if viol_p and not viol_v:
            if app <= SENSITIVITY_TOL:
                branch = BR_ERR_DEGENERATE
            else:
                df = (psi_p / app) * a_p
                branch = BR_POSITION
                if psi_v - a_v @ df < 0.0:
                    want_both = True
        elif viol_v and not viol_p:
            if avv <= SENSITIVITY_TOL:
                branch = BR_ERR_DEGENERATE
            else:
                df = (psi_v / avv) * a_v
                branch = BR_VELOCITY
                if psi_p - a_p @ df < 0.0:
                    want_both = True
        else:
            want_both = True

        if want_both:
            singular = (np.sqrt(app) <= GRAM_REL_TOL
                        or det <= GRAM_REL_TOL * app * avv)
            if singular:
                if policy == POLICY_ERROR:
                    branch = BR_ERR_SINGULAR
                elif policy == POLICY_POSITION_PRIORITY:
                    if app <= SENSITIVITY_TOL:
                        branch = BR_ERR_DEGENERATE
                    else:
                        df = (psi_p / app) * a_p
                        branch = BR_POSITION
                        fb = 1
                else:
                    lam = 1e-8 * (app + avv)
                    if lam <= 0.0:
                        branch = BR_ERR_DEGENERATE
                    else:
                        den = (app + lam) * (avv + lam) - apv * apv
                        mu_p = ((avv + lam) * psi_p - apv * psi_v) / den
                        mu_v = ((app + lam) * psi_v - apv * psi_p) / den
                        df = mu_p * a_p + mu_v * a_v
                        branch = BR_BOTH
                        fb = 1
            else:
                take_both = True
                if viol_p and viol_v:
                    mult_p = -(avv * psi_p - apv * psi_v) / det
                    mult_v = -(app * psi_v - apv * psi_p) / det
                    if mult_p < 0.0:
                        df = (psi_v / avv) * a_v
                        branch = BR_VELOCITY
                        take_both = False
                    elif mult_v < 0.0:
                        df = (psi_p / app) * a_p
                        branch = BR_POSITION
                        take_both = False
                if take_both:
                    mu_p = (avv * psi_p - apv * psi_v) / det
                    mu_v = (app * psi_v - apv * psi_p) / det
                    df = mu_p * a_p + mu_v * a_v
                    branch = BR_BOTH

    elapsed = wtime() - t_start
    return (df, h_d, h_v, hbar_d, hbar_v, pi_p, pi_v, a_p, a_v,
            psi_p, psi_v, app, apv, avv, det, branch, fb, elapsed)


@njit(cache=True)
def qp_build_kernel(q, qd, m_rot, mass, c6, g6, h6,
                    pos_axes, pos_sides, pos_bounds, alpha_e, alpha_d,
                    vel_axes, vel_sides, vel_bounds, alpha_v):
    """Individual constraint rows; mirrors ``qp.build_constraints``.

    Returns ``(A, b, families, source, n_rows, bad)`` where ``families`` is
    0/1 per row, ``source`` the enabled-constraint index, and ``bad`` the
    constraint index of an insensitive violated row (-1 when none).
    """
    t_start = wtime()
    n_p = pos_axes.shape[0]
    n_v = vel_axes.shape[0]
    n_max = n_p + n_v
    a = np.empty((n_max, 6))
    b = np.empty(n_max)
    fam = np.empty(n_max, dtype=np.int64)
    source = np.empty(n_max, dtype=np.int64)

    ke = 0.0
    for i in range(3):
        ke += qd[i] * qd[i]
    ke *= mass
    for i in range(3):
        for jj in range(3):
            ke += qd[3 + i] * m_rot[i, jj] * qd[3 + jj]
    ke *= 0.5

    a_p = h6.T @ qd
    norm_ap = np.sqrt(a_p @ a_p)
    drift_base = g6 @ qd

    n_rows = 0
    bad = -1
    for jj in range(n_p):
        axis = pos_axes[jj]
        side = pos_sides[jj]
        h_val = -ke + alpha_e * side * (pos_bounds[jj] - q[axis])
        b_j = drift_base - alpha_e * side * qd[axis] + alpha_d * h_val
        if norm_ap <= ROW_NORM_MIN:
            if b_j < 0.0 and bad < 0:
                bad = jj
            continue
        a[n_rows] = a_p
        b[n_rows] = b_j
        fam[n_rows] = 0
        source[n_rows] = jj
        n_rows += 1

    drift = c6 @ qd + g6
    minv_drift = np.empty(6)
    minv_drift[0] = drift[0] / mass
    minv_drift[1] = drift[1] / mass
    minv_drift[2] = drift[2] / mass
    minv_drift[3:] = _solve3(m_rot, drift[3:])
    # Row vectors s_k (inv(M) H)[axis]: translational axes divide by the
    # mass; rotational axes go through the rotational block inverse.
    need_rot = False
    for kk in range(n_v):
        if vel_axes[kk] >= 3:
            need_rot = True
    if need_rot:
        minv_h_bot = _inv3(m_rot) @ np.ascontiguousarray(h6[3:, :])
    else:
        minv_h_bot = np.empty((0, 0))
    for kk in range(n_v):
        axis = vel_axes[kk]
        side = vel_sides[kk]
        if axis < 3:
            for col in range(6):
                a[n_rows, col] = side * h6[axis, col] / mass
        else:
            for col in range(6):
                a[n_rows, col] = side * minv_h_bot[axis - 3, col]
        h_val = side * (vel_bounds[kk] - qd[axis])
        b[n_rows] = side * minv_drift[axis] + alpha_v * h_val
        fam[n_rows] = 1
        source[n_rows] = kk
        n_rows += 1

    elapsed = wtime() - t_start
    return a, b, fam, source, n_rows, bad, elapsed


@njit(cache=True)
def qp_solve_kernel(a, b, f_des, feas_tol, max_iter):
    """Primal active-set projection; mirrors ``qp.solve_qp``.

    Returns ``(f, lam, in_work, iterations, status, conflict)``.
    """
    t_start = wtime()
    n_c = a.shape[0]
    row_norms = np.empty(n_c)
    for i in range(n_c):
        row_norms[i] = np.sqrt(a[i] @ a[i])

    work = np.empty(n_c, dtype=np.int64)
    n_w = 0
    f = f_des.copy()
    lam = np.zeros(n_c)
    in_work = np.zeros(n_c, dtype=np.int64)
    conflict = np.zeros(n_c, dtype=np.int64)
    iterations = 0
    status = QP_OK

    while True:
        iterations += 1
        if iterations > max_iter:
            status = QP_CYCLE
            break

        if n_w > 0:
            aw = np.empty((n_w, 6))
            r = np.empty(n_w)
            for i in range(n_w):
                aw[i] = a[work[i]]
                r[i] = b[work[i]] - aw[i] @ f_des
            gram = aw @ aw.T
            y = np.linalg.solve(gram, r)
            f = f_des + aw.T @ y
            # Drop the most negative multiplier (ties: lowest row index).
            drop_local = -1
            best_lam = -MULT_TOL
            best_row = n_c + 1
            for i in range(n_w):
                li = -2.0 * y[i]
                lam[work[i]] = li
                if li < best_lam or (li == best_lam and work[i] < best_row):
                    best_lam = li
                    best_row = work[i]
                    drop_local = i
            if drop_local >= 0:
                lam[work[drop_local]] = 0.0
                in_work[work[drop_local]] = 0
                for i in range(drop_local, n_w - 1):
                    work[i] = work[i + 1]
                n_w -= 1
                continue
        else:
            f = f_des.copy()

        # Most violated row, normalized (ties: lowest index wins).
        worst = -1
        worst_v = feas_tol
        for i in range(n_c):
            if in_work[i] == 1:
                continue
            v = (a[i] @ f - b[i]) / row_norms[i]
            if v > worst_v:
                worst_v = v
                worst = i
        if worst < 0:
            break

        if n_w > 0:
            aw_t = np.empty((6, n_w))
            for i in range(n_w):
                for col in range(6):
                    aw_t[col, i] = a[work[i], col]
            target = np.empty((6, 1))
            for col in range(6):
                target[col, 0] = a[worst, col]
            coeff = np.ascontiguousarray(np.linalg.lstsq(aw_t, target)[0][:, 0])
            resid = aw_t @ coeff - target[:, 0]
            if np.sqrt(resid @ resid) <= DEP_RTOL * row_norms[worst]:
                # Dependent candidate: swap out the largest-coefficient row
                # or report the irreducible conflict.
                drop_local = -1
                best_c = DEP_RTOL
                best_row = n_c + 1
                for i in range(n_w):
                    if coeff[i] > best_c or (coeff[i] == best_c
                                             and work[i] < best_row):
                        best_c = coeff[i]
                        best_row = work[i]
                        drop_local = i
                if drop_local < 0:
                    for i in range(n_w):
                        if coeff[i] < -DEP_RTOL:
                            conflict[work[i]] = 1
                    conflict[worst] = 1
                    status = QP_INFEASIBLE
                    break
                lam[work[drop_local]] = 0.0
                in_work[work[drop_local]] = 0
                for i in range(drop_local, n_w - 1):
                    work[i] = work[i + 1]
                n_w -= 1
        work[n_w] = worst
        in_work[worst] = 1
        n_w += 1

    elapsed = wtime() - t_start
    return f, lam, in_work, iterations, status, conflict, elapsed
