"""Compiled inner loop: kinematics, closed-form dynamics, contact and the 2 kHz substep.

Every function takes the robot parameters packed into one float64 vector (see
``RobotModel.packed``) so the same code serves the single-robot API and the
batched rollout path.

Generalized coordinates: ``q = [x, z, pitch, hip_L, knee_L, hip_R, knee_R]``.
Link absolute angles are ``pitch``, ``pitch+hip_L``, ``pitch+hip_L+knee_L``,
``pitch+hip_R``, ``pitch+hip_R+knee_R``. A leg link at angle ``phi`` points
along ``(sin phi, -cos phi)``; the torso points the opposite way (up).
"""

import numpy as np
from numba import njit

NQ = 7
NU = 4

# packed parameter layout
MASS = 0
LENGTH = 5
COM = 10
INERTIA = 15
DAMPING = 20
TORQUE_LIMIT = 24
GRAVITY = 28
NPARAM = 29

# link angle selection: angle_j = S[j] . q
S = np.array(
    [
        [0, 0, 1, 0, 0, 0, 0],
        [0, 0, 1, 1, 0, 0, 0],
        [0, 0, 1, 1, 1, 0, 0],
        [0, 0, 1, 0, 0, 1, 0],
        [0, 0, 1, 0, 0, 1, 1],
    ],
    dtype=np.float64,
)

FLAG_BLOWUP = 1
FLAG_KNEE_GROUND = 2


@njit(cache=True, error_model="numpy")
def link_angles(q, out):
    out[0] = q[2]
    out[1] = q[2] + q[3]
    out[2] = q[2] + q[3] + q[4]
    out[3] = q[2] + q[5]
    out[4] = q[2] + q[5] + q[6]


@njit(cache=True, error_model="numpy")
def com_coefficients(P, A):
    """A[i, j]: signed distance along link j's direction for the COM of body i."""
    A[:, :] = 0.0
    A[0, 0] = -P[COM + 0]
    A[1, 1] = P[COM + 1]
    A[2, 1] = P[LENGTH + 1]
    A[2, 2] = P[COM + 2]
    A[3, 3] = P[COM + 3]
    A[4, 3] = P[LENGTH + 3]
    A[4, 4] = P[COM + 4]


@njit(cache=True, error_model="numpy")
def point_jacobian(coef, phi, J):
    """Jacobian of base + sum_j coef[j] * d(phi_j) with respect to q (2 x 7)."""
    J[:, :] = 0.0
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    for j in range(5):
        a = coef[j]
        if a == 0.0:
            continue
        ex = a * np.cos(phi[j])
        ez = a * np.sin(phi[j])
        for k in range(2, NQ):
            if S[j, k] != 0.0:
                J[0, k] += ex
                J[1, k] += ez


@njit(cache=True, error_model="numpy")
def point_position(q, coef, phi, out):
    out[0] = q[0]
    out[1] = q[1]
    for j in range(5):
        a = coef[j]
        if a != 0.0:
            out[0] += a * np.sin(phi[j])
            out[1] -= a * np.cos(phi[j])


@njit(cache=True, error_model="numpy")
def foot_coefficients(P, left, coef):
    coef[:] = 0.0
    if left:
        coef[1] = P[LENGTH + 1]
        coef[2] = P[LENGTH + 2]
    else:
        coef[3] = P[LENGTH + 3]
        coef[4] = P[LENGTH + 4]


@njit(cache=True, error_model="numpy")
def knee_coefficients(P, left, coef):
    coef[:] = 0.0
    if left:
        coef[1] = P[LENGTH + 1]
    else:
        coef[3] = P[LENGTH + 3]


@njit(cache=True, error_model="numpy")
def make_workspace():
    return (np.empty(5), np.empty(5), np.empty(5), np.empty((5, 5)), np.empty((2, NQ)),
            np.empty((NQ, NQ)), np.empty(NQ), np.empty(NQ), np.empty(NQ), np.empty((NQ, NQ)),
            np.empty(NQ), np.empty(5), np.empty(2))


@njit(cache=True, error_model="numpy")
def _dynamics_ws(P, q, qd, M, h, ws):
    """Closed-form Lagrangian terms.

    Each body COM Jacobian column is a sum of link direction derivatives
    e_j = (cos phi_j, sin phi_j) scaled by distances along the chain; the
    velocity-product acceleration uses n_j = (-sin phi_j, cos phi_j).
    """
    sn, cs = ws[1], ws[2]
    th = q[2]
    p1 = th + q[3]
    p2 = p1 + q[4]
    p3 = th + q[5]
    p4 = p3 + q[6]
    sn[0] = np.sin(th)
    cs[0] = np.cos(th)
    sn[1] = np.sin(p1)
    cs[1] = np.cos(p1)
    sn[2] = np.sin(p2)
    cs[2] = np.cos(p2)
    sn[3] = np.sin(p3)
    cs[3] = np.cos(p3)
    sn[4] = np.sin(p4)
    cs[4] = np.cos(p4)
    w0 = qd[2]
    w1 = w0 + qd[3]
    w2 = w1 + qd[4]
    w3 = w0 + qd[5]
    w4 = w3 + qd[6]

    m0 = P[MASS]
    m1 = P[MASS + 1]
    m2 = P[MASS + 2]
    m3 = P[MASS + 3]
    m4 = P[MASS + 4]
    i0 = P[INERTIA]
    i1 = P[INERTIA + 1]
    i2 = P[INERTIA + 2]
    i3 = P[INERTIA + 3]
    i4 = P[INERTIA + 4]
    c0 = P[COM]
    c1 = P[COM + 1]
    c2 = P[COM + 2]
    c3 = P[COM + 3]
    c4 = P[COM + 4]
    l1 = P[LENGTH + 1]
    l3 = P[LENGTH + 3]
    g = P[GRAVITY]

    # Jacobian column vectors
    t0x = -c0 * cs[0]
    t0z = -c0 * sn[0]
    v1x = c1 * cs[1]
    v1z = c1 * sn[1]
    v2bx = c2 * cs[2]
    v2bz = c2 * sn[2]
    v2ax = l1 * cs[1] + v2bx
    v2az = l1 * sn[1] + v2bz
    v3x = c3 * cs[3]
    v3z = c3 * sn[3]
    v4bx = c4 * cs[4]
    v4bz = c4 * sn[4]
    v4ax = l3 * cs[3] + v4bx
    v4az = l3 * sn[3] + v4bz

    # mass-weighted COM forces m_i (quadratic accel + gravity)
    f0x = m0 * (c0 * w0 * w0 * sn[0])
    f0z = m0 * (-c0 * w0 * w0 * cs[0] + g)
    f1x = m1 * (-c1 * w1 * w1 * sn[1])
    f1z = m1 * (c1 * w1 * w1 * cs[1] + g)
    f2x = m2 * (-l1 * w1 * w1 * sn[1] - c2 * w2 * w2 * sn[2])
    f2z = m2 * (l1 * w1 * w1 * cs[1] + c2 * w2 * w2 * cs[2] + g)
    f3x = m3 * (-c3 * w3 * w3 * sn[3])
    f3z = m3 * (c3 * w3 * w3 * cs[3] + g)
    f4x = m4 * (-l3 * w3 * w3 * sn[3] - c4 * w4 * w4 * sn[4])
    f4z = m4 * (l3 * w3 * w3 * cs[3] + c4 * w4 * w4 * cs[4] + g)

    mt = m0 + m1 + m2 + m3 + m4
    M[:, :] = 0.0
    M[0, 0] = mt
    M[1, 1] = mt
    leg_l_x = m1 * v1x + m2 * v2ax
    leg_l_z = m1 * v1z + m2 * v2az
    leg_r_x = m3 * v3x + m4 * v4ax
    leg_r_z = m3 * v3z + m4 * v4az
    M[0, 2] = m0 * t0x + leg_l_x + leg_r_x
    M[1, 2] = m0 * t0z + leg_l_z + leg_r_z
    M[0, 3] = leg_l_x
    M[1, 3] = leg_l_z
    M[0, 4] = m2 * v2bx
    M[1, 4] = m2 * v2bz
    M[0, 5] = leg_r_x
    M[1, 5] = leg_r_z
    M[0, 6] = m4 * v4bx
    M[1, 6] = m4 * v4bz
    left33 = m1 * (v1x * v1x + v1z * v1z) + m2 * (v2ax * v2ax + v2az * v2az) + i1 + i2
    left34 = m2 * (v2ax * v2bx + v2az * v2bz) + i2
    left44 = m2 * (v2bx * v2bx + v2bz * v2bz) + i2
    right55 = m3 * (v3x * v3x + v3z * v3z) + m4 * (v4ax * v4ax + v4az * v4az) + i3 + i4
    right56 = m4 * (v4ax * v4bx + v4az * v4bz) + i4
    right66 = m4 * (v4bx * v4bx + v4bz * v4bz) + i4
    M[2, 2] = m0 * (t0x * t0x + t0z * t0z) + i0 + left33 + right55
    M[2, 3] = left33
    M[2, 4] = left34
    M[2, 5] = right55
    M[2, 6] = right56
    M[3, 3] = left33
    M[3, 4] = left34
    M[4, 4] = left44
    M[5, 5] = right55
    M[5, 6] = right56
    M[6, 6] = right66
    for r in range(NQ):
        for c in range(r):
            M[r, c] = M[c, r]

    h3 = v1x * f1x + v1z * f1z + v2ax * f2x + v2az * f2z
    h5 = v3x * f3x + v3z * f3z + v4ax * f4x + v4az * f4z
    h[0] = f0x + f1x + f2x + f3x + f4x
    h[1] = f0z + f1z + f2z + f3z + f4z
    h[2] = t0x * f0x + t0z * f0z + h3 + h5
    h[3] = h3 + P[DAMPING] * qd[3]
    h[4] = v2bx * f2x + v2bz * f2z + P[DAMPING + 1] * qd[4]
    h[5] = h5 + P[DAMPING + 2] * qd[5]
    h[6] = v4bx * f4x + v4bz * f4z + P[DAMPING + 3] * qd[6]


@njit(cache=True, error_model="numpy")
def dynamics(P, q, qd, M, h):
    """Fill mass matrix M and bias h (Coriolis + gravity + joint damping)."""
    _dynamics_ws(P, q, qd, M, h, make_workspace())


@njit(cache=True, error_model="numpy")
def cholesky_solve(M, b, x, L, y):
    """Solve M x = b for symmetric positive definite M; returns False if not PD."""
    n = M.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return True


@njit(cache=True, error_model="numpy")
def _eliminate_leg(M, b, L, y, a, bb):
    d00 = M[a, a]
    d01 = M[a, bb]
    d11 = M[bb, bb]
    det = d00 * d11 - d01 * d01
    if d00 <= 0.0 or det <= 0.0:
        return False
    inv00 = d11 / det
    inv01 = -d01 / det
    inv11 = d00 / det
    # K = B D^-1 (3x2), stored in L[:, a], L[:, bb]
    for r in range(3):
        k0 = M[r, a] * inv00 + M[r, bb] * inv01
        k1 = M[r, a] * inv01 + M[r, bb] * inv11
        y[r] -= k0 * b[a] + k1 * b[bb]
        for c in range(3):
            L[r, c] -= k0 * M[c, a] + k1 * M[c, bb]
    L[a, a] = inv00
    L[a, bb] = inv01
    L[bb, bb] = inv11
    return True


@njit(cache=True, error_model="numpy")
def _back_leg(M, b, L, x, a, bb):
    ra = b[a] - M[0, a] * x[0] - M[1, a] * x[1] - M[2, a] * x[2]
    rb = b[bb] - M[0, bb] * x[0] - M[1, bb] * x[1] - M[2, bb] * x[2]
    x[a] = L[a, a] * ra + L[a, bb] * rb
    x[bb] = L[a, bb] * ra + L[bb, bb] * rb


@njit(cache=True, error_model="numpy")
def solve_biped(M, b, x, L, y):
    """Solve M x = b exploiting the zero coupling between the two legs.

    The 2x2 leg blocks are eliminated first; the 3x3 floating-base Schur
    complement is then factored. Returns False if M is not positive definite.
    """
    # S = base block, r = reduced rhs
    for r in range(3):
        y[r] = b[r]
        for c in range(3):
            L[r, c] = M[r, c]
    if not _eliminate_leg(M, b, L, y, 3, 4):
        return False
    if not _eliminate_leg(M, b, L, y, 5, 6):
        return False
    # 3x3 Cholesky of the Schur complement, in place in L[3:6, 0:3]
    s00 = L[0, 0]
    if s00 <= 0.0:
        return False
    g00 = np.sqrt(s00)
    g10 = L[1, 0] / g00
    g20 = L[2, 0] / g00
    s11 = L[1, 1] - g10 * g10
    if s11 <= 0.0:
        return False
    g11 = np.sqrt(s11)
    g21 = (L[2, 1] - g20 * g10) / g11
    s22 = L[2, 2] - g20 * g20 - g21 * g21
    if s22 <= 0.0:
        return False
    g22 = np.sqrt(s22)
    z0 = y[0] / g00
    z1 = (y[1] - g10 * z0) / g11
    z2 = (y[2] - g20 * z0 - g21 * z1) / g22
    x[2] = z2 / g22
    x[1] = (z1 - g21 * x[2]) / g11
    x[0] = (z0 - g10 * x[1] - g20 * x[2]) / g00
    _back_leg(M, b, L, x, 3, 4)
    _back_leg(M, b, L, x, 5, 6)
    return True


@njit(cache=True, error_model="numpy")
def _foot_contact(P, q, qd, sn, cs, left, friction, k_contact, c_contact, b_tangent, out, J):
    """Contact at one foot using precomputed link sines/cosines; fills J with the foot Jacobian."""
    if left:
        ja, jb, col_a, col_b = 1, 2, 3, 4
    else:
        ja, jb, col_a, col_b = 3, 4, 5, 6
    la = P[LENGTH + ja]
    lb = P[LENGTH + jb]
    fx = q[0] + la * sn[ja] + lb * sn[jb]
    fz = q[1] - la * cs[ja] - lb * cs[jb]
    out[4] = fx
    out[5] = fz
    J[:, :] = 0.0
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    bx = lb * cs[jb]
    bz = lb * sn[jb]
    ax = la * cs[ja] + bx
    az = la * sn[ja] + bz
    J[0, 2] = ax
    J[1, 2] = az
    J[0, col_a] = ax
    J[1, col_a] = az
    J[0, col_b] = bx
    J[1, col_b] = bz
    if fz >= 0.0:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return
    vx = qd[0] + ax * (qd[2] + qd[col_a]) + bx * qd[col_b]
    vz = qd[1] + az * (qd[2] + qd[col_a]) + bz * qd[col_b]
    depth = -fz
    normal = k_contact * depth - c_contact * vz
    if normal < 0.0:
        normal = 0.0
    cap = friction * normal
    tangent = -b_tangent * vx
    if tangent > cap:
        tangent = cap
    elif tangent < -cap:
        tangent = -cap
    out[0] = normal
    out[1] = tangent
    out[2] = depth
    out[3] = 1.0


@njit(cache=True, error_model="numpy")
def contact_forces(P, q, qd, friction, k_contact, c_contact, b_tangent, out):
    """Per-foot penalty contact. out[f] = (N, T, penetration, in_contact, foot_x, foot_z)."""
    phi = np.empty(5)
    link_angles(q, phi)
    sn = np.sin(phi)
    cs = np.cos(phi)
    J = np.empty((2, NQ))
    for f in range(2):
        _foot_contact(P, q, qd, sn, cs, f == 0, friction, k_contact, c_contact, b_tangent,
                      out[f], J)


@njit(cache=True, error_model="numpy")
def pd_torque(kp, kd, q_m, qd_m, target, limit, u):
    for k in range(NU):
        v = kp[k] * (target[k] - q_m[k]) - kd[k] * qd_m[k]
        if v > limit[k]:
            v = limit[k]
        elif v < -limit[k]:
            v = -limit[k]
        u[k] = v


@njit(cache=True, error_model="numpy")
def _substep_ws(P, q, qd, u, friction, wrench, knee_lo, knee_hi, limit_k, limit_b,
                k_contact, c_contact, b_tangent, contact_on, dt, contacts, ws):
    M, h, rhs, qdd, L, y = ws[5], ws[6], ws[7], ws[8], ws[9], ws[10]
    sn, cs, J = ws[1], ws[2], ws[4]
    _dynamics_ws(P, q, qd, M, h, ws)
    for k in range(NQ):
        rhs[k] = -h[k]
    for k in range(NU):
        rhs[3 + k] += u[k]
    rhs[0] += wrench[0]
    rhs[1] += wrench[1]
    rhs[2] += wrench[2]
    # knee mechanical stops
    for kj in (4, 6):
        if q[kj] < knee_lo:
            t = limit_k * (knee_lo - q[kj]) - limit_b * qd[kj]
            if t > 0.0:
                rhs[kj] += t
        elif q[kj] > knee_hi:
            t = limit_k * (knee_hi - q[kj]) - limit_b * qd[kj]
            if t < 0.0:
                rhs[kj] += t
    if contact_on:
        for f in range(2):
            _foot_contact(P, q, qd, sn, cs, f == 0, friction, k_contact, c_contact,
                          b_tangent, contacts[f], J)
            if contacts[f, 3] != 0.0:
                for k in range(NQ):
                    rhs[k] += J[0, k] * contacts[f, 1] + J[1, k] * contacts[f, 0]
    else:
        contacts[:, :4] = 0.0
    if not solve_biped(M, rhs, qdd, L, y):
        return False
    for k in range(NQ):
        qd[k] += dt * qdd[k]
    for k in range(NQ):
        q[k] += dt * qd[k]
    return True


@njit(cache=True, error_model="numpy")
def substep(P, q, qd, u, friction, wrench, knee_lo, knee_hi, limit_k, limit_b,
            k_contact, c_contact, b_tangent, contact_on, dt, contacts):
    """One semi-implicit Euler step of M qdd = B u + Jc^T f + tau_limit + wrench - h.

    Mutates q, qd in place and fills ``contacts``. Returns False when the mass
    matrix factorization fails.
    """
    return _substep_ws(P, q, qd, u, friction, wrench, knee_lo, knee_hi, limit_k, limit_b,
                       k_contact, c_contact, b_tangent, contact_on, dt, contacts,
                       make_workspace())


@njit(cache=True, error_model="numpy")
def knee_heights(P, q, out):
    out[0] = q[1] - P[LENGTH + 1] * np.cos(q[2] + q[3])
    out[1] = q[1] - P[LENGTH + 3] * np.cos(q[2] + q[5])


@njit(cache=True, error_model="numpy")
def advance_period(P, q, qd, held, pending, filt, delay_steps, friction, wrench, wrench_steps,
                   kp, kd, alpha, knee_lo, knee_hi, limit_k, limit_b,
                   k_contact, c_contact, b_tangent, dt, n_sub, bound,
                   out_u2, out_grf, out_flags, out_u):
    """Run one policy period (n_sub substeps) for every robot in the batch.

    Row n of each batched array belongs to robot n. The newly issued target
    ``pending[n]`` replaces ``held[n]`` at substep ``delay_steps[n]``; the
    target then passes the first-order filter and the PD law each substep.
    On return ``held`` holds the applied targets for the next period.
    """
    n_env = q.shape[0]
    ws = make_workspace()
    contacts = np.zeros((2, 6))
    u = np.empty(NU)
    target = np.empty(NU)
    knees = ws[12]
    zero_wrench = np.zeros(3)
    limit = np.empty(NU)
    for n in range(n_env):
        Pn = P[n]
        for k in range(NU):
            limit[k] = Pn[TORQUE_LIMIT + k]
        out_u2[n] = 0.0
        out_u[n, :] = 0.0
        out_grf[n, 0] = 0.0
        out_grf[n, 1] = 0.0
        out_flags[n] = 0
        if not (np.isfinite(q[n]).all() and np.isfinite(qd[n]).all()):
            out_flags[n] |= FLAG_BLOWUP
            continue
        qn = q[n]
        qdn = qd[n]
        fn = filt[n]
        for s in range(n_sub):
            if s >= delay_steps[n]:
                for k in range(NU):
                    target[k] = pending[n, k]
            else:
                for k in range(NU):
                    target[k] = held[n, k]
            for k in range(NU):
                fn[k] = alpha * target[k] + (1.0 - alpha) * fn[k]
            for k in range(NU):
                v = kp[k] * (fn[k] - qn[3 + k]) - kd[k] * qdn[3 + k]
                if v > limit[k]:
                    v = limit[k]
                elif v < -limit[k]:
                    v = -limit[k]
                u[k] = v
            w = wrench[n] if s < wrench_steps[n] else zero_wrench
            ok = _substep_ws(Pn, qn, qdn, u, friction[n], w, knee_lo, knee_hi, limit_k,
                             limit_b, k_contact, c_contact, b_tangent, True, dt, contacts, ws)
            for k in range(NU):
                out_u2[n] += u[k] * u[k]
                out_u[n, k] += u[k]
            out_grf[n, 0] += contacts[0, 0]
            out_grf[n, 1] += contacts[1, 0]
            knee_heights(Pn, qn, knees)
            if knees[0] <= 0.0 or knees[1] <= 0.0:
                out_flags[n] |= FLAG_KNEE_GROUND
            bad = not ok
            # pelvis x is unbounded while walking
            for k in range(NQ):
                if not abs(qdn[k]) < bound:
                    bad = True
                if k > 0 and not abs(qn[k]) < bound:
                    bad = True
            if bad:
                out_flags[n] |= FLAG_BLOWUP
                break
        out_u2[n] /= n_sub
        for k in range(NU):
            out_u[n, k] /= n_sub
        out_grf[n, 0] /= n_sub
        out_grf[n, 1] /= n_sub
        for k in range(NU):
            held[n, k] = pending[n, k]


@njit(cache=True)
def reference_batch(coeffs, phases, step_period, out_pos, out_vel):
    """Reference positions and velocities for coeffs (n, 4, 2, 6) at phases (n, m)."""
    n, m = phases.shape
    binom = (1.0, 5.0, 10.0, 10.0, 5.0, 1.0)
    for i in range(n):
        for j in range(m):
            ph = phases[i, j] % 2.0
            step = 1 if ph >= 1.0 else 0
            s = min(max(ph - step, 0.0), 1.0)
            t = 1.0 - s
            for k in range(NU):
                v = 0.0
                d = 0.0
                for r in range(6):
                    b = binom[r] * s ** r * t ** (5 - r)
                    v += b * coeffs[i, k, step, r]
                for r in range(5):
                    b4 = (1.0, 4.0, 6.0, 4.0, 1.0)[r] * s ** r * t ** (4 - r)
                    d += b4 * (coeffs[i, k, step, r + 1] - coeffs[i, k, step, r])
                out_pos[i, j, k] = v
                out_vel[i, j, k] = 5.0 * d / step_period
