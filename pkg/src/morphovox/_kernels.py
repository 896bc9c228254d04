"""Numba kernels for the beam-mass lattice.

Units inside the kernels are cm, g, s (forces in dyne).  Quaternions are
stored as (w, x, y, z) and rotate body vectors into the world frame.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
# no nnan/ninf: divergence detection relies on isfinite
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


@njit(cache=True, fastmath=_FAST, inline="always")
def _qmul(a0, a1, a2, a3, b0, b1, b2, b3):
    return (
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    )


@njit(cache=True, fastmath=_FAST, inline="always")
def _qrot(w, x, y, z, v0, v1, v2):
    # v' = v + 2w (u x v) + 2 u x (u x v), u = (x, y, z)
    c0 = y * v2 - z * v1
    c1 = z * v0 - x * v2
    c2 = x * v1 - y * v0
    d0 = y * c2 - z * c1
    d1 = z * c0 - x * c2
    d2 = x * c1 - y * c0
    return (
        v0 + 2.0 * (w * c0 + d0),
        v1 + 2.0 * (w * c1 + d1),
        v2 + 2.0 * (w * c2 + d2),
    )


@njit(cache=True, fastmath=_FAST, inline="always")
def _unperm(a, x, y, z):
    # inverse of the cyclic map (v[a], v[a+1], v[a+2]) -> (x, y, z)
    if a == 0:
        return (x, y, z)
    if a == 1:
        return (z, x, y)
    return (y, z, x)


@njit(cache=True, fastmath=_FAST)
def xi(b):
    v = (4.0 * b - 1.0) / 3.0
    if v > 1.0:
        v = 1.0
    if v < 0.0:
        v = 0.0
    return v


@njit(cache=True, fastmath=_FAST)
def current_lengths(rest, phase, t, t_act0, amplitude, freq, actuate,
                    ramp_time, out):
    """Per-voxel configured length at time ``t``.

    Before actuation starts the lengths grow linearly from the 1 cm lattice
    pitch to their resting value over ``ramp_time``.
    """
    n = rest.shape[0]
    if actuate:
        arg0 = TWO_PI * freq * (t - t_act0)
        for i in range(n):
            out[i] = rest[i] + amplitude * math.sin(arg0 + phase[i]) * xi(rest[i])
    else:
        s = 1.0
        if ramp_time > 0.0 and t < ramp_time:
            s = t / ramp_time
        for i in range(n):
            out[i] = 1.0 + (rest[i] - 1.0) * s


@njit(cache=True, fastmath=_FAST)
def beam_forces(pos, quat, base, length, bi, bj, axis,
                k_axial, k_bend, k_tors, force, torque):
    """Accumulate the elastic loads of every beam.

    Each beam is evaluated in the frame halfway between its two end
    orientations, with the lattice axis mapped cyclically onto local x.
    Loads on the lower-index end are derived from equilibrium, so internal
    forces and moments balance exactly.
    """
    m = bi.shape[0]
    for e in range(m):
        i = bi[e]
        j = bj[e]
        a = axis[e]
        a1 = (a + 1) % 3
        a2 = (a + 2) % 3

        q10 = quat[i, 0]; q11 = quat[i, 1]; q12 = quat[i, 2]; q13 = quat[i, 3]
        q20 = quat[j, 0]; q21 = quat[j, 1]; q22 = quat[j, 2]; q23 = quat[j, 3]
        if q10 * q20 + q11 * q21 + q12 * q22 + q13 * q23 < 0.0:
            q20 = -q20; q21 = -q21; q22 = -q22; q23 = -q23
        m0 = q10 + q20; m1 = q11 + q21; m2 = q12 + q22; m3 = q13 + q23
        nm = math.sqrt(m0 * m0 + m1 * m1 + m2 * m2 + m3 * m3)
        m0 /= nm; m1 /= nm; m2 /= nm; m3 /= nm

        # world -> mid frame
        dw0 = pos[j, 0] - pos[i, 0]
        dw1 = pos[j, 1] - pos[i, 1]
        dw2 = pos[j, 2] - pos[i, 2]
        r = _qrot(m0, -m1, -m2, -m3, dw0, dw1, dw2)
        dx = r[a]; dy = r[a1]; dz = r[a2]

        r1 = _qmul(m0, -m1, -m2, -m3, q10, q11, q12, q13)
        r2 = _qmul(m0, -m1, -m2, -m3, q20, q21, q22, q23)
        s1 = 2.0 if r1[0] >= 0.0 else -2.0
        s2 = 2.0 if r2[0] >= 0.0 else -2.0
        t1 = (s1 * r1[1], s1 * r1[2], s1 * r1[3])
        t2 = (s2 * r2[1], s2 * r2[2], s2 * r2[3])
        t1x = t1[a]; t1y = t1[a1]; t1z = t1[a2]
        t2x = t2[a]; t2y = t2[a1]; t2z = t2[a2]

        L0 = 0.5 * (base[i] + base[j])
        Lr = 0.5 * (length[i] + length[j])
        # cross-section scales with the voxel: A ~ L0^2, I and J ~ L0^4
        ka = k_axial * L0
        kb = k_bend * L0 * L0 * L0
        kt = k_tors * L0 * L0 * L0

        # chord rotation and end rotations relative to it
        py = -dz / L0
        pz = dy / L0
        p1y = t1y - py; p1z = t1z - pz
        p2y = t2y - py; p2z = t2z - pz
        sy = 6.0 * kb * (p1y + p2y)
        sz = 6.0 * kb * (p1z + p2z)

        fx = -ka * (dx - Lr)
        fy = sz / L0
        fz = -sy / L0
        # half the end-moment difference; the mid frame also turns the chord,
        # and that couple (d x F) is shared equally by both ends
        hx = -kt * (t2x - t1x)
        hy = kb * (p1y - p2y)
        hz = kb * (p1z - p2z)
        cx = 0.5 * (dy * fz - dz * fy)
        cy = 0.5 * (dz * fx - dx * fz)
        cz = 0.5 * (dx * fy - dy * fx)

        fl = _unperm(a, fx, fy, fz)
        ml = _unperm(a, hx - cx, hy - cy, hz - cz)
        nl = _unperm(a, -hx - cx, -hy - cy, -hz - cz)
        fw = _qrot(m0, m1, m2, m3, fl[0], fl[1], fl[2])
        mw = _qrot(m0, m1, m2, m3, ml[0], ml[1], ml[2])
        nw = _qrot(m0, m1, m2, m3, nl[0], nl[1], nl[2])

        for k in range(3):
            force[j, k] += fw[k]
            force[i, k] -= fw[k]
            torque[j, k] += mw[k]
            torque[i, k] += nw[k]


@njit(cache=True, fastmath=_FAST)
def damping_coefficients(base, bi, bj, k_axial, k_bend, zeta, mass, inert,
                         dt, ca, g_ax, g_r):
    """Per-beam damping constants that depend only on the resting lengths."""
    for e in range(bi.shape[0]):
        i = bi[e]
        j = bj[e]
        L0 = 0.5 * (base[i] + base[j])
        ca[e] = 2.0 * zeta * math.sqrt(0.5 * mass * k_axial * L0)
        k_r = 1.0 / inert[i] + 1.0 / inert[j]
        cr = 2.0 * zeta * math.sqrt(4.0 * k_bend * L0 * L0 * L0 / k_r)
        k_ax = 2.0 / mass
        g_ax[e] = (math.exp(-ca[e] * k_ax * dt) - 1.0) / k_ax
        g_r[e] = (math.exp(-cr * k_r * dt) - 1.0) / k_r


@njit(cache=True, fastmath=_FAST)
def beam_damping(pos, vel, angvel, bi, bj, ca, g_ax, g_r, mass, inert, dt):
    """Damp every beam's non-rigid relative motion over one step.

    Beams are visited in order and each applies the equal-and-opposite
    impulse that decays its relative velocity exactly (exponentially) for
    that pair alone, so momentum is conserved and the update cannot go
    unstable whatever the step size.
    """
    m = bi.shape[0]
    for sweep in range(2 * m):
        e = sweep if sweep < m else 2 * m - 1 - sweep
        i = bi[e]
        j = bj[e]
        d0 = pos[j, 0] - pos[i, 0]
        d1 = pos[j, 1] - pos[i, 1]
        d2 = pos[j, 2] - pos[i, 2]
        dd = d0 * d0 + d1 * d1 + d2 * d2
        wa0 = 0.5 * (angvel[i, 0] + angvel[j, 0])
        wa1 = 0.5 * (angvel[i, 1] + angvel[j, 1])
        wa2 = 0.5 * (angvel[i, 2] + angvel[j, 2])
        u0 = vel[j, 0] - vel[i, 0] - (wa1 * d2 - wa2 * d1)
        u1 = vel[j, 1] - vel[i, 1] - (wa2 * d0 - wa0 * d2)
        u2 = vel[j, 2] - vel[i, 2] - (wa0 * d1 - wa1 * d0)

        # split into components along and across the chord
        ua = (u0 * d0 + u1 * d1 + u2 * d2) / dd
        a0 = ua * d0; a1 = ua * d1; a2 = ua * d2
        ri = 1.0 / inert[i]
        rj = 1.0 / inert[j]
        k_tr = 2.0 / mass + 0.25 * dd * (ri + rj)
        gt = (math.exp(-ca[e] * k_tr * dt) - 1.0) / k_tr
        ga = g_ax[e]
        l0 = ga * a0 + gt * (u0 - a0)
        l1 = ga * a1 + gt * (u1 - a1)
        l2 = ga * a2 + gt * (u2 - a2)

        h0 = -0.5 * (d1 * l2 - d2 * l1)
        h1 = -0.5 * (d2 * l0 - d0 * l2)
        h2 = -0.5 * (d0 * l1 - d1 * l0)
        vel[j, 0] += l0 / mass; vel[j, 1] += l1 / mass; vel[j, 2] += l2 / mass
        vel[i, 0] -= l0 / mass; vel[i, 1] -= l1 / mass; vel[i, 2] -= l2 / mass
        angvel[i, 0] += h0 * ri; angvel[i, 1] += h1 * ri; angvel[i, 2] += h2 * ri
        angvel[j, 0] += h0 * rj; angvel[j, 1] += h1 * rj; angvel[j, 2] += h2 * rj

        # relative spin and bending rates
        gr = g_r[e]
        for k in range(3):
            w = gr * (angvel[j, k] - angvel[i, k])
            angvel[j, k] += w * rj
            angvel[i, k] -= w * ri


@njit(cache=True, fastmath=_FAST)
def ground_forces(pos, vel, force, length, mass, dt, k_ground, zeta_ground,
                  mu_s, mu_k, out):
    """Penalty normal force plus Coulomb friction against the plane z = 0.

    ``force`` holds the non-contact load; friction sticks whenever the
    force needed to stop tangential motion this step is within the static
    limit, otherwise it slides at the kinetic limit.
    """
    n = pos.shape[0]
    cg = 2.0 * zeta_ground * math.sqrt(mass * k_ground)
    for i in range(n):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
        out[i, 2] = 0.0
        pen = 0.5 * length[i] - pos[i, 2]
        if pen <= 0.0:
            continue
        normal = k_ground * pen - cg * vel[i, 2]
        if normal <= 0.0:
            continue
        out[i, 2] = normal
        sx = -(force[i, 0] + mass * vel[i, 0] / dt)
        sy = -(force[i, 1] + mass * vel[i, 1] / dt)
        if math.sqrt(sx * sx + sy * sy) <= mu_s * normal:
            out[i, 0] = sx
            out[i, 1] = sy
        else:
            ux = vel[i, 0] + force[i, 0] * dt / mass
            uy = vel[i, 1] + force[i, 1] * dt / mass
            nu = math.sqrt(ux * ux + uy * uy)
            if nu > 0.0:
                out[i, 0] = -mu_k * normal * ux / nu
                out[i, 1] = -mu_k * normal * uy / nu


@njit(cache=True, fastmath=_FAST)
def integrate(pos, vel, quat, angvel, rest, phase, bi, bj, axis, mass,
              inertia, step0, n_steps, dt, act_step0, actuate, ramp_time,
              amplitude, freq, gravity, k_axial, k_bend, k_tors, zeta,
              global_damping, ground, k_ground, zeta_ground, mu_s, mu_k,
              contact):
    """Advance the state in place by ``n_steps`` semi-implicit Euler steps.

    Time is ``(step0 + s) * dt``; actuation phase counts from ``act_step0``.
    ``contact`` receives the ground forces of the last step.
    Returns -1 on success, else the index of the first step that produced a
    non-finite state.
    """
    n = pos.shape[0]
    force = np.zeros((n, 3))
    torque = np.zeros((n, 3))
    contact[:, :] = 0.0
    zero = np.zeros((n, 3))
    ca = np.empty(bi.shape[0])
    g_ax = np.empty(bi.shape[0])
    g_r = np.empty(bi.shape[0])
    length = np.empty(n)
    base = np.empty(n)
    inert = np.empty(n)
    keep = 1.0 - global_damping
    for s in range(n_steps):
        # times from integer step counts, so chunked runs match single runs
        tt = (step0 + s) * dt
        ta = (step0 + s - act_step0) * dt
        current_lengths(rest, phase, ta if actuate else tt, 0.0, amplitude,
                        freq, actuate, ramp_time, length)
        current_lengths(rest, phase, tt, 0.0, 0.0, freq, False,
                        ramp_time, base)
        force[:, :] = 0.0
        torque[:, :] = 0.0
        beam_forces(pos, quat, base, length, bi, bj, axis,
                    k_axial, k_bend, k_tors, force, torque)
        for i in range(n):
            inert[i] = inertia * base[i] * base[i]
        for e in range(bi.shape[0]):
            L0 = 0.5 * (base[bi[e]] + base[bj[e]])
            r = inertia * L0 * L0
            if r > inert[bi[e]]:
                inert[bi[e]] = r
            if r > inert[bj[e]]:
                inert[bj[e]] = r
        for i in range(n):
            force[i, 2] -= mass * gravity
            for k in range(3):
                vel[i, k] += force[i, k] * dt / mass
                angvel[i, k] += torque[i, k] * dt / inert[i]
        if zeta > 0.0:
            if s == 0 or (not actuate and tt <= ramp_time):
                damping_coefficients(base, bi, bj, k_axial, k_bend, zeta, mass,
                                     inert, 0.5 * dt, ca, g_ax, g_r)
            beam_damping(pos, vel, angvel, bi, bj, ca, g_ax, g_r, mass,
                         inert, 0.5 * dt)
        if ground:
            # contact acts on the predicted velocity, all other loads applied
            zero[:, :] = 0.0
            ground_forces(pos, vel, zero, length, mass, dt, k_ground,
                          zeta_ground, mu_s, mu_k, contact)
            for i in range(n):
                for k in range(3):
                    vel[i, k] += contact[i, k] * dt / mass
        finite = True
        for i in range(n):
            for k in range(3):
                vel[i, k] *= keep
                angvel[i, k] *= keep
                pos[i, k] += vel[i, k] * dt
            wx = angvel[i, 0] * dt
            wy = angvel[i, 1] * dt
            wz = angvel[i, 2] * dt
            ang = math.sqrt(wx * wx + wy * wy + wz * wz)
            if ang > 0.0:
                h = 0.5 * ang
                sh = math.sin(h) / ang
                q = _qmul(math.cos(h), wx * sh, wy * sh, wz * sh,
                          quat[i, 0], quat[i, 1], quat[i, 2], quat[i, 3])
                nq = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
                for k in range(4):
                    quat[i, k] = q[k] / nq
            for k in range(3):
                if not math.isfinite(pos[i, k]) or not math.isfinite(vel[i, k]):
                    finite = False
        if not finite:
            return s
    return -1


@njit(cache=True, fastmath=_FAST)
def elastic_energy(pos, quat, base, length, bi, bj, axis, k_axial, k_bend,
                   k_tors):
    """Strain energy stored in the beams (consistent with ``beam_forces``)."""
    total = 0.0
    for e in range(bi.shape[0]):
        i = bi[e]
        j = bj[e]
        a = axis[e]
        a1 = (a + 1) % 3
        a2 = (a + 2) % 3
        q10 = quat[i, 0]; q11 = quat[i, 1]; q12 = quat[i, 2]; q13 = quat[i, 3]
        q20 = quat[j, 0]; q21 = quat[j, 1]; q22 = quat[j, 2]; q23 = quat[j, 3]
        if q10 * q20 + q11 * q21 + q12 * q22 + q13 * q23 < 0.0:
            q20 = -q20; q21 = -q21; q22 = -q22; q23 = -q23
        m0 = q10 + q20; m1 = q11 + q21; m2 = q12 + q22; m3 = q13 + q23
        nm = math.sqrt(m0 * m0 + m1 * m1 + m2 * m2 + m3 * m3)
        m0 /= nm; m1 /= nm; m2 /= nm; m3 /= nm
        r = _qrot(m0, -m1, -m2, -m3, pos[j, 0] - pos[i, 0],
                  pos[j, 1] - pos[i, 1], pos[j, 2] - pos[i, 2])
        dx = r[a]; dy = r[a1]; dz = r[a2]
        r1 = _qmul(m0, -m1, -m2, -m3, q10, q11, q12, q13)
        r2 = _qmul(m0, -m1, -m2, -m3, q20, q21, q22, q23)
        s1 = 2.0 if r1[0] >= 0.0 else -2.0
        s2 = 2.0 if r2[0] >= 0.0 else -2.0
        t1 = (s1 * r1[1], s1 * r1[2], s1 * r1[3])
        t2 = (s2 * r2[1], s2 * r2[2], s2 * r2[3])
        L0 = 0.5 * (base[i] + base[j])
        Lr = 0.5 * (length[i] + length[j])
        # cross-section scales with the voxel: A ~ L0^2, I and J ~ L0^4
        ka = k_axial * L0
        kb = k_bend * L0 * L0 * L0
        kt = k_tors * L0 * L0 * L0
        py = -dz / L0
        pz = dy / L0
        p1y = t1[a1] - py; p1z = t1[a2] - pz
        p2y = t2[a1] - py; p2z = t2[a2] - pz
        total += 0.5 * ka * (dx - Lr) ** 2
        total += 2.0 * kb * (p1y * p1y + p1y * p2y + p2y * p2y)
        total += 2.0 * kb * (p1z * p1z + p1z * p2z + p2z * p2z)
        total += 0.5 * kt * (t2[a] - t1[a]) ** 2
    return total
