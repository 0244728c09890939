"""Compiled stacked derivative and fixed-step RK4 loop.

Flat state layout for ``N`` followers::

    [ VP (N+1)x4 | RP followers Nx4 | AP (N+1)x4 | k_hat followers Nx4 | k_x0 (3) k_xt0 (3) ]

The reference-platoon leader is the virtual leader, so it is not stored. The
actual leader keeps a 4-slot row whose spacing-error entry stays at zero.
``engine.stacked_derivative`` computes the same right-hand side from the
per-operation functions; the test-suite holds the two together.
"""

import math

import numba
import numpy as np

OK = -1
NONFINITE = -2


def layout(n):
    vp = 0
    rp = vp + 4 * (n + 1)
    ap = rp + 4 * n
    kf = ap + 4 * (n + 1)
    kl = kf + 4 * n
    dim = kl + 6
    return vp, rp, ap, kf, kl, dim


@numba.njit(cache=True)
def u_in_at(t, ts, us, mode):
    n = ts.size
    if t < ts[0]:
        if mode == 0:
            return 0.0
        return us[0]
    if t >= ts[n - 1]:
        return us[n - 1]
    k = 0
    while k + 1 < n and ts[k + 1] <= t:
        k += 1
    if mode == 0:
        return us[k]
    w = (t - ts[k]) / (ts[k + 1] - ts[k])
    return us[k] + w * (us[k + 1] - us[k])


@numba.njit(cache=True)
def derivative(x, t, out, info, n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt,
               ts, us, mode):
    """Fill ``out`` with dx/dt. Returns OK or the index of a vehicle whose
    tracking error left the barrier set (its norm goes to ``info[0]``)."""
    rp = 4 * (n + 1)
    ap = rp + 4 * n
    kf = ap + 4 * (n + 1)
    kl = kf + 4 * n
    uin = u_in_at(t, ts, us, mode)

    # virtual leader
    a = x[2]
    u = x[3]
    out[0] = 0.0
    out[1] = a
    out[2] = (-a + u) / tb
    out[3] = (-u + uin) / h

    # virtual followers, driven by virtual predecessors
    for j in range(1, n + 1):
        o = 4 * j
        p = o - 4
        e = x[o]
        v = x[o + 1]
        a = x[o + 2]
        u = x[o + 3]
        wv = x[p + 1]
        wu = x[p + 3]
        out[o] = wv - v - h * a
        out[o + 1] = a
        out[o + 2] = (-a + u) / tb
        out[o + 3] = (kp * e - kd * v - kd * h * a - u + kd * wv + wu) / h

    # reference followers, driven by actual predecessors
    for j in range(1, n + 1):
        o = rp + 4 * (j - 1)
        p = ap + 4 * (j - 1)
        e = x[o]
        v = x[o + 1]
        a = x[o + 2]
        u = x[o + 3]
        wv = x[p + 1]
        wu = x[p + 3]
        out[o] = wv - v - h * a
        out[o + 1] = a
        out[o + 2] = (-a + u) / tb
        out[o + 3] = (kp * e - kd * v - kd * h * a - u + kd * wv + wu) / h

    # actual leader against the virtual (= reference) leader
    xt0 = np.empty(3)
    for i in range(3):
        xt0[i] = x[ap + 1 + i] - x[1 + i]
    q = 0.0
    proj = 0.0
    for i in range(3):
        s = 0.0
        for k in range(3):
            s += pm0[i, k] * xt0[k]
        q += xt0[i] * s
        proj += pm0[i, 1] * xt0[i]
    r = math.sqrt(max(q, 0.0))
    if not r < c:
        info[0] = r
        return 0
    gap = c - r
    wpsi = (1.0 + 0.5 * r / gap) / gap
    uad = 0.0
    for i in range(3):
        uad += x[kl + i] * x[ap + 1 + i] + x[kl + 3 + i] * xt0[i]
    v = x[ap + 1]
    a = x[ap + 2]
    u = x[ap + 3]
    out[ap] = 0.0
    out[ap + 1] = a
    out[ap + 2] = (-a + lam[0] * (u + uad)) / tau[0]
    out[ap + 3] = (-u + uin) / h
    for i in range(3):
        s1 = 0.0
        s2 = 0.0
        for k in range(3):
            s1 += gx[i, k] * x[ap + 1 + k]
            s2 += gxt[i, k] * xt0[k]
        out[kl + i] = -wpsi * proj * s1
        out[kl + 3 + i] = -wpsi * proj * s2

    # actual followers
    xt = np.empty(4)
    for j in range(1, n + 1):
        o = ap + 4 * j
        p = o - 4
        ro = rp + 4 * (j - 1)
        ko = kf + 4 * (j - 1)
        for i in range(4):
            xt[i] = x[o + i] - x[ro + i]
        q = 0.0
        proj = 0.0
        for i in range(4):
            s = 0.0
            for k in range(4):
                s += pm[i, k] * xt[k]
            q += xt[i] * s
            proj += pm[i, 2] * xt[i]
        r = math.sqrt(max(q, 0.0))
        if not r < c:
            info[0] = r
            return j
        gap = c - r
        wpsi = (1.0 + 0.5 * r / gap) / gap
        uad = 0.0
        for i in range(4):
            uad += x[ko + i] * x[o + i]
        e = x[o]
        v = x[o + 1]
        a = x[o + 2]
        u = x[o + 3]
        wv = x[p + 1]
        wu = x[p + 3]
        out[o] = wv - v - h * a
        out[o + 1] = a
        out[o + 2] = (-a + lam[j] * (u + uad)) / tau[j]
        out[o + 3] = (kp * e - kd * v - kd * h * a - u + kd * wv + wu) / h
        for i in range(4):
            s = 0.0
            for k in range(4):
                s += gf[i, k] * x[o + k]
            out[ko + i] = -wpsi * proj * s

    for i in range(out.size):
        if not math.isfinite(out[i]):
            info[0] = i
            return NONFINITE
    return OK


@numba.njit(cache=True)
def integrate(x0, t0, dt, n_steps, decimate, samples, info,
              n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt, ts, us, mode):
    """RK4 from ``t0`` for ``n_steps`` steps, writing every ``decimate``-th state
    (and the last one) into ``samples``. Returns ``(status, step, n_written)``."""
    dim = x0.size
    x = x0.copy()
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    y = np.empty(dim)
    samples[0, :] = x
    written = 1
    half = 0.5 * dt
    for step in range(n_steps):
        t = t0 + step * dt
        st = derivative(x, t, k1, info, n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt, ts, us, mode)
        if st != OK:
            info[1] = t
            return st, step, written
        for i in range(dim):
            y[i] = x[i] + half * k1[i]
        st = derivative(y, t + half, k2, info, n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt, ts, us, mode)
        if st != OK:
            info[1] = t + half
            return st, step, written
        for i in range(dim):
            y[i] = x[i] + half * k2[i]
        st = derivative(y, t + half, k3, info, n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt, ts, us, mode)
        if st != OK:
            info[1] = t + half
            return st, step, written
        for i in range(dim):
            y[i] = x[i] + dt * k3[i]
        st = derivative(y, t + dt, k4, info, n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt, ts, us, mode)
        if st != OK:
            info[1] = t + dt
            return st, step, written
        for i in range(dim):
            x[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if (step + 1) % decimate == 0 or step + 1 == n_steps:
            samples[written, :] = x
            written += 1
    # containment check on the final state as well
    st = derivative(x, t0 + n_steps * dt, k1, info, n, h, kp, kd, tb, c, tau, lam, pm, pm0, gf, gx, gxt, ts, us, mode)
    if st != OK:
        info[1] = t0 + n_steps * dt
        return st, n_steps, written
    return OK, n_steps, written
