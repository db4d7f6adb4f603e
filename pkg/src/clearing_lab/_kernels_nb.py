"""Compiled cycle kernels.

Each kernel fills preallocated output rows for a contiguous list of cycle
indices.  Random numbers are generated on the fly from the per-cycle Philox
streams in :mod:`clearing_lab.rng`, so the output of a cycle depends only on
``(seed, cycle)``.  :mod:`clearing_lab._kernels_np` mirrors every kernel
with array code over many cycles at once.
"""

import math

import numpy as np

from ._jit import njit
from .rng import CROSS, EXACT, EXTEND, HIT, PATH, _to_normal_nb, _to_unit_nb, normal4, philox_block

_INV_2SQRT3 = 0.5 / math.sqrt(3.0)


@njit
def _exact_pairs(seed, cycle, purpose, t, sig, a, c, xs, xi):
    """sigma_i B_i(t) and its time integral for independent motions, exactly.

    The component along ``sum_j a_j sigma_j B_j`` is projected out with
    weights ``c``; pass ``c = 0`` to keep the raw motions.
    """
    n = sig.shape[0]
    st = math.sqrt(t)
    t15 = t * st
    for b in range((2 * n + 3) // 4):
        z0, z1, z2, z3 = normal4(seed, cycle, purpose, b)
        i = 2 * b
        xs[i] = sig[i] * st * z0
        xi[i] = sig[i] * t15 * (0.5 * z0 + _INV_2SQRT3 * z1)
        if i + 1 < n:
            xs[i + 1] = sig[i + 1] * st * z2
            xi[i + 1] = sig[i + 1] * t15 * (0.5 * z2 + _INV_2SQRT3 * z3)
    gs = 0.0
    gi = 0.0
    for i in range(n):
        gs += a[i] * xs[i]
        gi += a[i] * xi[i]
    for i in range(n):
        xs[i] -= c[i] * gs
        xi[i] -= c[i] * gi


@njit
def _ig_draw(seed, cycle, mean, lam):
    x0, _, x2, _ = philox_block(seed, cycle, HIT, 0)
    z = _to_normal_nb(x0)
    u = _to_unit_nb(x2)
    r = mean * z * z / (2.0 * lam)
    x = mean / (1.0 + r + math.sqrt(r * r + 2.0 * r))
    if u * (mean + x) <= mean:
        return x
    return mean * mean / x


@njit
def _bes3_area(seed, cycle, level, tau, s, k_steps):
    """Area under a 3-d Bessel bridge from 0 to ``level`` on [0, tau].

    The bridge is the norm of a 3-d Brownian bridge, stepped on the mesh
    u_k = tau (k/K)^2 (fine near 0, where the Bessel path is roughest) and
    integrated with the trapezoidal rule.
    """
    kk = float(k_steps) * float(k_steps)
    x0 = 0.0
    x1 = 0.0
    x2 = 0.0
    rho_prev = 0.0
    area = 0.0
    buf = np.empty(4)
    pos = 4
    blk = 0
    zs = np.empty(3)
    for k in range(k_steps):
        r_k = tau * (k_steps - k) * (k_steps + k) / kk
        r_n = tau * (k_steps - k - 1) * (k_steps + k + 1) / kk
        h = tau * (2 * k + 1) / kk
        frac = h / r_k
        sd = s * math.sqrt(h * r_n / r_k)
        for j in range(3):
            if pos == 4:
                buf[0], buf[1], buf[2], buf[3] = normal4(seed, cycle, PATH, blk)
                blk += 1
                pos = 0
            zs[j] = buf[pos]
            pos += 1
        x0 += frac * (level - x0) + sd * zs[0]
        x1 += -frac * x1 + sd * zs[1]
        x2 += -frac * x2 + sd * zs[2]
        rho = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
        area += 0.5 * h * (rho_prev + rho)
        rho_prev = rho
    return area


@njit
def _finish(j, tau, g_t, g_i, c, ys, yi, ext_t, es, ei, d, sig, omega, tau_o, n_o, in_o, tb_o, load_o):
    n = d.shape[0]
    total = tau + ext_t
    load = 0.0
    for i in range(n):
        x = c[i] * g_t + ys[i]
        xi = c[i] * g_i + yi[i]
        if ext_t > 0.0:
            xi += ext_t * x + ei[i]
            x += es[i]
        n_i = d[i] * total + x
        n_o[j, i] = n_i
        in_o[j, i] = 0.5 * d[i] * total * total + xi
        tb_o[j, i] = total * x / sig[i]
        load += omega[i] * n_i
    tau_o[j] = total
    load_o[j] = load


@njit
def tp_chunk(seed, cycles, t, d, sig, omega, tau_o, n_o, in_o, tb_o, load_o):
    n = d.shape[0]
    zero = np.zeros(n)
    xs = np.empty(n)
    xi = np.empty(n)
    for j in range(cycles.shape[0]):
        _exact_pairs(seed, cycles[j], EXACT, t, sig, zero, zero, xs, xi)
        _finish(j, t, 0.0, 0.0, zero, xs, xi, 0.0, xs, xi, d, sig, omega, tau_o, n_o, in_o, tb_o, load_o)


@njit
def hit_chunk(seed, cycles, level, a, d, sig, omega, dt, ext_t, tau_o, n_o, in_o, tb_o, load_o):
    """Cycles ending when sum_i a_i N_i first reaches ``level`` (plus ``ext_t``)."""
    n = d.shape[0]
    mu = 0.0
    s2 = 0.0
    for i in range(n):
        mu += a[i] * d[i]
        s2 += a[i] * a[i] * sig[i] * sig[i]
    s = math.sqrt(s2)
    c = a * sig * sig / s2
    zero = np.zeros(n)
    mean = level / mu
    lam = level * level / s2
    ys = np.empty(n)
    yi = np.empty(n)
    es = np.zeros(n)
    ei = np.zeros(n)
    for j in range(cycles.shape[0]):
        cyc = cycles[j]
        tau = _ig_draw(seed, cyc, mean, lam)
        k_steps = max(1, int(math.ceil(tau / dt)))
        area = _bes3_area(seed, cyc, level, tau, s, k_steps)
        g_t = level - mu * tau
        g_i = level * tau - area - 0.5 * mu * tau * tau
        _exact_pairs(seed, cyc, EXACT, tau, sig, a, c, ys, yi)
        if ext_t > 0.0:
            _exact_pairs(seed, cyc, EXTEND, ext_t, sig, zero, zero, es, ei)
        _finish(j, tau, g_t, g_i, c, ys, yi, ext_t, es, ei, d, sig, omega, tau_o, n_o, in_o, tb_o, load_o)


@njit
def irhp_chunk(seed, cycles, level, t_cap, a, d, sig, omega, levels, bridge, tau_o, n_o, in_o, tb_o, load_o):
    """Capped weighted-threshold cycles on a dyadic (Levy) grid of 2^levels steps."""
    n = d.shape[0]
    mu = 0.0
    s2 = 0.0
    for i in range(n):
        mu += a[i] * d[i]
        s2 += a[i] * a[i] * sig[i] * sig[i]
    s = math.sqrt(s2)
    c = a * sig * sig / s2
    n_int = 1 << levels
    h = t_cap / n_int
    g = np.empty(n_int + 1)
    buf = np.empty(4)
    ys = np.empty(n)
    yi = np.empty(n)
    for j in range(cycles.shape[0]):
        cyc = cycles[j]
        # coarse-to-fine construction: normal number idx refines dyadic point idx
        buf[0], buf[1], buf[2], buf[3] = normal4(seed, cyc, PATH, 0)
        pos = 1
        blk = 1
        g[0] = 0.0
        g[n_int] = s * math.sqrt(t_cap) * buf[0]
        for lev in range(1, levels + 1):
            step = n_int >> lev
            sd = s * math.sqrt(t_cap / (1 << (lev + 1)))
            for r in range(1 << (lev - 1)):
                if pos == 4:
                    buf[0], buf[1], buf[2], buf[3] = normal4(seed, cyc, PATH, blk)
                    blk += 1
                    pos = 0
                p_ = (2 * r + 1) * step
                g[p_] = 0.5 * (g[p_ - step] + g[p_ + step]) + sd * buf[pos]
                pos += 1

        area = 0.0
        hit = False
        t_hit = t_cap
        ublk = -1
        u0 = u1 = u2 = u3 = 0.0
        for k in range(n_int):
            t1 = k * h
            w1 = mu * t1 + g[k]
            w2 = mu * ((k + 1) * h) + g[k + 1]
            if w2 >= level:
                t_hit = t1 + h * (level - w1) / (w2 - w1)
                hit = True
            elif bridge:
                p = math.exp(-2.0 * (level - w1) * (level - w2) / (s2 * h))
                if k // 4 != ublk:
                    ublk = k // 4
                    x0, x1, x2, x3 = philox_block(seed, cyc, CROSS, ublk)
                    u0 = _to_unit_nb(x0)
                    u1 = _to_unit_nb(x1)
                    u2 = _to_unit_nb(x2)
                    u3 = _to_unit_nb(x3)
                lane = k % 4
                u = u0 if lane == 0 else (u1 if lane == 1 else (u2 if lane == 2 else u3))
                if u < p:
                    t_hit = t1 + (u / p) * h
                    hit = True
            if hit:
                area += 0.5 * (t_hit - t1) * (w1 + level)
                break
            area += 0.5 * h * (w1 + w2)
        if hit:
            tau = t_hit
            g_t = level - mu * tau
        else:
            tau = t_cap
            g_t = g[n_int]
        g_i = area - 0.5 * mu * tau * tau
        _exact_pairs(seed, cyc, EXACT, tau, sig, a, c, ys, yi)
        _finish(j, tau, g_t, g_i, c, ys, yi, 0.0, ys, yi, d, sig, omega, tau_o, n_o, in_o, tb_o, load_o)
