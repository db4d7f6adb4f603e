"""Array versions of the compiled cycle kernels (used when numba is off).

Same streams, same formulas, vectorised across cycles instead of looping
over them; agreement with :mod:`clearing_lab._kernels_nb` is to rounding.
"""

import math

import numpy as np

from . import rng
from .rng import CROSS, EXACT, EXTEND, HIT, PATH

_INV_2SQRT3 = 0.5 / math.sqrt(3.0)
_WINDOW = 256  # bridge steps per batch of normals (multiple of 4)


def _exact_pairs(seed, cycles, purpose, t, sig, a, c):
    n = sig.shape[0]
    z = rng.normals(seed, cycles, purpose, 2 * n)
    z1, z2 = z[:, 0::2], z[:, 1::2]
    st = np.sqrt(t)[:, None]
    xs = sig * st * z1
    xi = sig * (st**3) * (0.5 * z1 + _INV_2SQRT3 * z2)
    gs = xs @ a
    gi = xi @ a
    return xs - np.outer(gs, c), xi - np.outer(gi, c)


def _ig_draw(seed, cycles, mean, lam):
    x0, _, x2, _ = rng._blocks(seed, cycles, HIT, 0)
    z = rng._to_normal(x0)
    u = rng._to_unit(x2)
    r = mean * z * z / (2.0 * lam)
    x = mean / (1.0 + r + np.sqrt(r * r + 2.0 * r))
    return np.where(u * (mean + x) <= mean, x, mean * mean / x)


def _bes3_area(seed, cycles, level, tau, s, k_steps):
    m = cycles.shape[0]
    x = np.zeros((m, 3))
    rho_prev = np.zeros(m)
    area = np.zeros(m)
    kk = k_steps.astype(float) ** 2
    target = np.array([level, 0.0, 0.0])
    for k0 in range(0, int(k_steps.max()), _WINDOW):
        live = np.nonzero(k_steps > k0)[0]
        z = rng.normals(seed, cycles[live], PATH, 3 * _WINDOW, start_block=3 * k0 // 4)
        z = z.reshape(len(live), _WINDOW, 3)
        for dk in range(_WINDOW):
            k = k0 + dk
            rows = live[k_steps[live] > k]
            if rows.size == 0:
                break
            sel = np.searchsorted(live, rows)
            kr, tr = k_steps[rows], tau[rows]
            r_k = tr * (kr - k) * (kr + k) / kk[rows]
            r_n = tr * (kr - k - 1) * (kr + k + 1) / kk[rows]
            h = tr * (2 * k + 1) / kk[rows]
            frac = (h / r_k)[:, None]
            sd = (s * np.sqrt(h * r_n / r_k))[:, None]
            xr = x[rows]
            xr += frac * (target - xr) + sd * z[sel, dk]
            x[rows] = xr
            rho = np.sqrt(np.sum(xr * xr, axis=1))
            area[rows] += 0.5 * h * (rho_prev[rows] + rho)
            rho_prev[rows] = rho
    return area


def _finish(tau, g_t, g_i, c, ys, yi, d, sig, omega, ext=None):
    x = np.outer(g_t, c) + ys
    xi = np.outer(g_i, c) + yi
    total = tau
    if ext is not None:
        ext_t, es, ei = ext
        xi = xi + ext_t * x + ei
        x = x + es
        total = tau + ext_t
    n_at = d * total[:, None] + x
    int_n = 0.5 * d * (total * total)[:, None] + xi
    tau_b = total[:, None] * x / sig
    return total, n_at, int_n, tau_b, n_at @ omega


def _mix(a, d, sig):
    mu = float(a @ d)
    s2 = float(np.sum(a * a * sig * sig))
    return mu, s2, a * sig * sig / s2


def tp_chunk(seed, cycles, t, d, sig, omega):
    n = d.shape[0]
    zero = np.zeros(n)
    tau = np.full(cycles.shape[0], float(t))
    xs, xi = _exact_pairs(seed, cycles, EXACT, tau, sig, zero, zero)
    return _finish(tau, np.zeros_like(tau), np.zeros_like(tau), zero, xs, xi, d, sig, omega)


def hit_chunk(seed, cycles, level, a, d, sig, omega, dt, ext_t):
    mu, s2, c = _mix(a, d, sig)
    s = math.sqrt(s2)
    tau = _ig_draw(seed, cycles, level / mu, level * level / s2)
    k_steps = np.maximum(1, np.ceil(tau / dt)).astype(np.int64)
    area = _bes3_area(seed, cycles, level, tau, s, k_steps)
    g_t = level - mu * tau
    g_i = level * tau - area - 0.5 * mu * tau * tau
    ys, yi = _exact_pairs(seed, cycles, EXACT, tau, sig, a, c)
    ext = None
    if ext_t > 0:
        zero = np.zeros_like(c)
        es, ei = _exact_pairs(seed, cycles, EXTEND, np.full_like(tau, ext_t), sig, zero, zero)
        ext = (ext_t, es, ei)
    return _finish(tau, g_t, g_i, c, ys, yi, d, sig, omega, ext)


def _levy_path(seed, cycles, t_cap, s, levels):
    n_int = 1 << levels
    z = rng.normals(seed, cycles, PATH, n_int)
    g = np.empty((cycles.shape[0], n_int + 1))
    g[:, 0] = 0.0
    g[:, n_int] = s * math.sqrt(t_cap) * z[:, 0]
    for lev in range(1, levels + 1):
        step = n_int >> lev
        sd = s * math.sqrt(t_cap / (1 << (lev + 1)))
        pts = np.arange(1 << (lev - 1)) * (2 * step) + step
        g[:, pts] = 0.5 * (g[:, pts - step] + g[:, pts + step]) + sd * z[:, (1 << (lev - 1)) :(1 << lev)]
    return g


def irhp_chunk(seed, cycles, level, t_cap, a, d, sig, omega, levels, bridge):
    mu, s2, c = _mix(a, d, sig)
    s = math.sqrt(s2)
    n_int = 1 << levels
    h = t_cap / n_int
    m = cycles.shape[0]
    g = _levy_path(seed, cycles, t_cap, s, levels)
    grid = np.arange(n_int + 1) * h
    w = mu * grid + g
    w1, w2 = w[:, :-1], w[:, 1:]
    over = w2 >= level
    event = over.copy()
    p = np.zeros_like(w1)
    u = np.ones_like(w1)
    if bridge:
        u = rng.uniforms(seed, cycles, CROSS, n_int)
        with np.errstate(over="ignore", invalid="ignore"):
            p = np.where(over, 1.0, np.exp(-2.0 * (level - w1) * (level - w2) / (s2 * h)))
        event |= u < p
    hit = event.any(axis=1)
    k = np.where(hit, np.argmax(event, axis=1), n_int - 1)
    rows = np.arange(m)
    seg = 0.5 * h * (w1 + w2)
    before = np.concatenate([np.zeros((m, 1)), np.cumsum(seg, axis=1)], axis=1)
    t1 = k * h
    a1, a2 = w1[rows, k], w2[rows, k]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_lin = t1 + h * (level - a1) / (a2 - a1)
        t_br = t1 + (u[rows, k] / p[rows, k]) * h
    t_hit = np.where(over[rows, k], t_lin, t_br)
    tau = np.where(hit, t_hit, t_cap)
    area = np.where(hit, before[rows, k] + 0.5 * (t_hit - t1) * (a1 + level), before[:, n_int])
    g_t = np.where(hit, level - mu * tau, g[:, n_int])
    g_i = area - 0.5 * mu * tau * tau
    ys, yi = _exact_pairs(seed, cycles, EXACT, tau, sig, a, c)
    return _finish(tau, g_t, g_i, c, ys, yi, d, sig, omega)
