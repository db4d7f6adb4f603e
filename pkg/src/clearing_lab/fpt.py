"""First-passage numerics for a scalar drifted Brownian motion.

Inverse-Gaussian law, survival and absorbed transition density below a
barrier, and adaptive quadrature for moments of the capped passage time
``tau_M ^ T`` (the IRHP cycle).  Reflected terms are evaluated in log space
so ``exp(2 mu M / s^2)`` never overflows on its own.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .analytic import HittingLaw, PolicyReport, renewal_ratio
from .errors import Infeasible, NonPositiveParameter, QuadratureFailure
from .model import SystemParams

EPSABS = 1e-10
EPSREL = 1e-8
SPATIAL_WIDTH = 10.0  # standard deviations kept on each side of mu*T
_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DriftedBM1D:
    """W(t) = mu t + s B(t)."""

    mu: float
    s: float

    def __post_init__(self):
        if not self.mu > 0:
            raise NonPositiveParameter(f"drift must be > 0, got {self.mu}")
        if not self.s > 0:
            raise NonPositiveParameter(f"diffusion must be > 0, got {self.s}")

    @classmethod
    def from_params(cls, params: SystemParams) -> "DriftedBM1D":
        """Scalar reduction of the weighted load sum_i omega_i N_i(t)."""
        return cls(params.w_drift, math.sqrt(params.w2_var))

    def hitting_law(self, level: float) -> HittingLaw:
        return HittingLaw.from_level(level, self.mu, self.s**2)


@dataclass(frozen=True)
class StoppedMoments:
    e_tau: float
    e_tau2: float
    e_w: float
    e_w2: float
    p_hit: float
    e_tau_w: float = math.nan  # E[tau W(tau)]
    var_w: float = math.nan  # Var[W(tau)], evaluated without cancellation
    var_tau: float = math.nan


# -- inverse Gaussian ------------------------------------------------------


def _law_args(law: HittingLaw):
    if not (law.ig_mu > 0 and law.ig_lambda > 0):
        raise NonPositiveParameter("inverse-Gaussian parameters must be > 0")
    return law.ig_mu, law.ig_lambda


def ig_pdf(law: HittingLaw, t):
    mu, lam = _law_args(law)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonPositiveParameter("t must be > 0")
    out = np.sqrt(lam / (2 * np.pi * t**3)) * np.exp(-lam * (t - mu) ** 2 / (2 * mu * mu * t))
    return out[()] if out.ndim == 0 else out


def ig_cdf(law: HittingLaw, t):
    mu, lam = _law_args(law)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonPositiveParameter("t must be > 0")
    r = np.sqrt(lam / t)
    out = special.ndtr(r * (t / mu - 1)) + np.exp(2 * lam / mu + special.log_ndtr(-r * (t / mu + 1)))
    out = np.minimum(out, 1.0)
    return out[()] if out.ndim == 0 else out


def ig_transform(mu, lam, z, u):
    """Michael-Schucany-Haas map from a normal ``z`` and uniform ``u`` to an IG draw."""
    y = z * z
    r = mu * y / (2.0 * lam)
    # smaller root mu * (1 + r - sqrt(r^2 + 2r)), written without cancellation
    x = mu / (1.0 + r + np.sqrt(r * r + 2.0 * r))
    return np.where(u * (mu + x) <= mu, x, mu * mu / x)


def ig_sample(law: HittingLaw, rng: np.random.Generator, size=None):
    mu, lam = _law_args(law)
    z = rng.standard_normal(size)
    u = rng.random(size)
    out = ig_transform(mu, lam, z, u)
    return out[()] if np.ndim(out) == 0 else out


# -- barrier transition ----------------------------------------------------


def _check_barrier(m):
    if not m > 0:
        raise NonPositiveParameter(f"barrier must be > 0, got {m}")


def _reflected(p: DriftedBM1D, m, t):
    # exp(2 mu m / s^2) * Phi((-m - mu t) / (s sqrt t)) in log space
    rt = p.s * np.sqrt(t)
    return np.exp(2.0 * p.mu * m / p.s**2 + special.log_ndtr((-m - p.mu * t) / rt))


def survival_before_barrier(p: DriftedBM1D, m: float, t):
    """P(tau_m > t)."""
    _check_barrier(m)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise NonPositiveParameter("t must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = special.ndtr((m - p.mu * t) / (p.s * np.sqrt(t))) - _reflected(p, m, t)
    val = np.where(t == 0, 1.0, np.clip(val, 0.0, 1.0))
    return val[()] if val.ndim == 0 else val


def hit_probability(p: DriftedBM1D, m: float, t):
    """P(tau_m <= t), computed directly so small values keep full precision."""
    _check_barrier(m)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = special.ndtr((p.mu * t - m) / (p.s * np.sqrt(t))) + _reflected(p, m, t)
    val = np.where(t == 0, 0.0, np.clip(val, 0.0, 1.0))
    return val[()] if val.ndim == 0 else val


def absorbed_density(p: DriftedBM1D, m: float, t: float, x):
    """Density of W(t) on the event that the barrier ``m`` was not reached."""
    _check_barrier(m)
    if not t > 0:
        raise NonPositiveParameter(f"T must be > 0, got {t}")
    x = np.asarray(x, dtype=float)
    v = p.s**2 * t
    free = np.exp(-((x - p.mu * t) ** 2) / (2.0 * v)) / math.sqrt(2.0 * math.pi * v)
    with np.errstate(over="ignore"):
        kill = -np.expm1(-2.0 * m * (m - x) / v)
    out = np.where(x < m, free * kill, 0.0)
    out = np.where((out < 0) & (out >= -1e-14), 0.0, out)
    return out[()] if out.ndim == 0 else out


# -- quadrature ------------------------------------------------------------


def _quad(f, a, b, what, epsabs=EPSABS, epsrel=EPSREL, points=None):
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        # the error estimate is checked below; scipy's warning adds nothing
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=400, points=points)
    if not math.isfinite(val) or err > 10.0 * max(epsabs, epsrel * abs(val)):
        raise QuadratureFailure(f"{what}: estimate {val} with error {err}")
    return val


def _spatial_limits(p: DriftedBM1D, m: float, t: float):
    half = SPATIAL_WIDTH * p.s * math.sqrt(t)
    return p.mu * t - half, min(m, p.mu * t + half)


def _passage_points(p: DriftedBM1D, m: float, t: float):
    """Break points where the passage-time law has its mass, inside (0, t)."""
    mean = m / p.mu
    sd = math.sqrt(p.s**2 * m / p.mu**3)
    pts = sorted({x for x in (mean, mean + 5.0 * sd, mean + 20.0 * sd) if 0.0 < x < t})
    return pts or None


def irhp_stopped_moments(p: DriftedBM1D, m: float, t: float) -> StoppedMoments:
    """Moments of tau = tau_m ^ t and of W(tau)."""
    _check_barrier(m)
    if not t > 0:
        raise NonPositiveParameter(f"T must be > 0, got {t}")

    pts = _passage_points(p, m, t)
    p_hit = float(hit_probability(p, m, t))
    if p_hit < 0.5:
        # integrate the passage CDF: small and free of cancellation for short caps
        def cdf(u):
            return float(hit_probability(p, m, u))

        short = _quad(cdf, 0.0, t, "E[(T - tau)+]", points=pts)
        short2 = _quad(lambda u: 2.0 * (t - u) * cdf(u), 0.0, t, "E[(T - tau)+^2]", points=pts)
        e_tau = t - short
        e_tau2 = t * t - 2.0 * t * short + short2
        var_tau = short2 - short * short
    else:
        def surv(u):
            return float(survival_before_barrier(p, m, u))

        e_tau = _quad(surv, 0.0, t, "E[tau ^ T]", points=pts)
        e_tau2 = _quad(lambda u: 2.0 * u * surv(u), 0.0, t, "E[(tau ^ T)^2]", points=pts)
        var_tau = e_tau2 - e_tau * e_tau

    lo, hi = _spatial_limits(p, m, t)
    c = p.mu * t  # centre moments here to avoid cancellation

    def dens(x):
        return float(absorbed_density(p, m, t, x))

    mass = 1.0 - p_hit
    m1 = _quad(lambda x: (x - c) * dens(x), lo, hi, "E[W - muT; no hit]")
    m2 = _quad(lambda x: (x - c) ** 2 * dens(x), lo, hi, "E[(W - muT)^2; no hit]")
    centred1 = (m - c) * p_hit + m1
    centred2 = (m - c) ** 2 * p_hit + m2
    e_w = c + centred1
    e_w2 = c * c + 2.0 * c * centred1 + centred2
    var_w = centred2 - centred1**2
    # E[tau; hit] = E[tau ^ T] - T P(no hit)
    e_tau_w = m * (e_tau - t * mass) + t * (c * mass + m1)
    return StoppedMoments(e_tau, e_tau2, e_w, e_w2, p_hit, e_tau_w, var_w, var_tau)


def irhp_expected_tau(p: DriftedBM1D, m: float, t: float) -> float:
    """E[tau_m ^ t] as the integral of the survival function, to ~1e-12 relative.

    Tighter than the general tolerance because frequency matching needs
    residuals well below 1e-9.
    """
    _check_barrier(m)
    if not t > 0:
        raise NonPositiveParameter(f"T must be > 0, got {t}")
    return _quad(lambda u: float(survival_before_barrier(p, m, u)), 0.0, t, "E[tau ^ T]",
                 epsabs=1e-15 * t, epsrel=1e-12, points=_passage_points(p, m, t))


def match_frequency(p: DriftedBM1D, t_target: float, t_cap: float) -> float:
    """Barrier M with E[tau_M ^ t_cap] = t_target, by bisection."""
    if not t_target > 0:
        raise NonPositiveParameter(f"target frequency must be > 0, got {t_target}")
    if t_target >= t_cap:
        raise Infeasible(f"target {t_target} is not below the cap {t_cap}")

    def resid(m):
        return irhp_expected_tau(p, m, t_cap) - t_target

    lo, hi = 1e-8, p.mu * t_cap * 1e3
    while resid(lo) > 0:
        lo *= 1e-3
        if lo < 1e-300:
            raise Infeasible("cannot bracket the matching barrier from below")
    while resid(hi) < 0:
        hi *= 10.0
        if not math.isfinite(hi):
            raise Infeasible("cannot bracket the matching barrier from above")
    root = optimize.bisect(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=400)
    if abs(resid(root)) > 1e-9 * t_target:
        raise QuadratureFailure(f"matched barrier {root} misses the target by {resid(root)}")
    return float(root)


def key_inequality_sides(p: DriftedBM1D, q: float, t: float):
    """Both sides of the stopped variance identity at ``tau_q ^ t``.

    lhs = (s^2/mu) E[W] - Var[W];  rhs = mu^2 (Var[tau] + 2 E[(tau_q - t)+] E[(t - tau_q)+]).
    """
    sm = irhp_stopped_moments(p, q, t)
    lhs = p.s**2 / p.mu * sm.e_w - sm.var_w
    law = p.hitting_law(q)
    early = _quad(lambda u: float(ig_cdf(law, u)) if u > 0 else 0.0, 0.0, t, "int ig_cdf")
    late = law.mean - t + early
    rhs = p.mu**2 * (sm.var_tau + 2.0 * late * early)
    return lhs, rhs


def key_inequality_scale(p: DriftedBM1D, q: float, t: float) -> float:
    """Magnitude of the terms cancelling in ``key_inequality_sides``."""
    return p.s**2 * min(t, q / p.mu) + 1e-300


def key_inequality_mc(p: DriftedBM1D, q: float, t: float, n_paths: int, seed: int):
    """Monte Carlo estimates and standard errors of both sides.

    W(tau_q ^ t) comes from an exact draw of W(t) plus the bridge crossing
    probability; tau_q comes from the inverse-Gaussian sampler.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    v = p.s**2 * t
    w_t = p.mu * t + math.sqrt(v) * rng.standard_normal(n_paths)
    u = rng.random(n_paths)
    with np.errstate(over="ignore"):
        cross = np.exp(-2.0 * q * np.maximum(q - w_t, 0.0) / v)
    hit = (w_t >= q) | (u < cross)
    w = np.where(hit, q, w_t)
    m = w.mean()
    var = w.var()
    lhs = p.s**2 / p.mu * m - var
    infl = p.s**2 / p.mu * (w - m) - ((w - m) ** 2 - var)
    lhs_se = infl.std() / math.sqrt(n_paths)

    tau = ig_sample(p.hitting_law(q), rng, n_paths)
    x = np.minimum(tau, t)
    late = np.maximum(tau - t, 0.0)
    early = np.maximum(t - tau, 0.0)
    a, b, mx, vx = late.mean(), early.mean(), x.mean(), x.var()
    rhs = p.mu**2 * (vx + 2.0 * a * b)
    infl = p.mu**2 * (((x - mx) ** 2 - vx) + 2.0 * (b * (late - a) + a * (early - b)))
    rhs_se = infl.std() / math.sqrt(n_paths)
    return (lhs, lhs_se), (rhs, rhs_se)


# -- IRHP report -----------------------------------------------------------


def irhp_report(params: SystemParams, m: float, t: float) -> PolicyReport:
    """AC, AWDR and per-item waiting of IRHP(m, t) from quadrature moments."""
    p = DriftedBM1D.from_params(params)
    sm = irhp_stopped_moments(p, m, t)
    mu, v = params.w_drift, params.w2_var
    total = sm.e_w2 / (2.0 * mu) - v * sm.e_w / (2.0 * mu * mu)
    # sigma_i E[tau B_i(tau)]: only the component of B_i along the weighted
    # motion correlates with the (weighted-path measurable) cycle length
    drift_free = sm.e_tau_w - mu * sm.e_tau2
    waiting = 0.5 * params.d * sm.e_tau2 + params.omega * params.sigma**2 / v * drift_free
    ac, awdr = renewal_ratio(params, sm.e_tau, total)
    return PolicyReport(ac, awdr, sm.e_tau, waiting, "quadrature")


def irhp_cross_moments(params: SystemParams, m: float, t: float) -> np.ndarray:
    """E[tau B_i(tau)] per item under IRHP(m, t)."""
    p = DriftedBM1D.from_params(params)
    sm = irhp_stopped_moments(p, m, t)
    mu, v = params.w_drift, params.w2_var
    return params.omega * params.sigma / v * (sm.e_tau_w - mu * sm.e_tau2)
