"""Closed-form moments, average cost (AC) and average weighted delay rate
(AWDR) for quantity (QP), time (TP), (T_Q + T) and instantaneous-rate (IRP)
clearing policies, plus their optimal parameters.

Item indices are 0-based throughout.  Every AC here is assembled through the
renewal-reward ratio from cycle moments, so identities such as
``ac_qtp(q, 0) == ac_qp(q)`` hold bit-for-bit rather than approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    DegenerateDiscriminant,
    DomainError,
    InconsistentMoments,
    NonPositiveParameter,
    QExceedsQbar,
)
from .model import IRHP, IRP, QP, QTP, TP, Policy, Sign, SystemParams, discriminant


def _pos(name, value):
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise NonPositiveParameter(f"{name} must be > 0, got {value}")
    return value


def _item(params: SystemParams, i: int) -> int:
    if not 0 <= i < params.n:
        raise IndexError(f"item index {i} out of range for n={params.n}")
    return int(i)


@dataclass(frozen=True)
class HittingLaw:
    """First two moments of a first-passage time and its inverse-Gaussian form."""

    mean: float
    second_moment: float
    ig_mu: float
    ig_lambda: float

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    @classmethod
    def from_level(cls, level: float, drift: float, var_rate: float) -> "HittingLaw":
        """Passage of ``drift*t + sqrt(var_rate)*B(t)`` to ``level``."""
        mean = level / drift
        second = mean**2 + var_rate * level / drift**3
        return cls(mean, second, mean, level**2 / var_rate)


@dataclass(frozen=True)
class PolicyReport:
    ac: float
    awdr: float
    cycle_mean: float
    per_item_waiting: Optional[np.ndarray]
    provenance: str  # analytic | quadrature | monte-carlo

    def shipping_rate(self, params: SystemParams) -> float:
        return (params.a_d + params.c_drift * self.cycle_mean) / self.cycle_mean


def renewal_ratio(params: SystemParams, cycle_mean: float, weighted_waiting: float):
    """(AC, AWDR) from E[tau] and E[sum_i omega_i int_0^tau N_i]."""
    awdr = weighted_waiting / cycle_mean
    ac = (params.a_d + params.c_drift * cycle_mean + weighted_waiting) / cycle_mean
    return ac, awdr


# -- quantity policy -------------------------------------------------------


def qp_hitting_law(params: SystemParams, q: float) -> HittingLaw:
    q = _pos("Q", q)
    return HittingLaw.from_level(q, params.total_drift, params.total_var)


def qp_laplace(params: SystemParams, q: float, s: float) -> float:
    """E[exp(-s T_Q)] for s >= 0."""
    q = _pos("Q", q)
    if not s >= 0:
        raise NonPositiveParameter(f"transform argument must be >= 0, got {s}")
    big_d, s2 = params.total_drift, params.total_var
    # sqrt(D^2 + 2 s sigma^2) - D without cancellation
    root_gap = 2.0 * s * s2 / (math.sqrt(big_d**2 + 2.0 * s * s2) + big_d)
    return math.exp(-root_gap * q / s2)


def _joint_mgf(scale, drift, var_rate, level, s1, s2):
    arg = s1 * s1 + 2.0 * s2
    if arg > 0:
        raise DomainError(f"joint MGF needs s1^2 + 2 s2 <= 0, got {arg}")
    shift = s1 * scale + drift
    return math.exp((shift - math.sqrt(shift * shift - arg * var_rate)) * level / var_rate)


def qp_joint_mgf(params: SystemParams, q: float, i: int, s1: float, s2: float) -> float:
    """E[exp(s1 B_i(T_Q) + s2 T_Q)] on s1^2 + 2 s2 <= 0 (boundary as a limit)."""
    q = _pos("Q", q)
    i = _item(params, i)
    return _joint_mgf(params.sigma[i], params.total_drift, params.total_var, q, s1, s2)


def qp_cross_moment(params: SystemParams, q: float, i: int) -> float:
    """E[B_i(T_Q) T_Q]."""
    q = _pos("Q", q)
    i = _item(params, i)
    return -params.sigma[i] * q / params.total_drift**2


def qp_item_waiting(params: SystemParams, q: float, i: int) -> float:
    """E[int_0^{T_Q} N_i(t) dt]."""
    q = _pos("Q", q)
    i = _item(params, i)
    big_d, s2 = params.total_drift, params.total_var
    di, si2 = params.d[i], params.sigma[i] ** 2
    return di * q**2 / (2 * big_d**2) + di * s2 * q / (2 * big_d**3) - si2 * q / big_d**2


def qp_waiting(params: SystemParams, q: float) -> np.ndarray:
    return np.array([qp_item_waiting(params, q, i) for i in range(params.n)])


def ac_qp(params: SystemParams, q: float) -> float:
    law = qp_hitting_law(params, q)
    return renewal_ratio(params, law.mean, float(params.omega @ qp_waiting(params, q)))[0]


# -- time policy -----------------------------------------------------------


def tp_waiting(params: SystemParams, t: float) -> np.ndarray:
    t = _pos("T", t)
    return 0.5 * params.d * t**2


def ac_tp(params: SystemParams, t: float) -> float:
    return renewal_ratio(params, _pos("T", t), float(params.omega @ tp_waiting(params, t)))[0]


# -- (T_Q + T) policy ------------------------------------------------------


def qtp_cycle_moments(params: SystemParams, q: float, t: float):
    """(E[tau], E[tau^2]) for tau = T_Q + t."""
    law = qp_hitting_law(params, q)
    return law.mean + t, law.second_moment + 2.0 * t * law.mean + t * t


def qtp_item_waiting(params: SystemParams, q: float, t: float, i: int) -> float:
    i = _item(params, i)
    di = params.d[i]
    return qp_item_waiting(params, q, i) + di * q * t / params.total_drift + 0.5 * di * t * t


def qtp_waiting(params: SystemParams, q: float, t: float) -> np.ndarray:
    return np.array([qtp_item_waiting(params, q, t, i) for i in range(params.n)])


def ac_qtp(params: SystemParams, q: float, t: float) -> float:
    QTP(q, t)  # parameter checks (ZeroCycle, positivity)
    mean, _ = qtp_cycle_moments(params, q, t)
    return renewal_ratio(params, mean, float(params.omega @ qtp_waiting(params, q, t)))[0]


def ac_qtp_grid(params: SystemParams, q, t) -> np.ndarray:
    """Vectorised AC over arrays of (Q, T); Q = 0 gives the time policy, T = 0 the
    quantity policy.  Points with Q = T = 0 come back as +inf."""
    q, t = np.broadcast_arrays(np.asarray(q, dtype=float), np.asarray(t, dtype=float))
    big_d, mu = params.total_drift, params.w_drift
    mean = q / big_d + t
    credit = float(np.sum(params.omega * params.sigma**2)) / big_d**2
    waiting = (
        mu * q * q / (2 * big_d**2)
        + mu * params.total_var * q / (2 * big_d**3)
        - credit * q
        + mu * q * t / big_d
        + 0.5 * mu * t * t
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (params.a_d + params.c_drift * mean + waiting) / mean
    return np.where(mean > 0, out, np.inf)


def _qbar_linear(params: SystemParams) -> float:
    # sum_i omega_i (2 sigma_i^2 - D_i sigma^2 / D)
    big_d, s2 = params.total_drift, params.total_var
    return float(np.sum(params.omega * (2.0 * params.sigma**2 - params.d * s2 / big_d)))


def q_bar(params: SystemParams) -> float:
    """Largest Q whose quantity policy a (T_Q + T) policy can still improve."""
    a = params.w_drift
    b = _qbar_linear(params)
    c = 2.0 * params.a_d * params.total_drift**2
    disc = math.sqrt(b * b + 4.0 * a * c)
    if b >= 0:
        return 2.0 * c / (b + disc)
    return (disc - b) / (2.0 * a)


def qbar_quadratic(params: SystemParams, q: float) -> float:
    a, b = params.w_drift, _qbar_linear(params)
    return a * q * q + b * q - 2.0 * params.a_d * params.total_drift**2


def t_opt_of_q(params: SystemParams, q: float) -> float:
    """Best extension T for a fixed Q in (0, Q-bar]."""
    q = _pos("Q", q)
    qb = q_bar(params)
    if q > qb * (1.0 + 1e-12):
        raise QExceedsQbar(f"Q={q} exceeds Q-bar={qb}")
    big_d = params.total_drift
    inner = (2.0 * params.a_d - _qbar_linear(params) * q / big_d**2) / params.w_drift
    return max(0.0, math.sqrt(max(inner, 0.0)) - q / big_d)


def ac_qtp_at_topt(params: SystemParams, q: float) -> float:
    """AC of the (Q, T_opt(Q)) policy in its reduced closed form."""
    big_d = params.total_drift
    inner = 2.0 * params.a_d - _qbar_linear(params) * q / big_d**2
    return math.sqrt(inner * params.w_drift) + params.c_drift


# -- instantaneous rate policy ---------------------------------------------


def irp_hitting_law(params: SystemParams, m: float) -> HittingLaw:
    m = _pos("M", m)
    return HittingLaw.from_level(m, params.w_drift, params.w2_var)


def irp_laplace(params: SystemParams, m: float, s: float) -> float:
    m = _pos("M", m)
    if not s >= 0:
        raise NonPositiveParameter(f"transform argument must be >= 0, got {s}")
    mu, v = params.w_drift, params.w2_var
    root_gap = 2.0 * s * v / (math.sqrt(mu * mu + 2.0 * s * v) + mu)
    return math.exp(-root_gap * m / v)


def irp_joint_mgf(params: SystemParams, m: float, i: int, s1: float, s2: float) -> float:
    """E[exp(s1 B_i(tau_M) + s2 tau_M)] on s1^2 + 2 s2 <= 0."""
    m = _pos("M", m)
    i = _item(params, i)
    scale = params.omega[i] * params.sigma[i]
    return _joint_mgf(scale, params.w_drift, params.w2_var, m, s1, s2)


def irp_cross_moment(params: SystemParams, m: float, i: int) -> float:
    m = _pos("M", m)
    i = _item(params, i)
    return -params.omega[i] * params.sigma[i] * m / params.w_drift**2


def irp_item_waiting(params: SystemParams, m: float, i: int) -> float:
    m = _pos("M", m)
    i = _item(params, i)
    mu, v = params.w_drift, params.w2_var
    di = params.d[i]
    return (
        0.5 * di * m**2 / mu**2
        + 0.5 * di * v * m / mu**3
        - params.omega[i] * params.sigma[i] ** 2 * m / mu**2
    )


def irp_waiting(params: SystemParams, m: float) -> np.ndarray:
    return np.array([irp_item_waiting(params, m, i) for i in range(params.n)])


def irp_total_weighted_waiting(params: SystemParams, m: float) -> float:
    m = _pos("M", m)
    mu, v = params.w_drift, params.w2_var
    return m * m / (2.0 * mu) - v * m / (2.0 * mu * mu)


def ac_irp(params: SystemParams, m: float) -> float:
    law = irp_hitting_law(params, m)
    return renewal_ratio(params, law.mean, irp_total_weighted_waiting(params, m))[0]


# -- optima ----------------------------------------------------------------


def _sqrt_term(params: SystemParams) -> float:
    return math.sqrt(2.0 * params.a_d * params.w_drift)


def qp_penalty(params: SystemParams) -> float:
    """sum_i omega_i (sigma_i^2 / D - D_i sigma^2 / (2 D^2)): the QP variance credit."""
    big_d = params.total_drift
    return float(
        np.sum(params.omega * (params.sigma**2 / big_d - params.d * params.total_var / (2 * big_d**2)))
    )


def optimal_qp(params: SystemParams):
    """(Q*, AC^QP(Q*))."""
    q_star = math.sqrt(2.0 * params.a_d / params.w_drift) * params.total_drift
    return q_star, _sqrt_term(params) + params.c_drift - qp_penalty(params)


def optimal_tp(params: SystemParams):
    """(T*, AC^TP(T*))."""
    return math.sqrt(2.0 * params.a_d / params.w_drift), _sqrt_term(params) + params.c_drift


def optimal_irp(params: SystemParams):
    """(M*, AC^IRP(M*))."""
    credit = params.w2_var / (2.0 * params.w_drift)
    return _sqrt_term(params), _sqrt_term(params) + params.c_drift - credit


@dataclass(frozen=True)
class QTPOptimum:
    q: float
    t: float
    ac: float
    which: str  # "QP" or "TP"

    @property
    def policy(self):
        return QP(self.q) if self.which == "QP" else TP(self.t)


def optimal_qtp(params: SystemParams) -> QTPOptimum:
    """Jointly optimal (T_Q + T) policy: the optimal QP or the optimal TP."""
    disc = discriminant(params)
    if disc.sign == Sign.ZERO:
        raise DegenerateDiscriminant(f"discriminant {disc.value} is numerically zero")
    if disc.sign == Sign.POSITIVE:
        q, ac = optimal_qp(params)
        return QTPOptimum(q, 0.0, ac, "QP")
    t, ac = optimal_tp(params)
    return QTPOptimum(0.0, t, ac, "TP")


def qp_irp_gap(params: SystemParams) -> float:
    """AC^QP(Q*) - AC^IRP(M*) written as a nonnegative sum of squares."""
    big_d, mu = params.total_drift, params.w_drift
    num = float(np.sum(params.sigma**2 * (params.omega * big_d - mu) ** 2))
    return num / (2.0 * big_d**2 * mu)


# -- AWDR ------------------------------------------------------------------


def awdr_irp(params: SystemParams, m: float) -> float:
    m = _pos("M", m)
    return 0.5 * (m - params.w2_var / params.w_drift)


def awdr_tp(params: SystemParams, t: float) -> float:
    return 0.5 * params.w_drift * _pos("T", t)


def awdr_generic(params: SystemParams, load_mean: float, load_second_moment: float, cycle_mean: float) -> float:
    """AWDR from the first two moments of the weighted load at clearing."""
    cycle_mean = _pos("cycle_mean", cycle_mean)
    slack = 1e-12 * max(1.0, load_mean**2)
    if load_second_moment < load_mean**2 - slack:
        raise InconsistentMoments(
            f"E[L^2]={load_second_moment} is below E[L]^2={load_mean**2}"
        )
    mu, v = params.w_drift, params.w2_var
    waiting = load_second_moment / (2.0 * mu) - v * load_mean / (2.0 * mu * mu)
    return waiting / cycle_mean


def load_moments(params: SystemParams, tau_mean: float, tau_second: float, cross: np.ndarray):
    """(E[L], E[L^2]) for L = sum_i omega_i N_i(tau), given E[tau B_i(tau)] per item."""
    mu = params.w_drift
    ws = params.omega * params.sigma
    first = mu * tau_mean
    second = mu * mu * tau_second + 2.0 * mu * float(ws @ cross) + params.w2_var * tau_mean
    return first, second


def poisson_qp_item_waiting(lambdas, q: int, i: int) -> float:
    """Per-item waiting under QP when the inputs are independent Poisson streams."""
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam <= 0):
        raise NonPositiveParameter("Poisson rates must be > 0")
    if int(q) != q or q < 1:
        raise NonPositiveParameter(f"Q must be an integer >= 1, got {q}")
    total = float(lam.sum())
    return float(lam[i] * (q - 1) * q / (2.0 * total**2))


# -- reports ---------------------------------------------------------------


def evaluate(params: SystemParams, policy: Policy) -> PolicyReport:
    """Closed-form report for QP/TP/QTP/IRP; IRHP goes through quadrature."""
    if isinstance(policy, QP):
        mean = qp_hitting_law(params, policy.q).mean
        waiting = qp_waiting(params, policy.q)
    elif isinstance(policy, TP):
        mean = policy.t
        waiting = tp_waiting(params, policy.t)
    elif isinstance(policy, QTP):
        mean, _ = qtp_cycle_moments(params, policy.q, policy.t)
        waiting = qtp_waiting(params, policy.q, policy.t)
    elif isinstance(policy, IRP):
        mean = irp_hitting_law(params, policy.m).mean
        waiting = irp_waiting(params, policy.m)
        ac, awdr = renewal_ratio(params, mean, irp_total_weighted_waiting(params, policy.m))
        return PolicyReport(ac, awdr, mean, waiting, "analytic")
    elif isinstance(policy, IRHP):
        from .fpt import irhp_report

        return irhp_report(params, policy.m, policy.t)
    else:
        raise TypeError(f"no closed form for {policy!r}")
    ac, awdr = renewal_ratio(params, mean, float(params.omega @ waiting))
    return PolicyReport(ac, awdr, mean, waiting, "analytic")


def closed_form_moments(params: SystemParams, policy: Policy) -> Optional[dict]:
    """E[tau], E[tau^2], E[tau B_i(tau)] and per-item waiting where known exactly."""
    if isinstance(policy, QP):
        law = qp_hitting_law(params, policy.q)
        cross = np.array([qp_cross_moment(params, policy.q, i) for i in range(params.n)])
        mean, second = law.mean, law.second_moment
    elif isinstance(policy, TP):
        mean, second = policy.t, policy.t**2
        cross = np.zeros(params.n)
    elif isinstance(policy, QTP):
        mean, second = qtp_cycle_moments(params, policy.q, policy.t)
        cross = np.array([qp_cross_moment(params, policy.q, i) for i in range(params.n)])
    elif isinstance(policy, IRP):
        law = irp_hitting_law(params, policy.m)
        cross = np.array([irp_cross_moment(params, policy.m, i) for i in range(params.n)])
        mean, second = law.mean, law.second_moment
    else:
        return None
    load1, load2 = load_moments(params, mean, second, cross)
    return {
        "tau": mean,
        "tau2": second,
        "tau_b": cross,
        "int_n": evaluate(params, policy).per_item_waiting,
        "load": load1,
        "load2": load2,
    }
