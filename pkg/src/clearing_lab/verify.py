"""Executable comparative checks.

Each ``check_*`` returns a :class:`TheoremCheck` whose witnesses carry the
full inputs, so any failure can be replayed.  Closed forms are preferred;
Monte Carlo enters only where no closed form exists (user-defined rules),
and then a claim "a <= b" passes unless the estimate of ``a - b`` is more
than three standard errors below zero.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import analytic as an
from .errors import DegenerateDiscriminant
from .fpt import (
    DriftedBM1D,
    irhp_report,
    key_inequality_mc,
    key_inequality_scale,
    key_inequality_sides,
    match_frequency,
)
from .model import IRHP, QP, QTP, TP, Custom, Sign, SystemParams, discriminant
from .simulate import SimConfig, simulate_cycles

REL_TOL = 1e-10
MC_SIGMAS = 3.0


@dataclass
class TheoremCheck:
    name: str
    status: bool = True
    witnesses: list = field(default_factory=list)
    runtime_ms: float = 0.0

    def add(self, ok: bool, **info) -> bool:
        ok = bool(ok)
        info["pass"] = ok
        self.witnesses.append(_plain(info))
        self.status = self.status and ok
        return ok

    @property
    def failures(self) -> list:
        return [w for w in self.witnesses if not w["pass"]]

    def to_dict(self) -> dict:
        return {
            "check": self.name,
            "status": "pass" if self.status else "fail",
            "witnesses": self.witnesses,
            "runtime_ms": self.runtime_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, SystemParams):
        return x.to_dict()
    return x


class _timed:
    def __init__(self, check: TheoremCheck):
        self.check = check

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self.check

    def __exit__(self, *exc):
        self.check.runtime_ms = 1e3 * (time.perf_counter() - self.t0)
        return False


def _close(a: float, b: float, scale: float, rel: float = REL_TOL) -> bool:
    return abs(a - b) <= rel * max(1.0, abs(scale))


# -- randomised parameters -------------------------------------------------


def random_params(rng: np.random.Generator, n: int | None = None) -> SystemParams:
    """One draw from the sweep ranges used across the suite."""
    if n is None:
        n = int(rng.choice([1, 2, 3, 5]))
    return SystemParams(
        d=rng.uniform(0.1, 10.0, n),
        sigma=rng.uniform(0.1, 10.0, n),
        omega=rng.uniform(0.1, 10.0, n),
        a_d=rng.uniform(0.5, 20.0),
        c=rng.uniform(0.0, 5.0, n),
    )


def random_params_signed(rng: np.random.Generator, min_abs: float = 1e-6, n: int | None = None) -> SystemParams:
    """Like :func:`random_params` but rejects draws with a near-zero discriminant."""
    while True:
        p = random_params(rng, n)
        if abs(discriminant(p).value) > min_abs:
            return p


# -- optimal-policy comparisons --------------------------------------------


def _require_sign(params: SystemParams):
    disc = discriminant(params)
    if disc.sign == Sign.ZERO:
        raise DegenerateDiscriminant(f"discriminant {disc.value} is numerically zero")
    return disc


def check_theorem_1(params: SystemParams) -> TheoremCheck:
    """The sign of the discriminant decides between the optimal QP and TP."""
    chk = TheoremCheck("theorem_1")
    with _timed(chk):
        disc = _require_sign(params)
        _, qp = an.optimal_qp(params)
        _, tp = an.optimal_tp(params)
        diff = tp - qp
        chk.add(np.sign(diff) == int(disc.sign), params=params, discriminant=disc.value,
                ac_tp=tp, ac_qp=qp, margin=diff)
    return chk


def check_theorem_9(params: SystemParams, grid: int = 200, q_bar_probes=(0.5, 0.9, 0.98)) -> TheoremCheck:
    """Joint (Q, T) optimum is the optimal QP or TP; Q-bar bounds improvability."""
    chk = TheoremCheck("theorem_9")
    with _timed(chk):
        disc = _require_sign(params)
        best = an.optimal_qtp(params)
        q_star, _ = an.optimal_qp(params)
        t_star, _ = an.optimal_tp(params)
        qs = np.linspace(0.0, 4.0 * q_star, grid)
        ts = np.linspace(0.0, 4.0 * t_star, grid)
        surface = an.ac_qtp_grid(params, qs[:, None], ts[None, :])
        k = np.unravel_index(np.argmin(surface), surface.shape)
        floor = float(surface[k])
        chk.add(best.ac <= floor + REL_TOL * max(1.0, abs(floor)), params=params,
                optimum=[best.q, best.t, best.ac], grid_min=[qs[k[0]], ts[k[1]], floor],
                margin=floor - best.ac)
        chk.add(best.which == ("QP" if disc.sign == Sign.POSITIVE else "TP"),
                discriminant=disc.value, which=best.which)

        q_bar = an.q_bar(params)
        t_probe = np.concatenate([np.geomspace(1e-7 * t_star, t_star, 1500), np.linspace(t_star, 4 * t_star, 500)])
        for f in q_bar_probes:
            for q, below in ((q_bar * f, True), (q_bar / f, False)):
                gain = an.ac_qp(params, q) - float(np.min(an.ac_qtp_grid(params, q, t_probe)))
                improves = gain > 1e-13 * max(1.0, an.ac_qp(params, q))
                chk.add(improves == below, q=q, q_bar=q_bar, below_q_bar=below, best_gain=gain)
    return chk


def check_theorem_13(params: SystemParams, grid: int = 100) -> TheoremCheck:
    """The optimal IRP beats the optimal QP, TP and every (Q, T) grid point."""
    chk = TheoremCheck("theorem_13")
    with _timed(chk):
        _, irp = an.optimal_irp(params)
        _, qp = an.optimal_qp(params)
        _, tp = an.optimal_tp(params)
        gap = an.qp_irp_gap(params)
        slack = REL_TOL * max(1.0, abs(qp))
        chk.add(irp <= qp + slack, params=params, ac_irp=irp, ac_qp=qp, margin=qp - irp)
        chk.add(irp < tp, ac_irp=irp, ac_tp=tp, margin=tp - irp)
        chk.add(_close(qp - irp, gap, max(abs(qp), abs(irp))), difference=qp - irp, gap=gap)
        q_star, _ = an.optimal_qp(params)
        t_star, _ = an.optimal_tp(params)
        qs = np.linspace(0.0, 4.0 * q_star, grid)
        ts = np.linspace(0.0, 4.0 * t_star, grid)
        floor = float(np.min(an.ac_qtp_grid(params, qs[:, None], ts[None, :])))
        chk.add(irp <= floor + slack, qtp_grid_min=floor, margin=floor - irp)
    return chk


# -- matched-frequency comparisons -----------------------------------------


def threshold_rule(beta, level, cap) -> Custom:
    """Stop once sum_i beta_i N_i reaches ``level`` or the cycle age reaches ``cap``."""
    beta = np.asarray(beta, dtype=float)

    def rule(t, loads):
        return (loads @ beta >= level) | (t >= cap)

    return Custom(rule, time_cap=max(10.0 * cap, 1.0), vectorized=True,
                  label=f"threshold(beta={beta.round(3).tolist()}, level={level:.4g}, cap={cap:.4g})")


def random_threshold_rules(params: SystemParams, frequency: float, rng: np.random.Generator, count: int):
    """Custom rules whose cycles last roughly ``frequency``: random positive
    weights, a threshold near the weighted drift over ``frequency`` and a cap."""
    rules = []
    for _ in range(count):
        beta = rng.uniform(0.1, 10.0, params.n)
        level = float(beta @ params.d) * frequency * rng.uniform(0.6, 1.2)
        cap = frequency * rng.uniform(1.2, 3.0)
        rules.append(threshold_rule(beta, level, cap))
    return rules


def matched_gap(params: SystemParams, samples, metric: str = "awdr"):
    """Estimate and standard error of (metric of the simulated policy) minus
    (metric of the IRP with the same mean cycle length)."""
    tau = samples.tau
    wait = samples.int_n @ params.omega
    mu, v = params.w_drift, params.w2_var
    mt = tau.mean()
    if metric == "awdr":
        y = wait
        fixed = 0.0
    else:
        y = params.a_d + samples.n_at_tau @ params.c + wait
        fixed = params.a_d
    my = y.mean()
    irp = 0.5 * (mu * mt - v / mu) + (fixed / mt + params.c_drift if metric == "ac" else 0.0)
    est = my / mt - irp
    grad_t = -my / mt**2 - 0.5 * mu + (fixed / mt**2 if metric == "ac" else 0.0)
    infl = (y - my) / mt + grad_t * (tau - mt)
    se = infl.std(ddof=1) / math.sqrt(len(tau))
    return float(est), float(se), float(mt)


def check_theorem_18(
    params: SystemParams,
    frequency: float,
    caps=(1.5, 2.0, 4.0),
    n_custom: int = 3,
    n_cycles: int = 20_000,
    seed: int = 0,
    dt: float | None = None,
) -> TheoremCheck:
    """At a fixed mean cycle length the IRP has the smallest AWDR."""
    chk = TheoremCheck("theorem_18")
    with _timed(chk):
        if not frequency > 0:
            raise ValueError("frequency must be > 0")
        mu = params.w_drift
        base = an.awdr_irp(params, frequency * mu)
        chk.add(True, params=params, frequency=frequency, awdr_irp=base)
        slack = REL_TOL * max(1.0, abs(base))

        contenders = {
            "TP": an.awdr_tp(params, frequency),
            "QP": _awdr_from_load(params, QP(frequency * params.total_drift)),
            "QTP": an.evaluate(params, QTP(0.5 * frequency * params.total_drift, 0.5 * frequency)).awdr,
        }
        # the closed QP value must agree with the load-moment route
        qp_direct = an.evaluate(params, QP(frequency * params.total_drift)).awdr
        chk.add(_close(contenders["QP"], qp_direct, qp_direct, 1e-9), qp_load_route=contenders["QP"],
                qp_direct=qp_direct)
        p1d = DriftedBM1D.from_params(params)
        for f in caps:
            m_h = match_frequency(p1d, frequency, f * frequency)
            contenders[f"IRHP(cap={f}T)"] = irhp_report(params, m_h, f * frequency).awdr
        for name, val in contenders.items():
            chk.add(val >= base - slack, policy=name, awdr=val, margin=val - base)

        rng = np.random.Generator(np.random.Philox(seed))
        for k, rule in enumerate(random_threshold_rules(params, frequency, rng, n_custom)):
            cfg = SimConfig(n_cycles, dt=dt if dt is not None else 1e-2 * frequency, seed=seed + 1 + k)
            s = simulate_cycles(params, rule, cfg)
            est, se, mt = matched_gap(params, s, "awdr")
            chk.add(est >= -MC_SIGMAS * se, policy=rule.label, mean_tau=mt, gap=est, std_err=se,
                    seed=cfg.seed, n_cycles=n_cycles)
    return chk


def _awdr_from_load(params: SystemParams, policy) -> float:
    mom = an.closed_form_moments(params, policy)
    return an.awdr_generic(params, mom["load"], mom["load2"], mom["tau"])


def check_theorem_15(
    params: SystemParams,
    frequency: float | None = None,
    n_custom: int = 3,
    n_cycles: int = 20_000,
    seed: int = 0,
    dt: float | None = None,
) -> TheoremCheck:
    """No sampled renewal policy has lower AC than the IRP with its mean cycle length."""
    chk = TheoremCheck("theorem_15")
    with _timed(chk):
        if frequency is None:
            frequency = an.optimal_irp(params)[0] / params.w_drift
        mu = params.w_drift
        irp = an.ac_irp(params, frequency * mu)
        slack = REL_TOL * max(1.0, abs(irp))
        chk.add(True, params=params, frequency=frequency, ac_irp=irp)
        big_d = params.total_drift
        closed = {
            "QP": an.ac_qp(params, frequency * big_d),
            "TP": an.ac_tp(params, frequency),
            "QTP": an.ac_qtp(params, 0.5 * frequency * big_d, 0.5 * frequency),
        }
        p1d = DriftedBM1D.from_params(params)
        m_h = match_frequency(p1d, frequency, 2.0 * frequency)
        closed["IRHP(cap=2T)"] = irhp_report(params, m_h, 2.0 * frequency).ac
        for name, val in closed.items():
            chk.add(val >= irp - slack, policy=name, ac=val, margin=val - irp)

        rng = np.random.Generator(np.random.Philox(seed))
        for k, rule in enumerate(random_threshold_rules(params, frequency, rng, n_custom)):
            cfg = SimConfig(n_cycles, dt=dt if dt is not None else 1e-2 * frequency, seed=seed + 101 + k)
            s = simulate_cycles(params, rule, cfg)
            est, se, mt = matched_gap(params, s, "ac")
            chk.add(est >= -MC_SIGMAS * se, policy=rule.label, mean_tau=mt, gap=est, std_err=se,
                    seed=cfg.seed, n_cycles=n_cycles)
    return chk


def check_theorem_13_15(params: SystemParams, **kwargs) -> TheoremCheck:
    a = check_theorem_13(params)
    b = check_theorem_15(params, **kwargs)
    out = TheoremCheck("theorem_13_15", a.status and b.status, a.witnesses + b.witnesses,
                       a.runtime_ms + b.runtime_ms)
    return out


def irhp_tail_cap(params: SystemParams, t: float) -> float:
    """A cap far enough out that IRHP at mean cycle ``t`` is essentially IRP."""
    cv2 = params.w2_var / (t * params.w_drift**2)
    return t * (1.0 + 50.0 * max(1.0, cv2))


def check_theorem_19(params: SystemParams, t: float, caps=(1.5, 2.0, 4.0)) -> TheoremCheck:
    """A frequency-matched IRHP beats TP in AWDR and AC, approaching IRP as the cap grows."""
    chk = TheoremCheck("theorem_19")
    with _timed(chk):
        tp_awdr, tp_ac = an.awdr_tp(params, t), an.ac_tp(params, t)
        irp_awdr = an.awdr_irp(params, t * params.w_drift)
        p1d = DriftedBM1D.from_params(params)
        chk.add(True, params=params, t=t, awdr_tp=tp_awdr, ac_tp=tp_ac, awdr_irp=irp_awdr)
        gaps = []
        for f in tuple(caps) + (irhp_tail_cap(params, t) / t,):
            cap = f * t
            m_h = match_frequency(p1d, t, cap)
            rep = irhp_report(params, m_h, cap)
            gaps.append(rep.awdr - irp_awdr)
            if f in caps:
                chk.add(rep.awdr < tp_awdr and rep.ac < tp_ac, cap=cap, m_h=m_h, awdr=rep.awdr,
                        ac=rep.ac, margin_awdr=tp_awdr - rep.awdr, margin_ac=tp_ac - rep.ac)
        scale = max(1.0, abs(irp_awdr))
        monotone = all(b <= a + 1e-9 * scale for a, b in zip(gaps, gaps[1:]))
        chk.add(monotone and gaps[-1] <= max(1e-6 * scale, 1e-3 * gaps[0]) and gaps[-1] >= -1e-7 * scale,
                gaps_to_irp=gaps, far_cap=irhp_tail_cap(params, t))
    return chk


def key_inequality_grid():
    """5^4 points; barriers are scaled to the typical displacement so the
    capped passage is never degenerate."""
    out = []
    for mu in (0.5, 1.0, 2.0, 3.0, 5.0):
        for s in (0.5, 1.0, 2.0, math.sqrt(5.0), 3.0):
            for t in (0.25, 0.5, 1.0, 2.0, 4.0):
                for z in (0.2, 0.4, 0.6, 0.8, 1.0):
                    out.append((mu, s, z * (mu * t + s * math.sqrt(t)), t))
    return out


def check_key_inequality(grid=None, mc_points=(), n_paths: int = 1_000_000, seed: int = 0,
                         tol: float = 1e-6) -> TheoremCheck:
    """Stopped-variance identity (both sides equal) and strict positivity."""
    chk = TheoremCheck("key_inequality")
    with _timed(chk):
        grid = key_inequality_grid() if grid is None else grid
        for mu, s, q, t in grid:
            p = DriftedBM1D(mu, s)
            lhs, rhs = key_inequality_sides(p, q, t)
            scale = key_inequality_scale(p, q, t)
            chk.add(abs(lhs - rhs) <= tol * max(1.0, scale) and lhs > 0 and rhs > 0,
                    point=[mu, s, q, t], lhs=lhs, rhs=rhs, diff=lhs - rhs)
        for k, (mu, s, q, t) in enumerate(mc_points):
            p = DriftedBM1D(mu, s)
            lhs, rhs = key_inequality_sides(p, q, t)
            (ml, sl), (mr, sr) = key_inequality_mc(p, q, t, n_paths, seed + k)
            chk.add(abs(ml - lhs) <= MC_SIGMAS * sl and abs(mr - rhs) <= MC_SIGMAS * sr,
                    point=[mu, s, q, t], quad=[lhs, rhs], mc=[ml, mr], std_err=[sl, sr],
                    seed=seed + k, n_paths=n_paths)
    return chk


def run_all(params: SystemParams, frequency: float | None = None, seed: int = 0,
            n_cycles: int = 20_000, quick_grid: bool = True) -> list[TheoremCheck]:
    """The suite the command line runs for one parameter file."""
    if frequency is None:
        frequency = an.optimal_tp(params)[0]
    checks = []
    if discriminant(params).sign != Sign.ZERO:
        checks += [check_theorem_1(params), check_theorem_9(params)]
    checks.append(check_theorem_13_15(params, frequency=frequency, n_cycles=n_cycles, seed=seed))
    checks.append(check_theorem_18(params, frequency, n_cycles=n_cycles, seed=seed))
    checks.append(check_theorem_19(params, frequency))
    p1d = DriftedBM1D.from_params(params)
    grid = [(p1d.mu, p1d.s, z * p1d.mu * frequency, frequency) for z in (0.5, 1.0, 1.5)]
    checks.append(check_key_inequality(grid if quick_grid else None))
    return checks
