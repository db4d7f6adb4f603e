"""Renewal-reward Monte Carlo over i.i.d. clearing cycles.

Cycle ``k`` of a run with seed ``s`` is a pure function of ``(s, k)``, so
splitting the cycles across any number of worker threads gives the same
bytes.  Quantities with a known law are sampled exactly:

* TP: endpoint and time integral of every B_i from their joint Gaussian law.
* QP / IRP: the cycle length from the inverse-Gaussian law; given it, the
  threshold process is a time-reversed 3-d Bessel bridge whose area is the
  only gridded quantity.  The per-item parts orthogonal to the threshold
  process are independent of it and exact.
* QTP: a QP cycle followed by an exact TP extension.
* IRHP: a dyadic Levy construction of the weighted process with a bridge
  crossing correction; Custom: plain grid stepping with exact increments.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from ._jit import USE_NUMBA
from .analytic import PolicyReport, evaluate
from .errors import CycleCapExceeded, NonPositiveParameter
from .model import IRHP, IRP, QP, QTP, TP, Custom, Policy, SystemParams

if USE_NUMBA:
    from . import _kernels_nb as _kern
else:
    from . import _kernels_np as _kern

DEFAULT_SEED = 20_240_917
CHUNK = 2048  # cycles per work item; fixed so output never depends on workers
GRID_FRACTION = 1e-3  # default dt as a fraction of E[tau]
CUSTOM_DT = 1e-3
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimConfig:
    n_cycles: int = 100_000
    dt: Optional[float] = None  # None: GRID_FRACTION * E[tau] (CUSTOM_DT for Custom)
    seed: int = DEFAULT_SEED
    bridge_correction: bool = True
    workers: int = 1
    first_cycle: int = 0

    def __post_init__(self):
        if int(self.n_cycles) < 1:
            raise NonPositiveParameter(f"n_cycles must be >= 1, got {self.n_cycles}")
        if self.dt is not None and not self.dt > 0:
            raise NonPositiveParameter(f"dt must be > 0, got {self.dt}")
        if int(self.workers) < 1:
            raise NonPositiveParameter(f"workers must be >= 1, got {self.workers}")
        if not 0 <= int(self.seed) <= _U64:
            raise NonPositiveParameter("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class CycleStream:
    """Handle on the random streams of one cycle."""

    seed: int
    cycle: int


@dataclass(frozen=True)
class CycleSample:
    tau: float
    n_at_tau: np.ndarray
    int_n: np.ndarray
    tau_b: np.ndarray
    weighted_load: float


@dataclass
class CycleSamples:
    """Column store of many cycles; row ``k`` is cycle ``first_cycle + k``."""

    tau: np.ndarray
    n_at_tau: np.ndarray
    int_n: np.ndarray
    tau_b: np.ndarray
    weighted_load: np.ndarray

    def __len__(self):
        return self.tau.shape[0]

    def __getitem__(self, k) -> CycleSample:
        return CycleSample(
            float(self.tau[k]), self.n_at_tau[k].copy(), self.int_n[k].copy(),
            self.tau_b[k].copy(), float(self.weighted_load[k]),
        )

    @property
    def n_items(self) -> int:
        return self.n_at_tau.shape[1]

    def columns(self) -> list[str]:
        n = self.n_items
        return (
            ["tau"] + [f"n{i + 1}" for i in range(n)] + [f"intn{i + 1}" for i in range(n)]
            + [f"taub{i + 1}" for i in range(n)] + ["load"]
        )

    def matrix(self) -> np.ndarray:
        return np.column_stack(
            [self.tau, self.n_at_tau, self.int_n, self.tau_b, self.weighted_load]
        )

    def digest(self) -> str:
        """SHA-256 of the raw sample bytes, for reproducibility checks."""
        return hashlib.sha256(np.ascontiguousarray(self.matrix()).tobytes()).hexdigest()

    def to_csv(self, fh=None) -> Optional[str]:
        own = fh is None
        fh = io.StringIO() if own else fh
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.columns())
        for row in self.matrix():
            writer.writerow([repr(float(v)) for v in row])
        return fh.getvalue() if own else None


# -- engine ----------------------------------------------------------------


def default_dt(params: SystemParams, policy: Policy) -> float:
    if isinstance(policy, (QP, QTP)):
        return GRID_FRACTION * policy.q / params.total_drift
    if isinstance(policy, IRP):
        return GRID_FRACTION * policy.m / params.w_drift
    if isinstance(policy, IRHP):
        from .fpt import DriftedBM1D, irhp_expected_tau

        return GRID_FRACTION * irhp_expected_tau(DriftedBM1D.from_params(params), policy.m, policy.t)
    if isinstance(policy, TP):
        return policy.t
    return CUSTOM_DT


def dyadic_levels(t_cap: float, dt: float) -> int:
    """Smallest L with t_cap / 2^L <= dt."""
    return max(0, int(math.ceil(math.log2(t_cap / dt) - 1e-12)))


def _alloc(m, n):
    return np.empty(m), np.empty((m, n)), np.empty((m, n)), np.empty((m, n)), np.empty(m)


def _run_kernel(name, seed, cycles, args, n):
    fn = getattr(_kern, name)
    if USE_NUMBA:
        out = _alloc(cycles.shape[0], n)
        fn(np.uint64(seed), cycles, *args, *out)
        return out
    return fn(np.uint64(seed), cycles, *args)


def _custom_batch(params: SystemParams, policy: Custom, seed: int, cycles: np.ndarray, dt: float):
    """Grid-stepped cycles under a user rule, advanced together in blocks of steps.

    Step ``k`` of a cycle always uses path normals ``n*k .. n*k + n - 1``, so
    the result for a cycle does not depend on which others share its batch.
    """
    n = params.n
    block = 128  # steps per round; a multiple of 4 keeps normals block-aligned
    scale = params.sigma * math.sqrt(dt)
    m = cycles.shape[0]
    out = _alloc(m, n)
    x = np.zeros((m, n))
    n_prev = np.zeros((m, n))
    integral = np.zeros((m, n))
    active = np.arange(m)
    k0 = 0
    while active.size:
        a = active.size
        z = rng.normals(seed, cycles[active], rng.PATH, n * block, start_block=n * k0 // 4)
        path = x[active][:, None, :] + np.cumsum(z.reshape(a, block, n) * scale, axis=1)
        times = (k0 + 1 + np.arange(block)) * dt
        loads = params.d * times[None, :, None] + path
        if policy.vectorized:
            flat_t = np.broadcast_to(times, (a, block)).reshape(-1)
            fired = np.asarray(policy.rule(flat_t, loads.reshape(-1, n)), dtype=bool)
            if fired.shape != (a * block,):
                raise ValueError("vectorised rule must return one flag per time point")
            fired = fired.reshape(a, block)
        else:
            fired = np.zeros((a, block), dtype=bool)
            for r in range(a):
                for k in range(block):
                    if times[k] > policy.time_cap:
                        break
                    if policy.rule(float(times[k]), loads[r, k].copy()):
                        fired[r, k] = True
                        break
        done = fired.any(axis=1)
        first = np.argmax(fired, axis=1)
        late = np.where(done, times[first] > policy.time_cap, times[-1] >= policy.time_cap)
        if late.any():
            bad = int(cycles[active[np.argmax(late)]])
            raise CycleCapExceeded(
                f"rule {policy.label!r} did not fire within time cap {policy.time_cap} (cycle {bad})"
            )
        stop = np.where(done, first + 1, block)
        seg = np.concatenate([n_prev[active][:, None, :], loads], axis=1)
        seg = 0.5 * dt * (seg[:, :-1] + seg[:, 1:])
        seg *= (np.arange(block)[None, :] < stop[:, None])[..., None]
        integral[active] += seg.sum(axis=1)

        rows, fin = active[done], np.nonzero(done)[0]
        tau = times[first[fin]]
        n_at = loads[fin, first[fin]]
        xt = path[fin, first[fin]]
        out[0][rows] = tau
        out[1][rows] = n_at
        out[2][rows] = integral[rows]
        out[3][rows] = tau[:, None] * xt / params.sigma
        out[4][rows] = n_at @ params.omega

        keep = ~done
        x[active[keep]] = path[keep, -1]
        n_prev[active[keep]] = loads[keep, -1]
        active = active[keep]
        k0 += block
    return out


def _simulate_range(params, policy, seed, cycles, dt, bridge):
    d, sig, om = (np.ascontiguousarray(v) for v in (params.d, params.sigma, params.omega))
    n = params.n
    if isinstance(policy, TP):
        return _run_kernel("tp_chunk", seed, cycles, (policy.t, d, sig, om), n)
    if isinstance(policy, (QP, QTP)):
        ext = policy.t if isinstance(policy, QTP) else 0.0
        return _run_kernel("hit_chunk", seed, cycles, (policy.q, np.ones(n), d, sig, om, dt, ext), n)
    if isinstance(policy, IRP):
        return _run_kernel("hit_chunk", seed, cycles, (policy.m, om, d, sig, om, dt, 0.0), n)
    if isinstance(policy, IRHP):
        levels = dyadic_levels(policy.t, dt)
        args = (policy.m, policy.t, om, d, sig, om, levels, bool(bridge))
        return _run_kernel("irhp_chunk", seed, cycles, args, n)
    if isinstance(policy, Custom):
        return _custom_batch(params, policy, seed, cycles, dt)
    raise TypeError(f"unknown policy {policy!r}")


def simulate_cycles(params: SystemParams, policy: Policy, cfg: SimConfig) -> CycleSamples:
    """Simulate ``cfg.n_cycles`` cycles; identical output for any ``cfg.workers``."""
    dt = cfg.dt if cfg.dt is not None else default_dt(params, policy)
    m, n = int(cfg.n_cycles), params.n
    out = _alloc(m, n)
    starts = list(range(0, m, CHUNK))

    def work(start):
        stop = min(start + CHUNK, m)
        cycles = np.arange(cfg.first_cycle + start, cfg.first_cycle + stop, dtype=np.uint64)
        res = _simulate_range(params, policy, int(cfg.seed), cycles, dt, cfg.bridge_correction)
        for dst, src in zip(out, res):
            dst[start:stop] = src

    if cfg.workers == 1 or len(starts) == 1:
        for start in starts:
            work(start)
    else:
        with ThreadPoolExecutor(max_workers=int(cfg.workers)) as pool:
            list(pool.map(work, starts))
    return CycleSamples(*out)


def simulate_cycle(
    params: SystemParams,
    policy: Policy,
    stream: CycleStream,
    dt: Optional[float] = None,
    bridge_correction: bool = True,
) -> CycleSample:
    cfg = SimConfig(1, dt, stream.seed, bridge_correction, 1, stream.cycle)
    return simulate_cycles(params, policy, cfg)[0]


# -- estimates -------------------------------------------------------------

Z95 = 1.959963984540054


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_err: float
    ci_low: float
    ci_high: float
    n_samples: int

    @classmethod
    def of(cls, mean: float, std_err: float, n: int) -> "Estimate":
        return cls(float(mean), float(std_err), mean - Z95 * std_err, mean + Z95 * std_err, int(n))

    @classmethod
    def from_samples(cls, x) -> "Estimate":
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if n < 2:
            se = math.inf
        elif np.ptp(x) == 0:
            se = 0.0  # a constant column, e.g. tau under TP
        else:
            se = x.std(ddof=1) / math.sqrt(n)
        return cls.of(x.mean(), se, n)

    @classmethod
    def ratio(cls, num, den) -> "Estimate":
        """mean(num) / mean(den) with a delta-method standard error."""
        num = np.asarray(num, dtype=float)
        den = np.asarray(den, dtype=float)
        n = num.shape[0]
        r = num.mean() / den.mean()
        if n < 2:
            return cls.of(r, math.inf, n)
        cov = np.cov(num, den)
        var = (cov[0, 0] - 2 * r * cov[0, 1] + r * r * cov[1, 1]) / (n * den.mean() ** 2)
        return cls.of(r, math.sqrt(max(var, 0.0)), n)

    def z(self, value: float) -> float:
        if self.std_err == 0:
            if abs(self.mean - value) <= 1e-12 * max(1.0, abs(value)):
                return 0.0
            return math.copysign(math.inf, self.mean - value)
        return (self.mean - value) / self.std_err

    def covers(self, value: float, k: float = 3.0) -> bool:
        return abs(self.z(value)) <= k


@dataclass(frozen=True)
class MonteCarloReport:
    report: PolicyReport
    ac: Estimate
    awdr: Estimate
    cycle_mean: Estimate
    waiting: tuple
    samples: CycleSamples = field(repr=False)


def _weighted_waiting(params, s: CycleSamples):
    return s.int_n @ params.omega


def estimate_from_samples(params: SystemParams, s: CycleSamples) -> MonteCarloReport:
    wait = _weighted_waiting(params, s)
    cost = params.a_d + s.n_at_tau @ params.c + wait
    ac = Estimate.ratio(cost, s.tau)
    awdr = Estimate.ratio(wait, s.tau)
    tau = Estimate.from_samples(s.tau)
    per_item = tuple(Estimate.from_samples(s.int_n[:, i]) for i in range(s.n_items))
    report = PolicyReport(
        ac.mean, awdr.mean, tau.mean, np.array([e.mean for e in per_item]), "monte-carlo"
    )
    return MonteCarloReport(report, ac, awdr, tau, per_item, s)


def estimate_report(params: SystemParams, policy: Policy, cfg: SimConfig) -> MonteCarloReport:
    return estimate_from_samples(params, simulate_cycles(params, policy, cfg))


@dataclass(frozen=True)
class Moment:
    """Cycle statistic selector: tau, tau2, load, load2, tau_b(i), int_n(i), n_at(i)."""

    kind: str
    item: Optional[int] = None

    _KINDS = ("tau", "tau2", "load", "load2", "tau_b", "int_n", "n_at")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown moment {self.kind!r}")
        if (self.kind in ("tau_b", "int_n", "n_at")) != (self.item is not None):
            raise ValueError(f"moment {self.kind!r} item index mismatch")

    def values(self, s: CycleSamples) -> np.ndarray:
        if self.kind == "tau":
            return s.tau
        if self.kind == "tau2":
            return s.tau**2
        if self.kind == "load":
            return s.weighted_load
        if self.kind == "load2":
            return s.weighted_load**2
        col = {"tau_b": s.tau_b, "int_n": s.int_n, "n_at": s.n_at_tau}[self.kind]
        return col[:, self.item]


TAU = Moment("tau")
TAU2 = Moment("tau2")
LOAD = Moment("load")
LOAD2 = Moment("load2")


def tau_b(i: int) -> Moment:
    return Moment("tau_b", i)


def int_n(i: int) -> Moment:
    return Moment("int_n", i)


def estimate_moment(params: SystemParams, policy: Policy, cfg: SimConfig, which: Moment, samples=None) -> Estimate:
    s = samples if samples is not None else simulate_cycles(params, policy, cfg)
    return Estimate.from_samples(which.values(s))


def unified_residuals(params: SystemParams, s: CycleSamples, i: int) -> np.ndarray:
    """int_n_i - (D_i tau^2 / 2 + sigma_i tau B_i(tau)) per cycle; mean zero."""
    return s.int_n[:, i] - (0.5 * params.d[i] * s.tau**2 + params.sigma[i] * s.tau_b[:, i])


def check_unified_formula(params: SystemParams, policy: Policy, cfg: SimConfig, i: int, samples=None) -> Estimate:
    s = samples if samples is not None else simulate_cycles(params, policy, cfg)
    return Estimate.from_samples(unified_residuals(params, s, i))


def load_moment_residuals(params: SystemParams, s: CycleSamples) -> np.ndarray:
    """Weighted waiting minus its expression in the first two load moments."""
    mu, v = params.w_drift, params.w2_var
    load = s.weighted_load
    return _weighted_waiting(params, s) - (load**2 / (2 * mu) - v * load / (2 * mu * mu))


def check_load_moment_identity(params: SystemParams, policy: Policy, cfg: SimConfig, samples=None) -> Estimate:
    s = samples if samples is not None else simulate_cycles(params, policy, cfg)
    return Estimate.from_samples(load_moment_residuals(params, s))


def compare_with_closed_form(params: SystemParams, policy: Policy, mc: MonteCarloReport) -> Optional[dict]:
    """z-scores of the Monte Carlo estimates against closed forms, if any."""
    if isinstance(policy, Custom):
        return None
    exact = evaluate(params, policy)
    out = {
        "ac": (exact.ac, mc.ac.z(exact.ac)),
        "awdr": (exact.awdr, mc.awdr.z(exact.awdr)),
        "cycle_mean": (exact.cycle_mean, mc.cycle_mean.z(exact.cycle_mean)),
    }
    for i, est in enumerate(mc.waiting):
        val = float(exact.per_item_waiting[i])
        out[f"waiting{i + 1}"] = (val, est.z(val))
    return out
