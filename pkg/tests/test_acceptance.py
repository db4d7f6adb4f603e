"""Acceptance gate: one PASS/FAIL line per criterion, with wall time.

Numba compilation is paid once in a warm-up fixture and not charged to any
criterion.
"""

import math
import time

import numpy as np
import pytest

from clearing_lab import analytic as an
from clearing_lab import verify as vf
from clearing_lab.fpt import DriftedBM1D, match_frequency
from clearing_lab.model import IRHP, IRP, QP, QTP, TP, SystemParams
from clearing_lab.simulate import (
    SimConfig,
    check_load_moment_identity,
    estimate_from_samples,
    simulate_cycles,
)

pytestmark = pytest.mark.slow

P1 = SystemParams(d=[1.0, 1.0], sigma=[1.0, 1.0], omega=[1.0, 2.0], a_d=3.0)


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    cfg = SimConfig(8, dt=0.1)
    for pol in (QP(2.0), TP(1.0), QTP(1.0, 0.5), IRP(3.0), IRHP(3.0, 2.0)):
        simulate_cycles(P1, pol, cfg)


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def _rel_close(a, b, scale, rel):
    return abs(a - b) <= rel * max(abs(scale), 1e-300)


def test_criterion_1_closed_form_consistency(acceptance_line):
    rng = np.random.default_rng(1)
    sets = [vf.random_params(rng) for _ in range(1000)]
    bad = []
    with Clock() as clk:
        for p in sets:
            q, qp = an.optimal_qp(p)
            m, irp = an.optimal_irp(p)
            if not _rel_close(qp - irp, an.qp_irp_gap(p), max(abs(qp), abs(irp)), 1e-10):
                bad.append(("gap", p))
            if an.ac_qtp(p, q, 0.0) != an.ac_qp(p, q):
                bad.append(("qtp(Q,0)", p))
            t = an.optimal_tp(p)[0]
            for pol in (QP(q), QTP(0.5 * q, 0.5 * t), IRP(m)):
                mom = an.closed_form_moments(p, pol)
                for i in range(p.n):
                    a = 0.5 * p.d[i] * mom["tau2"]
                    b = p.sigma[i] * mom["tau_b"][i]
                    if not _rel_close(mom["int_n"][i], a + b, max(abs(a), abs(b)), 1e-12):
                        bad.append(("recompose", type(pol).__name__, i, p))
    ok = not bad and clk.elapsed < 1.0
    acceptance_line(1, ok, f"{len(sets)} sets, {len(bad)} violations", clk.elapsed)
    assert not bad, bad[:3]
    assert clk.elapsed < 1.0


def test_criterion_2_sign_law(acceptance_line):
    rng = np.random.default_rng(2)
    sets = [vf.random_params_signed(rng, 1e-6) for _ in range(1000)]
    with Clock() as clk:
        fails = [c for c in map(vf.check_theorem_1, sets) if not c.status]
    ok = not fails and clk.elapsed < 1.0
    acceptance_line(2, ok, f"{len(sets)} draws, {len(fails)} sign mismatches", clk.elapsed)
    assert not fails, fails[0].to_json()
    assert clk.elapsed < 1.0


def test_criterion_3_grid_dominance(acceptance_line):
    rng = np.random.default_rng(3)
    sets = [vf.random_params_signed(rng, 1e-6) for _ in range(50)]
    with Clock() as clk:
        fails = [c for c in (vf.check_theorem_9(p, grid=200) for p in sets) if not c.status]
    ok = not fails and clk.elapsed < 30.0
    acceptance_line(3, ok, f"50 sets on a 200x200 grid, {len(fails)} failures", clk.elapsed)
    assert not fails, fails[0].to_json()
    assert clk.elapsed < 30.0


# -- criterion 4 -------------------------------------------------------------

C4_CYCLES = 100_000
C4_DT_FRACTION = 1e-2


def _c4_policies(p):
    q = an.optimal_qp(p)[0]
    t = an.optimal_tp(p)[0]
    return [QP(q), TP(t), QTP(0.5 * q, 0.5 * t), IRP(an.optimal_irp(p)[0])]


def _c4_zscores(p, pol, seed):
    exact = an.closed_form_moments(p, pol)
    rep = an.evaluate(p, pol)
    cfg = SimConfig(C4_CYCLES, dt=C4_DT_FRACTION * exact["tau"], seed=seed)
    s = simulate_cycles(p, pol, cfg)
    mc = estimate_from_samples(p, s)
    z = {"ac": mc.ac.z(rep.ac), "awdr": mc.awdr.z(rep.awdr)}
    from clearing_lab.simulate import Estimate

    z["tau2"] = Estimate.from_samples(s.tau**2).z(exact["tau2"])
    for i in range(p.n):
        z[f"tau_b{i + 1}"] = Estimate.from_samples(s.tau_b[:, i]).z(exact["tau_b"][i])
        z[f"int_n{i + 1}"] = mc.waiting[i].z(exact["int_n"][i])
    return z


def test_criterion_4_monte_carlo_vs_closed_form(acceptance_line):
    rng = np.random.default_rng(4)
    sets = [P1] + [vf.random_params(rng) for _ in range(20)]
    flakes, n_assert = [], 0
    with Clock() as clk:
        for k, p in enumerate(sets):
            for j, pol in enumerate(_c4_policies(p)):
                seed = 4000 + 10 * k + j
                z = _c4_zscores(p, pol, seed)
                n_assert += len(z)
                off = {name: v for name, v in z.items() if abs(v) > 3.0}
                if off:
                    flakes.append((k, pol, seed, off))
        reruns = []
        for k, pol, seed, off in flakes:
            z = _c4_zscores(sets[k], pol, seed + 1_000_000)
            reruns.append(all(abs(z[name]) <= 3.0 for name in off))
    passed = len(flakes) <= 2 and all(reruns)
    ok = passed and clk.elapsed < 120.0
    detail = (f"{len(sets)} sets x 4 policies, {n_assert} assertions, {len(flakes)} outside 3 SE "
              f"(reruns passed: {sum(reruns)}/{len(reruns)})")
    acceptance_line(4, ok, detail, clk.elapsed)
    assert passed, [(k, type(pol).__name__, off) for k, pol, _, off in flakes]
    assert clk.elapsed < 120.0


def _irhp_matched(p, t, cap_factor=2.0):
    m_h = match_frequency(DriftedBM1D.from_params(p), t, cap_factor * t)
    return IRHP(m_h, cap_factor * t)


def test_criterion_5_load_moment_identity(acceptance_line):
    q, t, m = an.optimal_qp(P1)[0], an.optimal_tp(P1)[0], an.optimal_irp(P1)[0]
    policies = [QP(q), TP(t), QTP(0.5 * q, 0.5 * t), IRP(m), _irhp_matched(P1, t)]
    zs = {}
    with Clock() as clk:
        for k, pol in enumerate(policies):
            dt = None if isinstance(pol, IRHP) else C4_DT_FRACTION * an.evaluate(P1, pol).cycle_mean
            est = check_load_moment_identity(P1, pol, SimConfig(100_000, dt=dt, seed=5000 + k))
            zs[type(pol).__name__] = est.z(0.0)
    passed = all(abs(v) <= 3.0 for v in zs.values())
    ok = passed and clk.elapsed < 60.0
    acceptance_line(5, ok, "z = " + ", ".join(f"{k} {v:+.2f}" for k, v in zs.items()), clk.elapsed)
    assert passed, zs
    assert clk.elapsed < 60.0


def test_criterion_6_key_inequality(acceptance_line):
    grid = vf.key_inequality_grid()
    mc = [grid[0], grid[312], grid[-1]]
    with Clock() as clk:
        chk = vf.check_key_inequality(grid, mc_points=mc, n_paths=1_000_000, seed=6)
    worst = max(abs(w["diff"]) for w in chk.witnesses if "diff" in w)
    ok = chk.status and clk.elapsed < 60.0
    acceptance_line(6, ok, f"{len(grid)} grid points + 3 MC points, max |lhs-rhs| {worst:.1e}", clk.elapsed)
    assert chk.status, chk.failures
    assert clk.elapsed < 60.0


def test_criterion_7_matched_frequency(acceptance_line):
    rng = np.random.default_rng(7)
    sets = [P1] + [vf.random_params(rng) for _ in range(10)]
    fails = []
    with Clock() as clk:
        for k, p in enumerate(sets):
            t = an.optimal_tp(p)[0]
            for chk in (vf.check_theorem_18(p, t, n_custom=2, seed=700 + 10 * k), vf.check_theorem_19(p, t)):
                if not chk.status:
                    fails.append((k, chk.name, chk.failures))
    ok = not fails and clk.elapsed < 120.0
    acceptance_line(7, ok, f"{len(sets)} sets, {len(fails)} failed checks", clk.elapsed)
    assert not fails, fails
    assert clk.elapsed < 120.0


def test_criterion_8_poisson_equivalence(acceptance_line):
    lam_sets = [[1.0], [1.0, 1.0], [2.0, 3.0], [0.1, 5.0, 20.0], [0.5, 0.5, 1.5, 7.0, 0.25]]
    worst, count = 0.0, 0
    with Clock() as clk:
        for lams in lam_sets:
            p = SystemParams(d=lams, sigma=np.sqrt(lams), omega=np.ones(len(lams)), a_d=1.0)
            for q in range(1, 51):
                for i in range(len(lams)):
                    a = an.poisson_qp_item_waiting(lams, q, i)
                    b = an.qp_item_waiting(p, q, i)
                    worst = max(worst, abs(a - b) / max(abs(a), 1.0))
                    count += 1
    ok = worst <= 1e-12 and clk.elapsed < 1.0
    acceptance_line(8, ok, f"{count} (lambda, Q, i) points, max rel diff {worst:.1e}", clk.elapsed)
    assert worst <= 1e-12
    assert clk.elapsed < 1.0


def test_criterion_9_reproducibility_and_refinement(acceptance_line):
    t = an.optimal_tp(P1)[0]
    policies = [QP(2.0), TP(1.0), QTP(1.0, 0.5), IRP(3.0), _irhp_matched(P1, t),
                vf.threshold_rule([1.0, 2.0], 3.0, 2.0)]
    with Clock() as clk:
        same = True
        for pol in policies:
            digests = {simulate_cycles(P1, pol, SimConfig(10_000, dt=0.01, seed=9, workers=w)).digest()
                       for w in (1, 4, 16)}
            same &= len(digests) == 1
        pol = policies[4]
        from clearing_lab.simulate import default_dt, dyadic_levels

        levels = dyadic_levels(pol.t, default_dt(P1, pol))
        coarse = estimate_from_samples(P1, simulate_cycles(P1, pol, SimConfig(100_000, dt=pol.t / 2**levels, seed=9)))
        fine = estimate_from_samples(P1, simulate_cycles(P1, pol, SimConfig(100_000, dt=pol.t / 2 ** (levels + 1), seed=9)))
        shift = abs(fine.ac.mean - coarse.ac.mean)
        se = coarse.ac.std_err
    passed = same and shift < se
    ok = passed and clk.elapsed < 120.0
    detail = (f"digests identical: {same}; IRHP AC shift at 2^{levels}->2^{levels + 1} steps "
              f"{shift:.2e} vs SE {se:.2e}")
    acceptance_line(9, ok, detail, clk.elapsed)
    assert passed
    assert clk.elapsed < 120.0
