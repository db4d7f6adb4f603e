import io
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from clearing_lab import _kernels_np, analytic as an, simulate as sim
from clearing_lab._jit import USE_NUMBA
from clearing_lab.errors import CycleCapExceeded, NonPositiveParameter
from clearing_lab.fpt import DriftedBM1D, irhp_expected_tau
from clearing_lab.model import IRHP, IRP, QP, QTP, TP, Custom, SystemParams
from clearing_lab.simulate import (
    LOAD2, TAU, TAU2, CycleStream, Estimate, SimConfig, check_load_moment_identity,
    check_unified_formula, estimate_moment, estimate_report, simulate_cycle, simulate_cycles, tau_b,
)

M_STAR = math.sqrt(18.0)


def coarse(policy, params, frac=1e-2):
    """A grid of ``frac`` times the mean cycle length."""
    return frac * sim.default_dt(params, policy) / sim.GRID_FRACTION


def test_tp_cycles_are_exact(p1):
    s = simulate_cycles(p1, TP(1.0), SimConfig(50_000, seed=1))
    assert np.all(s.tau == 1.0)
    for i in range(2):
        assert Estimate.from_samples(s.n_at_tau[:, i]).covers(p1.d[i])
        resid = check_unified_formula(p1, TP(1.0), None, i, samples=s)
        assert resid.covers(0.0)
    # exact joint law of (B(T), int B): covariance T^2/2, variance T^3/3
    b = s.tau_b[:, 0]
    integ = (s.int_n[:, 0] - 0.5 * p1.d[0]) / p1.sigma[0]
    assert np.cov(b, integ)[0, 1] == pytest.approx(0.5, abs=0.02)
    assert integ.var() == pytest.approx(1 / 3, abs=0.01)


def test_qp_hitting_time_law(p1):
    # tau is sampled exactly, so a one-step grid is enough for its mean
    s = simulate_cycles(p1, QP(2.0), SimConfig(1_000_000, dt=50.0, seed=2))
    est = Estimate.from_samples(s.tau)
    assert abs(est.mean - 1.0) <= 3 * est.std_err
    np.testing.assert_allclose(s.n_at_tau.sum(axis=1), 2.0, atol=1e-9)


def test_irp_load_is_exact(p1):
    s = simulate_cycles(p1, IRP(3.0), SimConfig(5_000, seed=3))
    np.testing.assert_allclose(s.weighted_load, 3.0, atol=1e-9)
    np.testing.assert_allclose(s.n_at_tau @ p1.omega, s.weighted_load, rtol=1e-14)
    est = estimate_moment(p1, IRP(3.0), None, LOAD2, samples=s)
    assert est.mean == pytest.approx(9.0, abs=1e-8)


def test_qp_estimates(p1):
    pol = QP(2.0)
    cfg = SimConfig(100_000, dt=coarse(pol, p1), seed=42)
    mc = estimate_report(p1, pol, cfg)
    assert mc.ac.covers(3.75)
    assert estimate_moment(p1, pol, cfg, TAU2, samples=mc.samples).covers(1.5)
    assert estimate_moment(p1, pol, cfg, tau_b(0), samples=mc.samples).covers(-0.5)
    for i in range(2):
        assert mc.waiting[i].covers(an.qp_item_waiting(p1, 2.0, i))
        assert check_unified_formula(p1, pol, cfg, i, samples=mc.samples).covers(0.0)
    assert mc.ac.ci_low < mc.ac.mean < mc.ac.ci_high
    assert mc.report.provenance == "monte-carlo"


def test_irp_awdr(p1):
    pol = IRP(M_STAR)
    mc = estimate_report(p1, pol, SimConfig(100_000, dt=coarse(pol, p1), seed=8))
    assert mc.awdr.covers(an.awdr_irp(p1, M_STAR))
    assert mc.awdr.covers(1.28799, k=3.2)


def test_qtp_extension(p1):
    pol = QTP(1.0, 0.5)
    mc = estimate_report(p1, pol, SimConfig(60_000, dt=coarse(pol, p1), seed=9))
    exact = an.evaluate(p1, pol)
    assert mc.cycle_mean.covers(exact.cycle_mean)
    assert mc.ac.covers(exact.ac)
    # the extension is independent of the passage, so E[tau B(tau)] is the QP value
    assert Estimate.from_samples(mc.samples.tau_b[:, 1]).covers(an.qp_cross_moment(p1, 1.0, 1))


def test_irhp_unified_formula(p1):
    pol = IRHP(3.0, 1.0)
    s = simulate_cycles(p1, pol, SimConfig(40_000, seed=10))
    assert np.all(s.tau <= 1.0)
    assert check_unified_formula(p1, pol, None, 1, samples=s).covers(0.0)
    assert Estimate.from_samples(s.tau).covers(irhp_expected_tau(DriftedBM1D(3.0, math.sqrt(5.0)), 3.0, 1.0))


def test_load_identity_and_jensen(p1):
    for pol in (QP(2.0), TP(1.0), IRP(3.0)):
        cfg = SimConfig(30_000, dt=coarse(pol, p1), seed=12)
        s = simulate_cycles(p1, pol, cfg)
        assert check_load_moment_identity(p1, pol, cfg, samples=s).covers(0.0)
        assert np.mean(s.weighted_load**2) >= np.mean(s.weighted_load) ** 2


def test_fixed_cost_is_only_difference(p1):
    s = simulate_cycles(p1, QP(2.0), SimConfig(2_000, dt=0.05, seed=13))
    mc = sim.estimate_from_samples(p1, s)
    # c = 0 here, so AC - AWDR is the fixed cost spread over the mean cycle
    assert mc.ac.mean - mc.awdr.mean == pytest.approx(p1.a_d / s.tau.mean(), rel=1e-12)


@pytest.mark.parametrize("policy", [QP(2.0), TP(1.0), QTP(1.0, 0.5), IRP(3.0), IRHP(3.0, 1.0)])
def test_worker_count_does_not_change_bytes(p1, policy):
    digests = set()
    for w in (1, 4, 16):
        cfg = SimConfig(3 * sim.CHUNK + 17, dt=0.01, seed=77, workers=w)
        digests.add(simulate_cycles(p1, policy, cfg).digest())
    assert len(digests) == 1


def test_first_cycle_offset_selects_rows(p1):
    full = simulate_cycles(p1, QP(2.0), SimConfig(40, dt=0.05, seed=5))
    part = simulate_cycles(p1, QP(2.0), SimConfig(10, dt=0.05, seed=5, first_cycle=30))
    np.testing.assert_array_equal(full.matrix()[30:], part.matrix())
    one = simulate_cycle(p1, QP(2.0), CycleStream(5, 33), dt=0.05)
    assert one.tau == full.tau[33]
    np.testing.assert_array_equal(one.int_n, full.int_n[33])


@pytest.mark.skipif(not USE_NUMBA, reason="compiled kernels are disabled")
@pytest.mark.parametrize("name,args", [
    ("tp_chunk", lambda p: (1.3, p.d, p.sigma, p.omega)),
    ("hit_chunk", lambda p: (2.0, np.ones(2), p.d, p.sigma, p.omega, 0.01, 0.0)),
    ("hit_chunk", lambda p: (3.0, p.omega, p.d, p.sigma, p.omega, 0.003, 0.7)),
    ("irhp_chunk", lambda p: (3.0, 1.0, p.omega, p.d, p.sigma, p.omega, 9, True)),
    ("irhp_chunk", lambda p: (3.0, 1.0, p.omega, p.d, p.sigma, p.omega, 6, False)),
])
def test_backends_agree(p1, name, args):
    from clearing_lab import _kernels_nb

    cycles = np.arange(300, 700, dtype=np.uint64)
    a = [np.ascontiguousarray(x) if isinstance(x, np.ndarray) else x for x in args(p1)]
    want = getattr(_kernels_np, name)(np.uint64(5), cycles, *a)
    got = sim._alloc(len(cycles), 2)
    getattr(_kernels_nb, name)(np.uint64(5), cycles, *a, *got)
    for x, y in zip(got, want):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-11)


def test_numpy_fallback_via_environment(p1):
    code = (
        "import numpy as np\n"
        "from clearing_lab import backend_name, simulate_cycles, SimConfig, QP, IRHP, SystemParams\n"
        "p = SystemParams([1, 1], [1, 1], [1, 2], 3.0)\n"
        "print(backend_name())\n"
        "for pol in (QP(2.0), IRHP(3.0, 1.0)):\n"
        "    s = simulate_cycles(p, pol, SimConfig(300, dt=0.01, seed=4))\n"
        "    print(' '.join(repr(float(x)) for x in s.matrix().sum(axis=0)))\n"
    )
    env = dict(os.environ, CLEARING_LAB_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    lines = out.stdout.split("\n")
    assert lines[0] == "numpy"
    for pol, line in zip((QP(2.0), IRHP(3.0, 1.0)), lines[1:3]):
        here = simulate_cycles(p1, pol, SimConfig(300, dt=0.01, seed=4)).matrix().sum(axis=0)
        np.testing.assert_allclose([float(x) for x in line.split()], here, rtol=1e-9)


def test_bridge_correction_removes_late_bias(p1):
    pol = IRHP(3.0, 1.0)
    exact = irhp_expected_tau(DriftedBM1D(3.0, math.sqrt(5.0)), 3.0, 1.0)
    on = Estimate.from_samples(simulate_cycles(p1, pol, SimConfig(20_000, dt=1 / 16, seed=6)).tau)
    off = Estimate.from_samples(
        simulate_cycles(p1, pol, SimConfig(20_000, dt=1 / 16, seed=6, bridge_correction=False)).tau)
    assert on.covers(exact)
    assert off.z(exact) > 5


def threshold(level, beta, cap=50.0, vectorized=True):
    beta = np.asarray(beta, dtype=float)
    if vectorized:
        return Custom(lambda t, n: n @ beta >= level, time_cap=cap, vectorized=True)
    return Custom(lambda t, n: float(n @ beta) >= level, time_cap=cap)


def test_custom_rule_scalar_and_vector_agree(p1):
    cfg = SimConfig(200, dt=0.01, seed=3)
    a = simulate_cycles(p1, threshold(2.0, [1, 1]), cfg)
    b = simulate_cycles(p1, threshold(2.0, [1, 1], vectorized=False), cfg)
    np.testing.assert_array_equal(a.matrix(), b.matrix())
    assert np.all(a.n_at_tau.sum(axis=1) >= 2.0)


def test_custom_quantity_rule_tracks_qp(p1):
    pol = threshold(2.0, [1, 1])
    mc = estimate_report(p1, pol, SimConfig(20_000, dt=1e-3, seed=14))
    # grid detection overshoots a little; the passage mean is 1
    assert 1.0 <= mc.cycle_mean.mean < 1.03
    assert sim.compare_with_closed_form(p1, pol, mc) is None


def test_custom_rule_cap(p1):
    never = Custom(lambda t, n: False, time_cap=0.5)
    with pytest.raises(CycleCapExceeded, match="time cap 0.5"):
        simulate_cycles(p1, never, SimConfig(3, dt=0.01))
    bad = Custom(lambda t, n: np.ones(3, dtype=bool), vectorized=True)
    with pytest.raises(ValueError):
        simulate_cycles(p1, bad, SimConfig(3, dt=0.01))


def test_csv_dump(p1):
    s = simulate_cycles(p1, QP(2.0), SimConfig(5, dt=0.1))
    text = s.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "tau,n1,n2,intn1,intn2,taub1,taub2,load"
    assert len(lines) == 6
    row = [float(x) for x in lines[1].split(",")]
    np.testing.assert_array_equal(row, s.matrix()[0])
    buf = io.StringIO()
    s.to_csv(buf)
    assert buf.getvalue() == text


def test_config_validation():
    for kwargs in (dict(n_cycles=0), dict(dt=0.0), dict(workers=0), dict(seed=-1)):
        with pytest.raises(NonPositiveParameter):
            SimConfig(**kwargs)


def test_ratio_estimate_delta_method():
    rng = np.random.default_rng(0)
    den = rng.exponential(1.0, 4000) + 0.5
    num = 2.0 * den + rng.normal(0, 0.3, 4000)
    est = Estimate.ratio(num, den)
    boot = [np.mean(num[i]) / np.mean(den[i]) for i in rng.integers(0, 4000, (400, 4000))]
    assert est.std_err == pytest.approx(np.std(boot), rel=0.15)
    assert Estimate.from_samples(np.full(10, 2.5)).std_err == 0.0
    assert Estimate.from_samples(np.full(10, 2.5)).z(2.5) == 0.0


def test_default_grid(p1):
    assert sim.default_dt(p1, QP(2.0)) == pytest.approx(1e-3)
    assert sim.default_dt(p1, IRP(6.0)) == pytest.approx(2e-3)
    assert sim.dyadic_levels(1.0, 1e-3) == 10
    assert sim.dyadic_levels(1.0, 1 / 1024) == 10
