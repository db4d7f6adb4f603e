import json
import math

import numpy as np
import pytest

from clearing_lab import analytic as an
from clearing_lab import verify as vf
from clearing_lab.errors import DegenerateDiscriminant
from clearing_lab.model import SystemParams


def test_theorem_1(p1, p2):
    a, b = vf.check_theorem_1(p1), vf.check_theorem_1(p2)
    assert a.status and b.status
    assert a.witnesses[0]["margin"] == pytest.approx(math.sqrt(18) - (math.sqrt(18) - 0.75))
    assert b.witnesses[0]["margin"] < 0
    with pytest.raises(DegenerateDiscriminant):
        vf.check_theorem_1(SystemParams(d=[1, 1], sigma=[1, 3], omega=[26, 6], a_d=1))


def test_theorem_9(p1, p2):
    for p in (p1, p2):
        chk = vf.check_theorem_9(p)
        assert chk.status, chk.failures
    # both sides of Q-bar were probed
    sides = {w["below_q_bar"] for w in vf.check_theorem_9(p1).witnesses if "below_q_bar" in w}
    assert sides == {True, False}


def test_theorem_13(p1):
    chk = vf.check_theorem_13(p1)
    assert chk.status
    gap = [w for w in chk.witnesses if "gap" in w][0]
    assert gap["gap"] == pytest.approx(1 / 12)


def test_theorem_13_single_item():
    p = SystemParams(d=[2], sigma=[1], omega=[3], a_d=2)
    chk = vf.check_theorem_13(p)
    assert chk.status
    assert chk.witnesses[0]["margin"] == pytest.approx(0.0, abs=1e-12)


def test_theorem_15_and_18(p1):
    freq = math.sqrt(2)
    chk = vf.check_theorem_18(p1, freq, n_custom=2, n_cycles=5000, seed=3)
    assert chk.status, chk.failures
    head = chk.witnesses[0]
    assert head["awdr_irp"] == pytest.approx(1.28799, abs=5e-6)
    tp = [w for w in chk.witnesses if w.get("policy") == "TP"][0]
    assert tp["awdr"] == pytest.approx(2.12132, abs=5e-6)
    assert any("threshold" in str(w.get("policy")) for w in chk.witnesses)
    chk = vf.check_theorem_15(p1, 1.0, n_custom=2, n_cycles=5000, seed=3)
    assert chk.status, chk.failures


def test_matched_gap_is_zero_for_irp(p1):
    from clearing_lab.model import IRP
    from clearing_lab.simulate import SimConfig, simulate_cycles

    s = simulate_cycles(p1, IRP(3.0), SimConfig(20_000, dt=0.01, seed=1))
    for metric in ("awdr", "ac"):
        est, se, _ = vf.matched_gap(p1, s, metric)
        assert abs(est) <= 3 * se


def test_theorem_19(p1):
    chk = vf.check_theorem_19(p1, math.sqrt(2))
    assert chk.status, chk.failures
    gaps = chk.witnesses[-1]["gaps_to_irp"]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


def test_key_inequality_points():
    chk = vf.check_key_inequality([(1, 1, 1, 1), (3, math.sqrt(5), 3, 1)], mc_points=[(1, 1, 1, 1)],
                                  n_paths=200_000, seed=2)
    assert chk.status, chk.failures
    assert len(chk.witnesses) == 3


def test_key_inequality_grid_shape():
    grid = vf.key_inequality_grid()
    assert len(grid) == 625
    assert len({tuple(g) for g in grid}) == 625


def test_failures_carry_inputs(p1):
    chk = vf.TheoremCheck("demo")
    chk.add(True, x=1)
    chk.add(False, params=p1, value=np.float64(2.5), arr=np.arange(2))
    assert not chk.status
    (fail,) = chk.failures
    assert fail["params"] == p1.to_dict() and fail["arr"] == [0, 1]
    doc = json.loads(chk.to_json())
    assert doc["check"] == "demo" and doc["status"] == "fail" and "runtime_ms" in doc


def test_random_params_ranges():
    rng = np.random.default_rng(0)
    sizes = set()
    for _ in range(200):
        p = vf.random_params(rng)
        sizes.add(p.n)
        for v in (p.d, p.sigma, p.omega):
            assert np.all((v >= 0.1) & (v <= 10))
        assert np.all((p.c >= 0) & (p.c <= 5)) and 0.5 <= p.a_d <= 20
    assert sizes == {1, 2, 3, 5}
    p = vf.random_params_signed(rng, min_abs=1.0)
    assert abs(vf.discriminant(p).value) > 1.0


def test_run_all_is_deterministic(p1):
    a = vf.run_all(p1, seed=4, n_cycles=3000)
    b = vf.run_all(p1, seed=4, n_cycles=3000)
    assert all(c.status for c in a), [c.failures for c in a]
    assert [c.witnesses for c in a] == [c.witnesses for c in b]
    assert [c.name for c in a] == ["theorem_1", "theorem_9", "theorem_13_15", "theorem_18", "theorem_19",
                                   "key_inequality"]
