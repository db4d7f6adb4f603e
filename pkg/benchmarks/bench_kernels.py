"""Compiled vs pure-numpy cycle kernels.

Each backend runs in its own interpreter because the choice is made once at
import time from CLEARING_LAB_DISABLE_NUMBA.  Reports cycles per second per
policy and the largest relative difference between the two outputs.

    python benchmarks/bench_kernels.py --cycles 20000
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

POLICIES = {
    "TP": "TP(1.0)",
    "QP": "QP(2.0)",
    "QTP": "QTP(1.0, 0.5)",
    "IRP": "IRP(3.0)",
    "IRHP": "IRHP(3.2, 2.0)",
}


def worker(cycles: int, repeat: int, dt_fraction: float, out_dir: str) -> None:
    from clearing_lab import backend_name
    from clearing_lab.model import IRHP, IRP, QP, QTP, TP, SystemParams  # noqa: F401
    from clearing_lab.simulate import SimConfig, default_dt, simulate_cycles

    p = SystemParams(d=[1.0, 1.0], sigma=[1.0, 1.0], omega=[1.0, 2.0], a_d=3.0)
    timings = {}
    for name, expr in POLICIES.items():
        pol = eval(expr)
        dt = default_dt(p, pol) * dt_fraction / 1e-3
        simulate_cycles(p, pol, SimConfig(16, dt=dt))  # compile / warm caches
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            s = simulate_cycles(p, pol, SimConfig(cycles, dt=dt, seed=1))
            best = min(best, time.perf_counter() - t0)
        timings[name] = best
        np.save(os.path.join(out_dir, f"{name}.npy"), s.matrix())
    print(json.dumps({"backend": backend_name(), "seconds": timings}))


def run_backend(disable: bool, args, out_dir: str) -> dict:
    env = dict(os.environ)
    env.pop("CLEARING_LAB_DISABLE_NUMBA", None)
    if disable:
        env["CLEARING_LAB_DISABLE_NUMBA"] = "1"
    cmd = [sys.executable, __file__, "--worker", out_dir, "--cycles", str(args.cycles),
           "--repeat", str(args.repeat), "--dt-fraction", str(args.dt_fraction)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--dt-fraction", type=float, default=1e-2, help="grid step as a fraction of E[tau]")
    ap.add_argument("--worker", metavar="DIR", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.cycles, args.repeat, args.dt_fraction, args.worker)
        return

    with tempfile.TemporaryDirectory() as nb_dir, tempfile.TemporaryDirectory() as np_dir:
        fast = run_backend(False, args, nb_dir)
        slow = run_backend(True, args, np_dir)
        print(f"{args.cycles} cycles, dt = {args.dt_fraction:g} E[tau], best of {args.repeat}")
        print(f"{'policy':<6} {fast['backend'] + ' (s)':>12} {slow['backend'] + ' (s)':>12} {'speedup':>8} {'max rel diff':>13}")
        for name in POLICIES:
            a = np.load(os.path.join(nb_dir, f"{name}.npy"))
            b = np.load(os.path.join(np_dir, f"{name}.npy"))
            diff = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1.0)))
            tf, ts = fast["seconds"][name], slow["seconds"][name]
            print(f"{name:<6} {tf:12.3f} {ts:12.3f} {ts / tf:8.1f} {diff:13.1e}")


if __name__ == "__main__":
    main()
