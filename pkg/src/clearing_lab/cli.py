"""Command line front end: ``clearing-lab {optimize,evaluate,simulate,compare,verify}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import secrets
import sys
from dataclasses import dataclass, field

import numpy as np

from . import analytic as an
from . import verify as vf
from .errors import ClearingError, DegenerateDiscriminant, NonPositiveParameter
from .fpt import DriftedBM1D, irhp_report, match_frequency
from .model import IRHP, IRP, QP, QTP, TP, discriminant, load_params, policy_args, policy_name
from .simulate import DEFAULT_SEED, SimConfig, compare_with_closed_form, estimate_report

SEED_ENV = "CLEARING_LAB_SEED"


@dataclass
class Table:
    title: str
    columns: list
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, *row):
        self.rows.append(list(row))


def _num_table(v):
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def _num_csv(v):
    if isinstance(v, (float, np.floating)) and not isinstance(v, bool):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def _jsonable(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def render(tables: list[Table], fmt: str) -> str:
    if fmt == "json":
        doc = []
        for t in tables:
            doc.append({
                "title": t.title,
                "rows": [{c: _jsonable(v) for c, v in zip(t.columns, r)} for r in t.rows],
                "notes": {k: _jsonable(v) for k, v in t.notes.items()},
            })
        return json.dumps(doc[0] if len(doc) == 1 else doc, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for k, t in enumerate(tables):
            if k:
                buf.write("\n")
            w.writerow(t.columns)
            for r in t.rows:
                w.writerow([_num_csv(v) for v in r])
        return buf.getvalue()
    out = []
    for t in tables:
        cells = [[str(c) for c in t.columns]] + [[_num_table(v) for v in r] for r in t.rows]
        widths = [max(len(row[j]) for row in cells) for j in range(len(t.columns))]
        out.append(t.title)
        for k, row in enumerate(cells):
            out.append("  ".join(c.rjust(wd) if k else c.ljust(wd) for c, wd in zip(row, widths)))
            if k == 0:
                out.append("  ".join("-" * wd for wd in widths))
        for key, val in t.notes.items():
            out.append(f"{key}: {_num_table(val)}")
        out.append("")
    return "\n".join(out)


# -- commands --------------------------------------------------------------


def cmd_optimize(args) -> tuple[list[Table], int]:
    p = load_params(args.params)
    q_star, ac_qp = an.optimal_qp(p)
    t_star, ac_tp = an.optimal_tp(p)
    m_star, ac_irp = an.optimal_irp(p)
    disc = discriminant(p)
    t = Table("optimal policies", ["policy", "parameter", "value", "ac"])
    t.add("QP", "Q*", q_star, ac_qp)
    t.add("TP", "T*", t_star, ac_tp)
    t.add("IRP", "M*", m_star, ac_irp)
    t.notes["q_bar"] = an.q_bar(p)
    t.notes["discriminant"] = disc.value
    t.notes["discriminant_sign"] = disc.sign.name
    t.notes["qp_irp_gap"] = an.qp_irp_gap(p)
    try:
        best = an.optimal_qtp(p)
        t.notes["qtp_choice"] = best.which
        t.notes["qtp_q"], t.notes["qtp_t"], t.notes["qtp_ac"] = best.q, best.t, best.ac
    except DegenerateDiscriminant as exc:
        t.notes["qtp_choice"] = f"undetermined ({exc})"
    return [t], 0


def _policy_from_args(args):
    kind = (args.policy or "").lower()
    need = {"qp": ("Q",), "tp": ("T",), "qtp": ("Q", "T"), "irp": ("M",), "irhp": ("M", "T")}
    if kind not in need:
        raise NonPositiveParameter(f"--policy must be one of {', '.join(need)}")
    vals = {}
    for name in need[kind]:
        v = getattr(args, name)
        if v is None:
            raise NonPositiveParameter(f"--policy {kind} needs --{name}")
        vals[name] = v
    if kind == "qp":
        return QP(vals["Q"])
    if kind == "tp":
        return TP(vals["T"])
    if kind == "qtp":
        return QTP(vals["Q"], vals["T"])
    if kind == "irp":
        return IRP(vals["M"])
    return IRHP(vals["M"], vals["T"])


def _report_table(title, rep, policy):
    t = Table(title, ["quantity", "value"])
    t.add("ac", rep.ac)
    t.add("awdr", rep.awdr)
    t.add("cycle_mean", rep.cycle_mean)
    for i, w in enumerate(rep.per_item_waiting):
        t.add(f"waiting{i + 1}", float(w))
    t.notes["policy"] = policy_name(policy)
    for k, v in policy_args(policy).items():
        t.notes[k] = v
    t.notes["provenance"] = rep.provenance
    return t


def cmd_evaluate(args):
    p = load_params(args.params)
    pol = _policy_from_args(args)
    return [_report_table("policy evaluation", an.evaluate(p, pol), pol)], 0


def resolve_seed(args) -> int:
    if getattr(args, "entropy", False):
        return secrets.randbits(63)
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise NonPositiveParameter(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def cmd_simulate(args):
    p = load_params(args.params)
    pol = _policy_from_args(args)
    cfg = SimConfig(args.cycles, args.dt, resolve_seed(args), not args.no_bridge, args.workers)
    mc = estimate_report(p, pol, cfg)
    exact = compare_with_closed_form(p, pol, mc)
    t = Table("monte carlo estimate", ["quantity", "estimate", "std_err", "ci_low", "ci_high", "closed_form", "z"])
    ests = [("ac", mc.ac), ("awdr", mc.awdr), ("cycle_mean", mc.cycle_mean)]
    ests += [(f"waiting{i + 1}", e) for i, e in enumerate(mc.waiting)]
    for name, e in ests:
        ref, z = exact.get(name, (None, None)) if exact else (None, None)
        t.add(name, e.mean, e.std_err, e.ci_low, e.ci_high, ref, z)
    t.notes["policy"] = policy_name(pol)
    for k, v in policy_args(pol).items():
        t.notes[k] = v
    t.notes["cycles"] = cfg.n_cycles
    t.notes["seed"] = cfg.seed
    t.notes["dt"] = "default" if cfg.dt is None else cfg.dt
    t.notes["bridge_correction"] = cfg.bridge_correction
    if args.samples:
        with open(args.samples, "w", newline="") as fh:
            mc.samples.to_csv(fh)
    return [t], 0


def compare_table(p, frequency, caps=(1.5, 2.0, 4.0)) -> Table:
    if not frequency > 0:
        raise NonPositiveParameter(f"--frequency must be > 0, got {frequency}")
    big_d, mu = p.total_drift, p.w_drift
    t = Table(f"matched clearing frequency E[tau] = {frequency:.6g}", ["policy", "parameters", "awdr", "ac"])
    irp = an.evaluate(p, IRP(frequency * mu))
    tp = an.evaluate(p, TP(frequency))
    t.add("IRP", f"M={frequency * mu:.6g}", irp.awdr, irp.ac)
    t.add("TP", f"T={frequency:.6g}", tp.awdr, tp.ac)
    qp = an.evaluate(p, QP(frequency * big_d))
    t.add("QP", f"Q={frequency * big_d:.6g}", qp.awdr, qp.ac)
    qtp = an.evaluate(p, QTP(0.5 * frequency * big_d, 0.5 * frequency))
    t.add("QTP", f"Q={0.5 * frequency * big_d:.6g},T={0.5 * frequency:.6g}", qtp.awdr, qtp.ac)
    p1d = DriftedBM1D.from_params(p)
    irhp_ok = True
    for f in caps:
        cap = f * frequency
        m_h = match_frequency(p1d, frequency, cap)
        rep = irhp_report(p, m_h, cap)
        t.add("IRHP", f"M={m_h:.6g},T={cap:.6g}", rep.awdr, rep.ac)
        irhp_ok &= rep.awdr < tp.awdr and rep.ac < tp.ac
    awdrs = [r[2] for r in t.rows]
    t.notes["irp_minimal_awdr"] = bool(min(awdrs[1:]) >= irp.awdr - 1e-10 * max(1.0, irp.awdr))
    t.notes["irhp_beats_tp"] = bool(irhp_ok)
    return t


def cmd_compare(args):
    p = load_params(args.params)
    if args.frequency is None:
        raise NonPositiveParameter("compare needs --frequency")
    t = compare_table(p, args.frequency)
    ok = t.notes["irp_minimal_awdr"] and t.notes["irhp_beats_tp"]
    args.failed = [k for k in ("irp_minimal_awdr", "irhp_beats_tp") if not t.notes[k]]
    return [t], 0 if ok else 1


def cmd_verify(args):
    p = load_params(args.params)
    checks = vf.run_all(p, frequency=args.frequency, seed=resolve_seed(args), n_cycles=args.cycles)
    t = Table("theorem checks", ["check", "status", "witnesses", "failures", "runtime_ms"])
    for c in checks:
        t.add(c.name, "pass" if c.status else "fail", len(c.witnesses), len(c.failures), c.runtime_ms)
    failed = [c.name for c in checks if not c.status]
    args.failed = failed
    t.notes["failed"] = ", ".join(failed) if failed else "none"
    if args.format == "json":
        doc = [c.to_dict() for c in checks]
        return doc, (1 if failed else 0)
    return [t], (1 if failed else 0)


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clearing-lab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--params", required=True, help="JSON parameter file")
        sp.add_argument("--format", choices=("table", "csv", "json"), default="table")
        sp.add_argument("--out", help="write output here instead of stdout")

    def policy(sp):
        sp.add_argument("--policy", choices=("qp", "tp", "qtp", "irp", "irhp"), required=True)
        sp.add_argument("--Q", type=float)
        sp.add_argument("--T", type=float)
        sp.add_argument("--M", type=float)

    def seeded(sp):
        sp.add_argument("--seed", type=int, help=f"default: ${SEED_ENV} or {DEFAULT_SEED}")
        sp.add_argument("--entropy", action="store_true", help="draw a fresh random seed")

    common(sub.add_parser("optimize", help="optimal QP/TP/IRP and the (Q, T) selection"))
    sp = sub.add_parser("evaluate", help="closed-form (or quadrature) report for one policy")
    common(sp)
    policy(sp)
    sp = sub.add_parser("simulate", help="Monte Carlo estimate for one policy")
    common(sp)
    policy(sp)
    seeded(sp)
    sp.add_argument("--cycles", type=int, default=100_000)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-bridge", action="store_true", help="disable the crossing correction")
    sp.add_argument("--samples", help="dump per-cycle samples as CSV")
    sp = sub.add_parser("compare", help="policies matched to one mean cycle length")
    common(sp)
    sp.add_argument("--frequency", type=float)
    sp = sub.add_parser("verify", help="run the theorem checks; exit 1 on any failure")
    common(sp)
    seeded(sp)
    sp.add_argument("--frequency", type=float)
    sp.add_argument("--cycles", type=int, default=20_000)
    return ap


COMMANDS = {
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result, code = COMMANDS[args.command](args)
    except ClearingError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if result and isinstance(result[0], Table):
        text = render(result, args.format)
    else:
        text = json.dumps(result, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if code and getattr(args, "failed", None):
        print("failed checks: " + ", ".join(args.failed), file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
