"""Command-line entry point: ``lrmr <subcommand> [--flags]``.

Every subcommand prints one JSON document to stdout that echoes its flags
under ``"args"``. Exit status is 0 on success, 2 when a solve or sweep cell did
not converge, and 1 on bad input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, bench, matcore
from .measops import make_ensemble
from .solvers import SolverConfig


def _master_seed(value: int) -> int:
    env = os.environ.get("LRMR_SEED")
    return int(env) if env not in (None, "") else value


def _reg(value: str):
    return value if value == "auto" else float(value)


def _spectrum(value: str):
    if value.startswith("["):
        return [float(v) for v in json.loads(value)]
    return value


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")


def cmd_recover(ns) -> int:
    cfg = SolverConfig(max_iters=ns.max_iters, rel_tol=ns.rel_tol)
    result, rec = bench.run_recover(
        ns.n1, ns.n2, ns.m, ns.rank, ns.sigma, ns.solver, _master_seed(ns.seed), ns.trial,
        ns.op_kind, _spectrum(ns.spectrum), ns.spectrum_scale, _reg(ns.reg), cfg)
    if ns.out and result is not None:
        os.makedirs(os.path.dirname(os.path.abspath(ns.out)), exist_ok=True)
        rec["result"] = result.to_json(ns.out)
    _emit({"args": vars(ns), "record": rec})
    return 0 if rec["converged"] else 2


def cmd_sweep(ns) -> int:
    spec = bench.ExperimentSpec.from_json(ns.spec)
    spec.master_seed = _master_seed(spec.master_seed)
    workers = ns.workers or os.cpu_count() or 1

    def progress(k, total, rec):
        if not ns.quiet:
            print(f"[{k}/{total}] m={rec['m']} r={rec['rank']} sigma={rec['sigma']:g} "
                  f"{rec['solver']} trial={rec['trial']} ratio_minimax={rec['ratio_minimax']:.3g}"
                  f" converged={rec['converged']}", file=sys.stderr)

    report = bench.run_sweep(spec, ns.out, workers, progress)
    os.makedirs(ns.out, exist_ok=True)
    bench.emit_csv(report, os.path.join(ns.out, "results.csv"))
    bench.write_report_json(report, os.path.join(ns.out, "report.json"))
    _emit({"args": vars(ns), "spec": spec.to_dict(), "summary": report.summary(),
           "all_converged": report.all_converged})
    return 0 if report.all_converged else 2


def cmd_rip(ns) -> int:
    op = make_ensemble(ns.kind, ns.n1, ns.n2, ns.m, _master_seed(ns.seed))
    est = analysis.empirical_delta(op, ns.rank, ns.trials, ns.ascent_iters, ns.seed + 1)
    _emit({"args": vars(ns), "rip": est.to_dict()})
    return 0


def cmd_nnq(ns) -> int:
    seed = _master_seed(ns.seed)
    op = make_ensemble(ns.kind, ns.n, ns.n, ns.m, seed)
    est = analysis.nnq_alpha(op, ns.trials, SolverConfig(max_iters=ns.max_iters), seed + 1)
    _emit({"args": vars(ns), "nnq": est.to_dict(),
           "sqrt_n_over_m": float(np.sqrt(ns.n / ns.m))})
    return 0 if not est.excluded else 2


def cmd_oracle(ns) -> int:
    seed = _master_seed(ns.seed)
    m_true, op, y = bench.make_instance(ns.n, ns.n, ns.m, ns.rank, ns.sigma, seed, 0,
                                        ns.op_kind, _spectrum(ns.spectrum), ns.spectrum_scale)
    u = matcore.svd(m_true).u[:, :ns.rank]
    est = analysis.oracle_estimator(op, y, u)
    rep = analysis.oracle_report(m_true, est, ns.sigma, op)
    _emit({"args": vars(ns), "oracle": rep.to_dict(),
           "variance_known_space": analysis.oracle_variance(op, u, ns.sigma),
           "minimax_ref": analysis.minimax_lower_bound(ns.n, ns.rank, ns.sigma, 0.0)})
    return 0


def cmd_concentration(ns) -> int:
    x = np.zeros((ns.n1, ns.n2))
    x[0, 0] = 1.0
    tail = analysis.concentration_check(ns.kind, ns.n1, ns.n2, ns.m, x, ns.t, ns.trials,
                                        _master_seed(ns.seed))
    _emit({"args": vars(ns), "tail": tail, "bound": analysis.concentration_bound(ns.m, ns.t)})
    return 0


def cmd_plot(ns) -> int:
    report = bench.ExperimentReport(spec=None, records=bench.read_csv_records(ns.csv))
    bench.emit_svg_plot(report, ns.x, ns.y, ns.group_by, ns.out)
    _emit({"args": vars(ns), "points": len(report.records)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrmr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recover", help="solve one planted instance")
    r.add_argument("--n1", type=int, default=30)
    r.add_argument("--n2", type=int, default=30)
    r.add_argument("--m", type=int, default=360)
    r.add_argument("--rank", type=int, default=2)
    r.add_argument("--sigma", type=float, default=0.0)
    r.add_argument("--solver", choices=bench.SOLVERS, default="dantzig")
    r.add_argument("--reg", default="auto", help="'auto' or a positive number")
    r.add_argument("--op-kind", default="gaussian", choices=("gaussian", "bernoulli"))
    r.add_argument("--spectrum", default="flat",
                   help="flat, geometric:<ratio> or a JSON list")
    r.add_argument("--spectrum-scale", type=float, default=1.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trial", type=int, default=0)
    r.add_argument("--max-iters", type=int, default=5000)
    r.add_argument("--rel-tol", type=float, default=1e-7)
    r.add_argument("--out", help="write the result JSON (and estimate manifest) here")
    r.set_defaults(func=cmd_recover)

    s = sub.add_parser("sweep", help="run an experiment spec (JSON)")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int, default=0, help="default: available cores")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("rip", help="sampled isometry constant")
    q.add_argument("--kind", default="gaussian")
    q.add_argument("--n1", type=int, default=20)
    q.add_argument("--n2", type=int, default=20)
    q.add_argument("--m", type=int, default=2400)
    q.add_argument("--rank", type=int, default=1)
    q.add_argument("--trials", type=int, default=500)
    q.add_argument("--ascent-iters", type=int, default=50)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_rip)

    a = sub.add_parser("nnq", help="empirical NNQ constant")
    a.add_argument("--kind", default="gaussian")
    a.add_argument("--n", type=int, default=16)
    a.add_argument("--m", type=int, default=64)
    a.add_argument("--trials", type=int, default=20)
    a.add_argument("--max-iters", type=int, default=5000)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_nnq)

    o = sub.add_parser("oracle", help="known-column-space estimator versus the ideal risk")
    o.add_argument("--n", type=int, default=30)
    o.add_argument("--m", type=int, default=360)
    o.add_argument("--rank", type=int, default=2)
    o.add_argument("--sigma", type=float, default=0.01)
    o.add_argument("--op-kind", default="gaussian", choices=("gaussian", "bernoulli"))
    o.add_argument("--spectrum", default="flat")
    o.add_argument("--spectrum-scale", type=float, default=1.0)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("concentration", help="tail of ||A(x)||^2 over fresh operators")
    c.add_argument("--kind", default="gaussian")
    c.add_argument("--n1", type=int, default=8)
    c.add_argument("--n2", type=int, default=8)
    c.add_argument("--m", type=int, default=500)
    c.add_argument("--t", type=float, default=0.5)
    c.add_argument("--trials", type=int, default=2000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_concentration)

    g = sub.add_parser("plot", help="log-log SVG from a sweep CSV")
    g.add_argument("--csv", required=True)
    g.add_argument("--x", default="sigma")
    g.add_argument("--y", default="err_fro_sq")
    g.add_argument("--group-by", default="solver")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    func = ns.func
    del ns.func
    try:
        return func(ns)
    except (ValueError, OSError) as exc:
        print(f"lrmr {ns.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
