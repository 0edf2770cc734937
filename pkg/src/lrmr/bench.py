"""Seeded recovery experiments: single runs, factorial sweeps, CSV and SVG output.

A sweep is the full factorial ``m_values x rank_values x sigma_values x
solvers x trials``. Randomness is keyed by cell coordinates, never by position
in the sweep, so deleting or reordering cells leaves every other record
unchanged and the worker count has no effect on the output:

* planted matrix: ``derive_seed(master, 1, n1, n2, rank, trial)``
* operator:       ``derive_seed(master, 2, m, trial)``
* noise:          ``derive_seed(master, 3, m, trial)``, scaled by ``sigma``

Within a trial the same matrix, operator and unit noise vector are reused
across the sigma values and both solvers (common random numbers), which keeps
error-versus-sigma curves smooth.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, dataclass, field, asdict, fields

import numpy as np

from . import matcore
from . import rng as _rng
from .analysis import ideal_oracle_risk
from .measops import make_ensemble
from .solvers import (RecoveryResult, SolverConfig, default_regularization,
                      solve_dantzig, solve_lasso)

CSV_COLUMNS = ("trial", "n1", "n2", "m", "rank", "sigma", "solver", "err_fro_sq",
               "ideal_risk", "minimax_ref", "ratio_ideal", "ratio_minimax", "dual_norm",
               "iterations", "converged", "wall_ms")
_INT_COLUMNS = {"trial", "n1", "n2", "m", "rank", "iterations"}
SOLVERS = ("dantzig", "lasso")


# -- specs ----------------------------------------------------------------------------

def spectrum_values(rule, r: int, scale: float = 1.0) -> np.ndarray:
    """Singular values for a planted rank-r matrix.

    ``rule`` is ``"flat"``, ``"geometric:<ratio>"`` (``scale * ratio^(i-1)``)
    or an explicit list of length r (used as is).
    """
    if isinstance(rule, (list, tuple)):
        vals = np.asarray(rule, dtype=np.float64)
        if vals.shape != (r,):
            raise ValueError(f"explicit spectrum needs {r} values, got {len(vals)}")
        return vals
    if rule == "flat":
        return np.full(r, float(scale))
    if isinstance(rule, str) and rule.startswith("geometric:"):
        ratio = float(rule.split(":", 1)[1])
        if not 0 < ratio <= 1:
            raise ValueError("geometric ratio must lie in (0, 1]")
        return scale * ratio ** np.arange(r)
    raise ValueError(f"unknown spectrum rule {rule!r}")


@dataclass
class ExperimentSpec:
    name: str
    n1: int
    n2: int
    m_values: list
    rank_values: list
    sigma_values: list
    op_kind: str = "gaussian"
    spectrum_rule: object = "flat"
    spectrum_scale: float = 1.0
    solver: str = "both"
    reg_rule: object = "auto"
    trials_per_cell: int = 1
    master_seed: int = 0
    max_iters: int = 5000
    rel_tol: float = 1e-7

    def __post_init__(self):
        for name in ("m_values", "rank_values", "sigma_values"):
            seq = list(getattr(self, name))
            if not seq:
                raise ValueError(f"{name} must be nonempty")
            setattr(self, name, seq)
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if self.solver not in SOLVERS + ("both",):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.reg_rule != "auto" and not float(self.reg_rule) > 0:
            raise ValueError("reg_rule must be 'auto' or a positive number")
        if any(s < 0 for s in self.sigma_values):
            raise ValueError("sigma values must be nonnegative")

    @property
    def solvers(self) -> tuple:
        return SOLVERS if self.solver == "both" else (self.solver,)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        missing = {f.name for f in fields(cls) if f.default is MISSING} - set(d)
        if missing:
            raise ValueError(f"missing spec fields: {sorted(missing)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- single runs ---------------------------------------------------------------------

def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else float("nan")


def make_instance(n1, n2, m, rank, sigma, master_seed, trial, op_kind="gaussian",
                  spectrum="flat", spectrum_scale=1.0):
    """Planted matrix, operator and noisy measurements for one trial."""
    spec = spectrum_values(spectrum, rank, spectrum_scale)
    m_true = matcore.random_low_rank(
        n1, n2, rank, spec, _rng.derive_seed(master_seed, 1, n1, n2, rank, trial))
    op = make_ensemble(op_kind, n1, n2, m, _rng.derive_seed(master_seed, 2, m, trial))
    noise = _rng.normals(_rng.stream(_rng.derive_seed(master_seed, 3, m, trial)), m)
    y = op.apply(m_true) + sigma * noise
    return m_true, op, y


def run_recover(n1: int, n2: int, m: int, rank: int, sigma: float, solver: str,
                seed: int, trial: int = 0, op_kind: str = "gaussian", spectrum="flat",
                spectrum_scale: float = 1.0, reg="auto",
                cfg: SolverConfig | None = None) -> tuple[RecoveryResult | None, dict]:
    """Generate one instance, solve it and build its report record.

    ``reg="auto"`` uses :func:`default_regularization`. Solver exceptions are
    caught: the record then has ``converged=False``, NaN error fields and an
    ``error`` message, and the returned result is None.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    n = max(n1, n2)
    record = {"trial": trial, "n1": n1, "n2": n2, "m": m, "rank": rank,
              "sigma": float(sigma), "solver": solver}
    t0 = time.perf_counter()
    result = None
    try:
        m_true, op, y = make_instance(n1, n2, m, rank, sigma, seed, trial, op_kind,
                                      spectrum, spectrum_scale)
        lam = default_regularization(n1, n2, sigma, solver) if reg == "auto" else float(reg)
        solve = solve_dantzig if solver == "dantzig" else solve_lasso
        result = solve(op, y, lam, cfg)
        err = float(np.linalg.norm(result.estimate - m_true) ** 2)
        ideal = ideal_oracle_risk(m_true, sigma, n)
        ref = float(n * rank * sigma * sigma)
        record.update(err_fro_sq=err, ideal_risk=ideal, minimax_ref=ref,
                      ratio_ideal=_ratio(err, ideal), ratio_minimax=_ratio(err, ref),
                      dual_norm=result.dual_norm, iterations=result.iterations,
                      converged=bool(result.converged), wall_ms=result.wall_ms,
                      reg=lam, fro_sq_true=float(np.linalg.norm(m_true) ** 2))
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        nan = float("nan")
        record.update(err_fro_sq=nan, ideal_risk=nan, minimax_ref=nan, ratio_ideal=nan,
                      ratio_minimax=nan, dual_norm=nan, iterations=0, converged=False,
                      wall_ms=1e3 * (time.perf_counter() - t0), error=repr(exc))
    return result, record


# -- sweeps ------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    spec: ExperimentSpec | None
    records: list = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(r["converged"] for r in self.records)

    def summary(self) -> list:
        """Median and max ratios per (m, rank, sigma, solver) cell."""
        cells: dict = {}
        for r in self.records:
            cells.setdefault((r["m"], r["rank"], r["sigma"], r["solver"]), []).append(r)
        out = []
        for (m, rank, sigma, solver), recs in cells.items():
            row = {"m": m, "rank": rank, "sigma": sigma, "solver": solver,
                   "trials": len(recs), "converged": sum(bool(r["converged"]) for r in recs)}
            for key in ("ratio_minimax", "ratio_ideal", "err_fro_sq"):
                vals = np.array([r[key] for r in recs], dtype=float)
                ok = vals[np.isfinite(vals)]
                row[f"median_{key}"] = float(np.median(ok)) if ok.size else float("nan")
                row[f"max_{key}"] = float(np.max(ok)) if ok.size else float("nan")
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict() if self.spec else None,
                "records": self.records, "summary": self.summary(),
                "all_converged": self.all_converged}


def _cell_tasks(spec: ExperimentSpec) -> list:
    return [(m, r, s, solver, t)
            for m in spec.m_values for r in spec.rank_values for s in spec.sigma_values
            for solver in spec.solvers for t in range(spec.trials_per_cell)]


def _run_task(spec_dict: dict, task: tuple) -> dict:
    spec = ExperimentSpec.from_dict(spec_dict)
    m, r, sigma, solver, trial = task
    cfg = SolverConfig(max_iters=spec.max_iters, rel_tol=spec.rel_tol)
    _, rec = run_recover(spec.n1, spec.n2, m, r, sigma, solver, spec.master_seed, trial,
                         spec.op_kind, spec.spectrum_rule, spec.spectrum_scale,
                         spec.reg_rule, cfg)
    return rec


def run_sweep(spec: ExperimentSpec, out_dir=None, workers: int = 1,
              progress=None) -> ExperimentReport:
    """Run every cell of ``spec``.

    With ``out_dir`` each record is appended to ``records.jsonl`` as soon as it
    finishes, so an interrupted sweep leaves its completed cells on disk.
    Records in the returned report follow the spec's canonical cell order.
    """
    tasks = _cell_tasks(spec)
    spec_dict = spec.to_dict()
    sink = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        sink = open(os.path.join(out_dir, "records.jsonl"), "w")
    done: dict = {}

    def collect(task, rec):
        done[task] = rec
        if sink is not None:
            sink.write(json.dumps(rec) + "\n")
            sink.flush()
        if progress is not None:
            progress(len(done), len(tasks), rec)

    try:
        if workers <= 1:
            for task in tasks:
                collect(task, _run_task(spec_dict, task))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {task: pool.submit(_run_task, spec_dict, task) for task in tasks}
                for task, fut in futs.items():
                    collect(task, fut.result())
    finally:
        if sink is not None:
            sink.close()
    return ExperimentReport(spec=spec, records=[done[t] for t in tasks])


# -- output ------------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(report: ExperimentReport, path) -> None:
    """Write the fixed 16-column CSV; extra record fields are dropped."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in report.records:
                w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv_records(path) -> list:
    """Parse a CSV written by :func:`emit_csv` back into typed records."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            rec = {}
            for k, v in row.items():
                if k in _INT_COLUMNS:
                    rec[k] = int(v)
                elif k == "solver":
                    rec[k] = v
                elif k == "converged":
                    rec[k] = v == "1"
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out


def write_report_json(report: ExperimentReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, default=float)


# -- SVG ------------------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 640, 420, 60


def _log_span(vals):
    lo, hi = math.floor(math.log10(min(vals))), math.ceil(math.log10(max(vals)))
    return (lo, hi) if hi > lo else (lo - 1, hi + 1)


def emit_svg_plot(report: ExperimentReport, x_axis: str, y_axis: str, group_by: str | None,
                  path) -> None:
    """Log-log plot of the median of ``y_axis`` per ``x_axis`` value, with min/max whiskers.

    One line per distinct ``group_by`` value. Non-positive and non-finite
    values are skipped. The output is byte-for-byte deterministic.
    """
    recs = report.records
    for col in (x_axis, y_axis) + ((group_by,) if group_by else ()):
        if recs and col not in recs[0]:
            raise ValueError(f"unknown column {col!r}")
        if not recs and col not in CSV_COLUMNS:
            raise ValueError(f"unknown column {col!r}")
    groups: dict = {}
    for r in recs:
        x, y = float(r[x_axis]), float(r[y_axis])
        if x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y):
            key = str(r[group_by]) if group_by else y_axis
            groups.setdefault(key, {}).setdefault(x, []).append(y)
    series = {}
    for key in sorted(groups):
        pts = []
        for x in sorted(groups[key]):
            ys = groups[key][x]
            pts.append((x, float(np.median(ys)), min(ys), max(ys)))
        series[key] = pts
    xs = [p[0] for s in series.values() for p in s] or [1.0]
    ys = [v for s in series.values() for p in s for v in p[1:]] or [1.0]
    (x0, x1), (y0, y1) = _log_span(xs), _log_span(ys)

    def px(x):
        return _PAD + (math.log10(x) - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def py(y):
        return _H - _PAD - (math.log10(y) - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" '
           'fill="none" stroke="black"/>']
    for e in range(x0, x1 + 1):
        x = px(10.0 ** e)
        out.append(f'<line x1="{x:.2f}" y1="{_H - _PAD}" x2="{x:.2f}" y2="{_H - _PAD + 5}" '
                   'stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{_H - _PAD + 18}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        y = py(10.0 ** e)
        out.append(f'<line x1="{_PAD - 5}" y1="{y:.2f}" x2="{_PAD}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{_PAD - 8}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    out.append(f'<text x="{_W / 2:.0f}" y="{_H - 15}" text-anchor="middle">{x_axis}</text>')
    out.append(f'<text x="15" y="{_H / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 15 {_H / 2:.0f})">{y_axis}</text>')
    for i, (key, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        for x, _, lo, hi in pts:
            out.append(f'<line x1="{px(x):.2f}" y1="{py(lo):.2f}" x2="{px(x):.2f}" '
                       f'y2="{py(hi):.2f}" stroke="{color}" stroke-width="1"/>')
        if len(pts) > 1:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y, _, _ in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                       'stroke-width="2"/>')
        for x, y, _, _ in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        ly = _PAD + 15 + 15 * i
        out.append(f'<text x="{_W - _PAD - 8}" y="{ly}" text-anchor="end" '
                   f'fill="{color}">{key}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
