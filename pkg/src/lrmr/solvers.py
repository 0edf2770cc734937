"""Nuclear-norm recovery solvers.

Three convex programs over ``X in R^{n1 x n2}``:

* matrix Lasso ``min 1/2 ||A(X) - y||^2 + mu ||X||_*`` by accelerated proximal
  gradient (FISTA) with a monotone restart; the prox is singular value
  thresholding.
* matrix Dantzig selector ``min ||X||_*  s.t.  ||A*(y - A(X))|| <= lam`` by
  linearized ADMM on the split ``A*A(X) + W = A*(y)``, ``||W|| <= lam``. The
  W-update is the projection onto the operator-norm ball (clip singular values
  at ``lam``). The same program is an SDP::

      min (tr W1 + tr W2)/2  s.t.  [[W1, X], [X^T, W2]] >= 0,
                                   [[lam I, A*(r)], [A*(r)^T, lam I]] >= 0,
                                   r = y - A(X)

  which is what the small-instance oracles in the test suite certify against;
  no interior-point method is used here.
* equality-constrained ``min ||X||_*  s.t.  A(X) = x`` via a Lasso homotopy in
  ``mu`` followed by a least-norm correction onto the affine constraint.

With ``SolverConfig.continuation`` on, the regularization parameter starts at
half of ``||A*(y)||`` and is halved stage by stage down to its target, each
stage warm-started from the previous one. Intermediate stages run to a loose
tolerance; only the final stage is held to ``rel_tol``.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse.linalg as spla

from . import matcore
from .matcore import svd
from .measops import MeasOp, op_spectral_norm, to_dense
from .errors import NumericalError, ResourceLimitError

REG_FLOOR = 1e-9
DANTZIG_C = 8.0
LASSO_C = 16.0
FEAS_RTOL = 1e-3          # relative slack allowed on ||A*(y - A X)|| <= lam
_LASSO_STAGE_TOL = 1e-6   # tolerance for intermediate homotopy stages
_ADMM_STAGE_TOL = 1e-4
_EQ_MU_FINAL = 1e-7       # final mu of the equality homotopy, relative to ||A*(x)||
_DENSE_LSTSQ_CAP = 4 * 10**6


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 5000
    rel_tol: float = 1e-7
    step_scale: float = 0.99
    admm_rho: float = 1.0
    continuation: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.rel_tol > 0 or not self.admm_rho > 0:
            raise ValueError("rel_tol and admm_rho must be positive")
        if not 0 < self.step_scale <= 1:
            raise ValueError("step_scale must lie in (0, 1]")


@dataclass
class RecoveryResult:
    estimate: np.ndarray
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)
    dual_norm: float = float("nan")       # ||A*(y - A(X))||
    residual_norm: float = float("nan")   # ||y - A(X)||_2
    wall_ms: float = 0.0
    solver: str = ""
    reg: float = float("nan")
    step_converged: bool = False
    slack_converged: bool = True
    stages: int = 1

    def __post_init__(self):
        for name in ("converged", "step_converged", "slack_converged"):
            setattr(self, name, bool(getattr(self, name)))
        for name in ("dual_norm", "residual_norm", "wall_ms", "reg"):
            setattr(self, name, float(getattr(self, name)))
        self.iterations = int(self.iterations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("estimate")
        d.pop("objective_trace")
        return d

    def to_json(self, path) -> dict:
        """Write ``{estimate: matrix-manifest, iterations, converged, ...}``."""
        path = os.fspath(path)
        est_path = os.path.splitext(path)[0] + ".estimate.json"
        manifest = matcore.write_manifest(self.estimate, est_path)
        manifest["path"] = os.path.relpath(
            os.path.join(os.path.dirname(os.path.abspath(est_path)), manifest["path"]),
            os.path.dirname(os.path.abspath(path)))
        record = {"estimate": manifest, **self.to_dict()}
        with open(path, "w") as fh:
            json.dump(record, fh, indent=2)
        return record


def default_regularization(n1: int, n2: int, sigma: float, solver: str) -> float:
    """``C * sqrt(max(n1, n2)) * sigma`` with C = 8 (Dantzig) or 16 (Lasso).

    The Lasso constant is twice the Dantzig one (the Lasso needs
    ``||A*(z)|| <= mu/2``). The value is floored at :data:`REG_FLOOR`.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    c = {"dantzig": DANTZIG_C, "lasso": LASSO_C}.get(solver)
    if c is None:
        raise ValueError(f"unknown solver {solver!r}")
    return max(c * np.sqrt(max(n1, n2)) * sigma, REG_FLOOR)


# -- shared pieces -------------------------------------------------------------

class _Quadratic:
    """``1/2 ||A(X) - y||^2`` with cheap images.

    An iterate's *image* is ``A(X)`` (an m-vector) or, when ``A`` has a cached
    Gram matrix, ``A*A(X)`` flattened. Images are linear, so extrapolated
    points get their image by the same linear combination.
    """

    def __init__(self, op: MeasOp, y: np.ndarray):
        self.op, self.y = op, y
        self.g = op.gram()
        self.aty = op.adjoint(y)
        self.aty_v = matcore.vec(self.aty)
        self.yy = float(y @ y)

    def image(self, x: np.ndarray) -> np.ndarray:
        v = matcore.vec(x)
        if self.g is not None:
            return self.g @ v
        return self.op.apply_cols(v[:, None])[:, 0]

    def loss(self, x: np.ndarray, img: np.ndarray) -> float:
        if self.g is not None:
            v = matcore.vec(x)
            return max(0.5 * (v @ img) - v @ self.aty_v + 0.5 * self.yy, 0.0)
        r = img - self.y
        return 0.5 * float(r @ r)

    def grad(self, img: np.ndarray) -> np.ndarray:
        op = self.op
        if self.g is not None:
            return matcore.unvec(img - self.aty_v, op.n1, op.n2)
        return op.adjoint(img - self.y)


def _check_inputs(op: MeasOp, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise ValueError(f"y must have length {op.m}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains NaN or Inf")
    return y


def _lipschitz(op: MeasOp) -> float:
    try:
        a = op_spectral_norm(op, tol=1e-6)
    except NumericalError as exc:
        if exc.best is None:
            raise
        a = 1.01 * exc.best
    return a * a


def _schedule(target: float, start: float, continuation: bool) -> list[float]:
    vals = []
    if continuation:
        lvl = 0.5 * start
        while lvl > target:
            vals.append(lvl)
            lvl *= 0.5
    vals.append(target)
    return vals


def _diagnostics(op: MeasOp, y: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    r = y - op.apply(x)
    return matcore.norm(op.adjoint(r), "operator"), float(np.linalg.norm(r))


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old)) / max(1.0, float(np.linalg.norm(old)))


# -- matrix Lasso --------------------------------------------------------------

def _fista(q: _Quadratic, mu: float, step: float, x: np.ndarray, tol: float,
           max_iters: int, trace: list | None):
    """Monotone FISTA from ``x``. Returns (x, iterations, step_converged)."""
    img_x = q.image(x)
    f_x = q.loss(x, img_x) + mu * matcore.norm(x, "nuclear")
    yk, img_y = x, img_x
    t = 1.0
    restarted = False
    for it in range(1, max_iters + 1):
        f = svd(yk - step * q.grad(img_y))
        s = np.maximum(f.s - step * mu, 0.0)
        z = f.compose(s)
        img_z = q.image(z)
        f_z = q.loss(z, img_z) + mu * float(s.sum())
        if f_z > f_x:
            if restarted:
                # a plain prox-gradient step from x failed to descend: stationary
                return x, it, True
            yk, img_y, t, restarted = x, img_x, 1.0, True
            continue
        restarted = False
        gap = _rel_change(z, yk)
        change = _rel_change(z, x)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        yk = z + beta * (z - x)
        img_y = img_z + beta * (img_z - img_x)
        x, img_x, f_x, t = z, img_z, f_z, t_next
        if trace is not None:
            trace.append(f_z)
        if change < tol and gap < tol:
            return x, it, True
    return x, max_iters, False


def solve_lasso(op: MeasOp, y, mu: float, cfg: SolverConfig | None = None,
                x0=None) -> RecoveryResult:
    """Minimize ``1/2 ||A(X) - y||^2 + mu ||X||_*``.

    ``objective_trace`` holds the objective after every accepted step of the
    final (target ``mu``) stage and is nonincreasing.
    """
    cfg = cfg or SolverConfig()
    if not mu > 0:
        raise ValueError("mu must be positive")
    y = _check_inputs(op, y)
    t0 = time.perf_counter()
    q = _Quadratic(op, y)
    step = cfg.step_scale / max(_lipschitz(op), 1e-300)
    x = np.zeros((op.n1, op.n2)) if x0 is None else matcore.as_mat(x0).copy()
    aty_norm = matcore.norm(q.aty, "operator")
    mus = _schedule(mu, aty_norm, cfg.continuation)
    total = 0
    trace: list = []
    ok = False
    for k, mu_k in enumerate(mus):
        final = k == len(mus) - 1
        if final:
            x, it, ok = _fista(q, mu_k, step, x, cfg.rel_tol, cfg.max_iters, trace)
        else:
            x, it, _ = _fista(q, mu_k, step, x, max(_LASSO_STAGE_TOL, cfg.rel_tol),
                              max(50, cfg.max_iters // 10), None)
        total += it
    dual, res = _diagnostics(op, y, x)
    return RecoveryResult(
        estimate=x, iterations=total, converged=ok, objective_trace=trace,
        dual_norm=dual, residual_norm=res, wall_ms=1e3 * (time.perf_counter() - t0),
        solver="lasso", reg=float(mu), step_converged=ok, slack_converged=True,
        stages=len(mus))


# -- matrix Dantzig selector -------------------------------------------------------

def _ladmm(op: MeasOp, b: np.ndarray, lam: float, state: dict, l2: float,
           scale: float, tol: float, slack_tol: float, max_iters: int):
    """Linearized ADMM for ``min ||X||_*  s.t.  A*A(X) + W = b, ||W|| <= lam``.

    ``state`` holds X, its image A*A(X), W, the scaled dual u and rho, and is
    updated in place. Returns (iterations, step_ok, slack_ok).
    """
    x, bx, w, u, rho = state["x"], state["bx"], state["w"], state["u"], state["rho"]
    b_norm = max(1.0, float(np.linalg.norm(b)))
    step_ok = slack_ok = False
    it = 0
    for it in range(1, max_iters + 1):
        g = op.normal(bx + w - b + u)
        x_new = matcore.svt(x - (scale / l2) * g, scale / (rho * l2))
        bx_new = op.normal(x_new)
        w_new = matcore.clip_singular_values(b - bx_new - u, lam)
        prim = bx_new + w_new - b
        u = u + prim
        change = _rel_change(x_new, x)
        if it % 10 == 0:
            p = float(np.linalg.norm(prim))
            d = rho * float(np.linalg.norm(op.normal(w_new - w)))
            if p > 10.0 * d:
                rho *= 2.0
                u = u / 2.0
            elif d > 10.0 * p:
                rho /= 2.0
                u = u * 2.0
        x, bx, w = x_new, bx_new, w_new
        step_ok = change < tol and float(np.linalg.norm(prim)) < tol * b_norm
        if step_ok:
            slack_ok = matcore.norm(b - bx, "operator") <= lam + slack_tol
            if slack_ok:
                break
    state.update(x=x, bx=bx, w=w, u=u, rho=rho)
    return it, step_ok, slack_ok


def solve_dantzig(op: MeasOp, y, lam: float, cfg: SolverConfig | None = None) -> RecoveryResult:
    """Minimize ``||X||_*`` subject to ``||A*(y - A(X))|| <= lam``.

    Convergence requires both a small relative iterate change and the
    constraint met to within ``max(FEAS_RTOL * lam, rel_tol * ||A*(y)||)``;
    the two conditions are reported as ``step_converged`` and
    ``slack_converged``.
    """
    cfg = cfg or SolverConfig()
    if not lam > 0:
        raise ValueError("lambda must be positive")
    y = _check_inputs(op, y)
    t0 = time.perf_counter()
    b = op.adjoint(y)
    b_op = matcore.norm(b, "operator")
    zero = np.zeros((op.n1, op.n2))
    if b_op <= lam:
        # X = 0 is feasible and has the smallest possible nuclear norm
        return RecoveryResult(
            estimate=zero, iterations=0, converged=True, objective_trace=[0.0],
            dual_norm=b_op, residual_norm=float(np.linalg.norm(y)),
            wall_ms=1e3 * (time.perf_counter() - t0), solver="dantzig", reg=float(lam),
            step_converged=True, slack_converged=True, stages=0)
    l2 = _lipschitz(op) ** 2
    state = {"x": zero, "bx": zero.copy(), "w": zero.copy(), "u": zero.copy(),
             "rho": cfg.admm_rho}
    slack_tol = max(FEAS_RTOL * lam, cfg.rel_tol * b_op)
    lams = _schedule(lam, b_op, cfg.continuation)
    total = 0
    step_ok = slack_ok = False
    trace = []
    for k, lam_k in enumerate(lams):
        final = k == len(lams) - 1
        if final:
            it, step_ok, slack_ok = _ladmm(op, b, lam_k, state, l2, cfg.step_scale,
                                           cfg.rel_tol, slack_tol, cfg.max_iters)
        else:
            it, _, _ = _ladmm(op, b, lam_k, state, l2, cfg.step_scale,
                              max(_ADMM_STAGE_TOL, cfg.rel_tol), np.inf,
                              max(50, cfg.max_iters // 10))
        total += it
        trace.append(matcore.norm(state["x"], "nuclear"))
    x = state["x"]
    dual, res = _diagnostics(op, y, x)
    return RecoveryResult(
        estimate=x, iterations=total, converged=step_ok and slack_ok, objective_trace=trace,
        dual_norm=dual, residual_norm=res, wall_ms=1e3 * (time.perf_counter() - t0),
        solver="dantzig", reg=float(lam), step_converged=step_ok,
        slack_converged=slack_ok, stages=len(lams))


# -- equality-constrained nuclear-norm minimization ------------------------------------

def _least_norm_correction(op: MeasOp, r: np.ndarray) -> np.ndarray:
    """Minimum-Frobenius-norm D with A(D) = r (least squares if infeasible)."""
    if op.kind == "identity":
        return matcore.unvec(r, op.n1, op.n2)
    if op.m * op.size <= _DENSE_LSTSQ_CAP:
        d = np.linalg.lstsq(to_dense(op), r, rcond=None)[0]
    else:
        lin = spla.LinearOperator(
            (op.m, op.size),
            matvec=lambda v: op.apply_cols(np.reshape(v, (-1, 1)))[:, 0],
            rmatvec=lambda q: op.adjoint_cols(np.reshape(q, (-1, 1)))[:, 0])
        d = spla.lsqr(lin, r, atol=1e-14, btol=1e-14, iter_lim=10 * op.m)[0]
    return matcore.unvec(d, op.n1, op.n2)


def solve_nuclear_eq(op: MeasOp, x, cfg: SolverConfig | None = None) -> RecoveryResult:
    """Minimize ``||X||_*`` subject to ``A(X) = x``.

    Runs the Lasso homotopy down to ``mu = 1e-7 * ||A*(x)||`` and then adds
    the least-norm correction that makes ``A(X) = x`` hold to rounding.
    Converged means the final Lasso stage converged and
    ``||A(X) - x|| <= 1e-6 ||x||``.
    """
    cfg = cfg or SolverConfig()
    x = _check_inputs(op, x)
    t0 = time.perf_counter()
    zero = np.zeros((op.n1, op.n2))
    x_norm = float(np.linalg.norm(x))
    if x_norm == 0.0:
        return RecoveryResult(
            estimate=zero, iterations=0, converged=True, objective_trace=[0.0],
            dual_norm=0.0, residual_norm=0.0, wall_ms=0.0, solver="nuclear_eq", reg=0.0,
            step_converged=True, slack_converged=True, stages=0)
    if op.kind == "identity":
        est = matcore.unvec(x, op.n1, op.n2)
        return RecoveryResult(
            estimate=est, iterations=0, converged=True,
            objective_trace=[matcore.norm(est, "nuclear")], dual_norm=0.0,
            residual_norm=0.0, wall_ms=1e3 * (time.perf_counter() - t0),
            solver="nuclear_eq", reg=0.0, step_converged=True, slack_converged=True,
            stages=0)
    mu = _EQ_MU_FINAL * matcore.norm(op.adjoint(x), "operator")
    inner = solve_lasso(op, x, mu, cfg)
    est = inner.estimate
    try:
        est = est + _least_norm_correction(op, x - op.apply(est))
    except ResourceLimitError:
        pass
    dual, res = _diagnostics(op, x, est)
    slack_ok = res <= 1e-6 * x_norm
    return RecoveryResult(
        estimate=est, iterations=inner.iterations,
        converged=inner.step_converged and slack_ok,
        objective_trace=[matcore.norm(est, "nuclear")], dual_norm=dual, residual_norm=res,
        wall_ms=1e3 * (time.perf_counter() - t0), solver="nuclear_eq", reg=mu,
        step_converged=inner.step_converged, slack_converged=slack_ok, stages=inner.stages)


# -- diagnostics ---------------------------------------------------------------------

@dataclass
class OptimalityReport:
    dual_norm: float
    residual_norm: float
    threshold: float
    slack: float          # threshold - dual_norm; >= 0 means feasible
    alignment: float      # <U V^T, A*(y - A(X))> / threshold
    rank: int
    kkt_ok: bool


def check_optimality(op: MeasOp, y, result: RecoveryResult, threshold: float,
                     rtol: float = FEAS_RTOL) -> OptimalityReport:
    """Subgradient diagnostics for a solver output.

    For a Lasso minimizer ``A*(y - A(X)) = mu (U V^T + W)`` with ``||W|| <= 1``
    and ``W`` orthogonal to the singular spaces of ``X``, so the dual norm is
    at most ``mu`` and the alignment equals ``rank(X)``. For the Dantzig
    selector only the feasibility slack is meaningful.
    """
    y = _check_inputs(op, y)
    x = result.estimate
    z = op.adjoint(y - op.apply(x))
    dual = matcore.norm(z, "operator")
    f = svd(x)
    tol = max(1e-8 * f.s[0], 1e-12) if f.s[0] > 0 else np.inf
    rank = int(np.sum(f.s > tol))
    uvt = f.u[:, :rank] @ f.v[:, :rank].T
    align = matcore.inner(uvt, z) / threshold if threshold > 0 else float("nan")
    return OptimalityReport(
        dual_norm=dual, residual_norm=float(np.linalg.norm(y - op.apply(x))),
        threshold=float(threshold), slack=float(threshold - dual), alignment=float(align),
        rank=rank, kkt_ok=bool(dual <= threshold * (1.0 + rtol)))
