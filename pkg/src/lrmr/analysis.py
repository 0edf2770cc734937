"""Empirical checks of the structural properties behind nuclear-norm recovery.

Isometry constants, concentration of ``||A(X)||^2``, covering nets of the
low-rank sphere, the oracle (known column space) estimator and its risk, the
rank-penalized K-functional, minimax formulas and the NNQ constant.

Every Monte Carlo routine seeds trial ``t`` with ``derive_seed(seed, t)``, so a
run with more trials extends a run with fewer: estimates that are maxima or
minima over trials are monotone in the trial count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import matcore
from . import rng as _rng
from .errors import NumericalError, ResourceLimitError
from .measops import MeasOp, make_ensemble, op_spectral_norm
from .solvers import SolverConfig, solve_nuclear_eq

RANK_RTOL = 1e-8
_NET_MAX = 10**8


# -- isometry constants ----------------------------------------------------------

@dataclass
class RipEstimate:
    """Sampled lower estimate of the rank-r isometry constant."""
    rank: int
    trials: int
    delta_hat: float
    refinement_iters: int
    seed: int
    per_trial: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("per_trial")
        return d


def _random_unit_rank_r(n1: int, n2: int, r: int, seed: int) -> np.ndarray:
    gen = _rng.stream(seed, 0xD17A)
    g1 = _rng.normals(gen, n1 * r).reshape((n1, r), order="F")
    g2 = _rng.normals(gen, n2 * r).reshape((n2, r), order="F")
    x = g1 @ g2.T
    return x / np.linalg.norm(x)


def _retract(x: np.ndarray, r: int) -> np.ndarray | None:
    """Nearest unit rank-r matrix, or None when the truncation vanishes."""
    x = matcore.best_rank_r(x, r)
    nrm = np.linalg.norm(x)
    return x / nrm if nrm > 1e-12 else None


def empirical_delta(op: MeasOp, r: int, trials: int, ascent_iters: int = 50,
                    seed: int = 0, batch: int = 64) -> RipEstimate:
    """Max of ``| ||A(X)||^2 - 1 |`` over refined random unit rank-r probes.

    Each probe starts from a normalized product of Gaussian factors and is
    pushed by projected gradient ascent on ``s * (||A(X)||^2 - 1)``, where
    ``s`` is the sign at the start, retracting with a rank-r truncation and
    renormalization after every step. Steps that fail to increase the
    deviation are rejected and the step length halved; accepted steps grow it.

    The result is a lower estimate of the true constant: it is attained by
    explicit probes, but nothing certifies that no worse probe exists.
    """
    n1, n2 = op.n1, op.n2
    if not 1 <= r <= min(n1, n2):
        raise ValueError(f"rank {r} outside [1, {min(n1, n2)}]")
    if trials < 1 or ascent_iters < 0:
        raise ValueError("trials must be positive and ascent_iters nonnegative")
    lip = op_spectral_norm(op, tol=1e-6) ** 2
    eta0 = 0.25 / lip if lip > 0 else 0.0
    devs = []
    # batches always hold `batch` probes (the tail batch runs extra ones and
    # drops them) so BLAS sees identical shapes and a trial's value does not
    # depend on the total trial count
    for lo in range(0, trials, batch):
        idx = range(lo, lo + batch)
        xs = [_random_unit_rank_r(n1, n2, r, _rng.derive_seed(seed, t)) for t in idx]
        v = np.stack([matcore.vec(x) for x in xs], axis=1)
        f = np.sum(op.apply_cols(v) ** 2, axis=0) - 1.0
        sgn = np.where(f >= 0, 1.0, -1.0)
        eta = np.full(len(xs), eta0)
        for _ in range(ascent_iters if eta0 > 0 else 0):
            grad = op.adjoint_cols(op.apply_cols(v))
            cand = v.copy()
            valid = np.zeros(len(xs), dtype=bool)
            for j in range(len(xs)):
                step = matcore.unvec(v[:, j] + 2.0 * sgn[j] * eta[j] * grad[:, j], n1, n2)
                xr = _retract(step, r)
                if xr is not None:
                    cand[:, j] = matcore.vec(xr)
                    valid[j] = True
            fc = np.sum(op.apply_cols(cand) ** 2, axis=0) - 1.0
            better = valid & (sgn * fc > sgn * f)
            v[:, better] = cand[:, better]
            f = np.where(better, fc, f)
            eta = np.where(better, 1.5 * eta, 0.5 * eta)
        devs.extend(np.abs(f).tolist())
    devs = devs[:trials]
    return RipEstimate(rank=r, trials=trials, delta_hat=float(max(devs)),
                       refinement_iters=ascent_iters, seed=seed, per_trial=devs)


def concentration_bound(m: int, t: float) -> float:
    """``2 exp(-(m/2)(t^2/2 - t^3/3))``, the tail bound for ``| ||A(x)||^2 - 1 | > t``."""
    return float(2.0 * np.exp(-0.5 * m * (t * t / 2.0 - t ** 3 / 3.0)))


def concentration_check(kind: str, n1: int, n2: int, m: int, x, t: float,
                        trials: int, seed: int = 0) -> float:
    """Fraction of fresh operators with ``| ||A(x)||^2 - 1 | > t``.

    Operator ``k`` is drawn with seed ``derive_seed(seed, k)``. Compare the
    result against :func:`concentration_bound`.
    """
    x = matcore.as_mat(x)
    if x.shape != (n1, n2):
        raise ValueError(f"x must be {n1}x{n2}")
    if abs(np.linalg.norm(x) - 1.0) > 1e-8:
        raise ValueError("x must have unit Frobenius norm")
    if not 0 < t < 1 or trials < 1:
        raise ValueError("need 0 < t < 1 and trials >= 1")
    hits = 0
    for k in range(trials):
        op = make_ensemble(kind, n1, n2, m, _rng.derive_seed(seed, k))
        ax = op.apply(x)
        hits += abs(float(ax @ ax) - 1.0) > t
    return hits / trials


def parallelogram_check(op: MeasOp, r: int, rp: int, trials: int, seed: int = 0) -> float:
    """Max ``|<A(X), A(X')>|`` over unit probes ``X`` (rank r) orthogonal to ``X'`` (rank rp).

    Orthogonality is built in: the two probes live on disjoint blocks of one
    random orthonormal frame on each side, so both their column and their row
    spaces are orthogonal.
    """
    n1, n2 = op.n1, op.n2
    if r < 1 or rp < 1 or r + rp > min(n1, n2):
        raise ValueError("need r, rp >= 1 and r + rp <= min(n1, n2)")
    worst = 0.0
    for t in range(trials):
        gen = _rng.stream(_rng.derive_seed(seed, t), 0x9A8A)
        u = matcore.random_orthonormal(n1, r + rp, gen)
        v = matcore.random_orthonormal(n2, r + rp, gen)
        s = np.abs(_rng.normals(gen, r + rp)) + 1e-3
        x1 = (u[:, :r] * s[:r]) @ v[:, :r].T
        x2 = (u[:, r:] * s[r:]) @ v[:, r:].T
        x1 /= np.linalg.norm(x1)
        x2 /= np.linalg.norm(x2)
        worst = max(worst, abs(float(op.apply(x1) @ op.apply(x2))))
    return worst


# -- covering nets ------------------------------------------------------------------

def _sphere_net(n: int, eps: float) -> np.ndarray:
    """An eps-net of the unit sphere in R^n (rows), n small.

    A cubic grid of spacing ``h`` normalized onto the sphere covers it within
    ``2 * h * sqrt(n) / 2 = h * sqrt(n)``; greedy thinning at separation ``rho``
    keeps every grid point within ``rho`` of a survivor. With
    ``h * sqrt(n) = eps/3`` and ``rho = 2 eps / 3`` the survivors form an
    eps-net.
    """
    h = eps / (3.0 * np.sqrt(n))
    ticks = np.arange(-1.0, 1.0 + h / 2, h)
    grid = np.stack(np.meshgrid(*([ticks] * n), indexing="ij"), axis=-1).reshape(-1, n)
    nrm = np.linalg.norm(grid, axis=1)
    pts = grid[nrm > h] / nrm[nrm > h, None]
    rho = 2.0 * eps / 3.0
    keep = []
    alive = np.ones(len(pts), dtype=bool)
    while alive.any():
        i = int(np.argmax(alive))
        keep.append(i)
        alive &= np.linalg.norm(pts - pts[i], axis=1) > rho
    return pts[keep]


def low_rank_net_bound(n1: int, n2: int, r: int, eps: float) -> float:
    """``(9/eps)^((n1 + n2 + 1) r)``, the covering-number bound for unit rank-r matrices."""
    return float((9.0 / eps) ** ((n1 + n2 + 1) * r))


def low_rank_net(n: int, r: int, eps: float) -> np.ndarray:
    """An eps-net (Frobenius norm) of unit-Frobenius rank-r n x n matrices.

    Built from component nets of the factors in ``X = U diag(s) V^T``. For
    ``r = 1`` the singular value is pinned to 1 and ``U``, ``V`` range over the
    sphere; with (eps/2)-nets for each factor,
    ``||u v^T - u' v'^T||_F <= ||u - u'|| + ||v - v'|| <= eps``.

    Returns an array of shape ``(size, n, n)``. Only tiny instances are
    supported (``n <= 3``, ``r = 1``, ``eps >= 0.7``); anything else raises
    :class:`ResourceLimitError`.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if r < 1 or r > n:
        raise ValueError(f"rank {r} outside [1, {n}]")
    if n > 3 or r != 1 or eps < 0.7:
        raise ResourceLimitError(
            f"net for n={n}, r={r}, eps={eps} exceeds the supported size "
            f"(bound {low_rank_net_bound(n, n, r, eps):.3g})")
    s = _sphere_net(n, eps / 2.0)
    net = np.einsum("ai,bj->abij", s, s).reshape(-1, n, n)
    if net.shape[0] > min(_NET_MAX, low_rank_net_bound(n, n, r, eps)):
        raise ResourceLimitError(f"net of size {net.shape[0]} exceeds its bound")
    return net


# -- oracle estimator and risk ----------------------------------------------------

@dataclass
class OracleReport:
    ideal_risk: float
    achieved_err: float
    ratio: float
    bias_sq: float
    variance: float

    def to_dict(self) -> dict:
        return asdict(self)


def _oracle_design(op: MeasOp, u: np.ndarray) -> np.ndarray:
    """Dense m x (r n2) matrix of ``R -> A(U R)``, columns ordered as vec(R)."""
    n1, n2, r = op.n1, op.n2, u.shape[1]
    cols = np.zeros((n1 * n2, r * n2))
    for k in range(n2):
        cols[k * n1:(k + 1) * n1, k * r:(k + 1) * r] = u
    return op.apply_cols(cols)


def _check_orthonormal(u) -> np.ndarray:
    u = matcore.as_mat(u, "u")
    if not np.allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-8):
        raise ValueError("u must have orthonormal columns")
    return u


def oracle_estimator(op: MeasOp, y, u) -> np.ndarray:
    """Least squares over matrices with column space ``span(u)``: ``U R*``.

    Raises :class:`NumericalError` when the restricted design is numerically
    singular (condition number above 1e12).
    """
    u = _check_orthonormal(u)
    if u.shape[0] != op.n1:
        raise ValueError(f"u must have {op.n1} rows")
    y = np.asarray(y, dtype=np.float64)
    a_u = _oracle_design(op, u)
    sv = np.linalg.svd(a_u, compute_uv=False)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if a_u.shape[0] < a_u.shape[1] or cond > 1e12:
        raise NumericalError(f"restricted design is singular (condition {cond:.3g})")
    coef = np.linalg.lstsq(a_u, y, rcond=None)[0]
    return u @ coef.reshape((u.shape[1], op.n2), order="F")


def oracle_variance(op: MeasOp, u, sigma: float) -> float:
    """``sigma^2 trace((A_U^T A_U)^{-1})``, the noise part of the oracle risk."""
    u = _check_orthonormal(u)
    sv = np.linalg.svd(_oracle_design(op, u), compute_uv=False)
    if sv.size < u.shape[1] * op.n2 or sv[-1] <= 0:
        return float("inf")
    return float(sigma * sigma * np.sum(1.0 / sv ** 2))


def ideal_oracle_risk(m_true, sigma: float, n: int | None = None) -> float:
    """``sum_i min(sigma_i(M)^2, n sigma^2)`` with ``n = max(n1, n2)`` by default."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    m_true = matcore.as_mat(m_true)
    n = max(m_true.shape) if n is None else n
    s = matcore.singular_values(m_true)
    return float(np.sum(np.minimum(s ** 2, n * sigma * sigma)))


def oracle_report(m_true, estimate, sigma: float, op: MeasOp | None = None) -> OracleReport:
    """Compare an estimate with the ideal bias-variance trade-off.

    The bias and variance columns describe the oracle that keeps the singular
    directions with ``sigma_i(M) > sqrt(n) sigma``: its bias is the energy of
    the dropped directions and its variance is
    :func:`oracle_variance` on the kept column space (``n r sigma^2`` when no
    operator is given).
    """
    m_true = matcore.as_mat(m_true)
    n = max(m_true.shape)
    ideal = ideal_oracle_risk(m_true, sigma, n)
    err = float(np.linalg.norm(matcore.as_mat(estimate) - m_true) ** 2)
    f = matcore.svd(m_true)
    keep = f.s > np.sqrt(n) * sigma
    bias = float(np.sum(f.s[~keep] ** 2))
    r = int(keep.sum())
    if r == 0:
        var = 0.0
    elif op is None:
        var = float(n * r * sigma * sigma)
    else:
        var = oracle_variance(op, f.u[:, :r], sigma)
    ratio = err / ideal if ideal > 0 else (0.0 if err == 0 else float("inf"))
    return OracleReport(ideal_risk=ideal, achieved_err=err, ratio=ratio, bias_sq=bias,
                        variance=var)


# -- rank-penalized comparison points ---------------------------------------------------

def numerical_rank(x, rtol: float = RANK_RTOL) -> int:
    s = matcore.singular_values(x)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


def k_functional(x, m_true, op: MeasOp, gamma: float) -> float:
    """``gamma * rank(X) + ||A(X) - A(M)||^2``; rank counts ``sigma_i > 1e-8 sigma_1``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    d = op.apply(matcore.as_mat(x) - matcore.as_mat(m_true))
    return float(gamma * numerical_rank(x) + d @ d)


def default_gamma(lam: float) -> float:
    """``lam^2 / 4``: the rank price paired with threshold ``lam`` (taking delta_1 = 0)."""
    return lam * lam / 4.0


def hard_threshold(m_true, lam: float) -> np.ndarray:
    """Keep the singular triplets with ``sigma_i > lam`` (strictly)."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    f = matcore.svd(m_true)
    return f.compose(np.where(f.s > lam, f.s, 0.0))


# -- minimax formulas --------------------------------------------------------------

def minimax_lower_bound(n: int, r: int, sigma: float, delta_r: float) -> float:
    """``n r sigma^2 / (1 + delta_r)``."""
    if not 0 <= delta_r < 1:
        raise ValueError("delta_r must lie in [0, 1)")
    return n * r * sigma * sigma / (1.0 + delta_r)


def fixed_design_minimax(a_dense, sigma: float) -> float:
    """``sigma^2 sum_i 1/lambda_i(A^T A)`` for ``y = A x + z``; infinite if singular.

    An eigenvalue counts as zero when its singular value is below
    ``max(m, n) * eps * s_max``; ``m < n`` is always singular.
    """
    a = matcore.as_mat(a_dense, "a_dense")
    m, n = a.shape
    if m < n:
        return float("inf")
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0 or s[-1] <= max(m, n) * np.finfo(float).eps * s[0]:
        return float("inf")
    return float(sigma * sigma * np.sum(1.0 / s ** 2))


# -- NNQ constant and noise level --------------------------------------------------------

@dataclass
class NnqEstimate:
    alpha_hat: float
    values: list        # 1/||X*||_* for every accepted probe
    excluded: list      # probe indices whose interpolation residual failed
    trials: int

    def to_dict(self) -> dict:
        return asdict(self)


def nnq_alpha(op: MeasOp, trials: int, cfg: SolverConfig | None = None,
              seed: int = 0) -> NnqEstimate:
    """Empirical NNQ constant: min over unit probes ``x`` of ``1/||X*||_*``.

    ``X*`` is the minimum nuclear norm interpolant of ``x``. Probes whose
    interpolant misses ``A(X) = x`` by more than ``1e-6 ||x||`` are left out
    and listed in ``excluded``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    values, excluded = [], []
    for t in range(trials):
        x = _rng.normals(_rng.stream(_rng.derive_seed(seed, t), 0x0A11), op.m)
        x /= np.linalg.norm(x)
        res = solve_nuclear_eq(op, x, cfg)
        if res.residual_norm > 1e-6:
            excluded.append(t)
            continue
        values.append(1.0 / matcore.norm(res.estimate, "nuclear"))
    alpha = min(values) if values else float("nan")
    return NnqEstimate(alpha_hat=alpha, values=values, excluded=excluded, trials=trials)


def noise_dual_norm_ratio(op: MeasOp, sigma: float, trials: int, seed: int = 0) -> float:
    """Max over trials of ``||A*(z)|| / (sqrt(n) sigma)``, ``z ~ N(0, sigma^2 I_m)``."""
    if not sigma > 0 or trials < 1:
        raise ValueError("need sigma > 0 and trials >= 1")
    n = max(op.n1, op.n2)
    z = np.stack([sigma * _rng.normals(_rng.stream(_rng.derive_seed(seed, t), 0x2015E), op.m)
                  for t in range(trials)], axis=1)
    back = op.adjoint_cols(z)
    best = 0.0
    for j in range(trials):
        best = max(best, matcore.norm(matcore.unvec(back[:, j], op.n1, op.n2), "operator"))
    return best / (np.sqrt(n) * sigma)
