"""Linear sampling operators ``A : R^{n1 x n2} -> R^m``.

``[A(X)]_i = <A_i, X>`` and ``A*(q) = sum_i q_i A_i``. Dense operators keep
the stacked matrix whose i-th row is ``vec(A_i)`` (column stacking, see
:mod:`lrmr.matcore`).

Random ensembles are regenerated from ``(seed, kind, n1, n2, m, block)`` in
blocks of :data:`BLOCK_ROWS` rows, each block drawn from its own Philox stream.
Small operators materialize all blocks once and cache them; operators above
:data:`CACHE_CAP` entries regenerate blocks on every call. Both paths produce
bitwise-identical rows.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import matcore
from . import rng as _rng
from .errors import NumericalError, ResourceLimitError

KINDS = ("dense_rows", "gaussian", "bernoulli", "entry_mask", "identity")
_KIND_CODE = {k: i + 1 for i, k in enumerate(KINDS)}

BLOCK_ROWS = 64
CACHE_CAP = 2 * 10**7   # reals kept in memory per random operator
DENSE_CAP = 10**8       # reals allowed in to_dense / Gram matrices


@dataclass(frozen=True, eq=False)
class MeasOp:
    kind: str
    n1: int
    n2: int
    m: int
    seed: int | None = None
    mask: np.ndarray | None = None   # (m, 2) int array of (row, col), 0-based
    rows: np.ndarray | None = None   # (m, n1*n2), row i = vec(A_i)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    # -- row access ---------------------------------------------------------

    def _block(self, b: int) -> np.ndarray:
        lo = b * BLOCK_ROWS
        k = min(BLOCK_ROWS, self.m - lo)
        gen = _rng.stream(self.seed, _KIND_CODE[self.kind], self.n1, self.n2, self.m, b)
        if self.kind == "gaussian":
            vals = _rng.normals(gen, k * self.size) / np.sqrt(self.m)
        else:
            vals = _rng.signs(gen, k * self.size) / np.sqrt(self.m)
        return vals.reshape((k, self.size))

    def _n_blocks(self) -> int:
        return -(-self.m // BLOCK_ROWS)

    def _matrix(self) -> np.ndarray | None:
        """Stacked rows if dense-backed and cacheable, else None."""
        if self.kind == "dense_rows":
            return self.rows
        if self.kind not in ("gaussian", "bernoulli"):
            return None
        mat = self._cache.get("rows")
        if mat is None and self.m * self.size <= CACHE_CAP:
            mat = np.vstack([self._block(b) for b in range(self._n_blocks())])
            mat.setflags(write=False)
            self._cache["rows"] = mat
        return mat

    # -- core maps on column batches -----------------------------------------

    def apply_cols(self, v: np.ndarray) -> np.ndarray:
        """A applied to each column of ``v`` (shape (n1*n2, k)) -> (m, k)."""
        if self.kind == "identity":
            return v.copy()
        if self.kind == "entry_mask":
            return v[self._lin_index()]
        mat = self._matrix()
        if mat is not None:
            return mat @ v
        out = np.empty((self.m, v.shape[1]))
        for b in range(self._n_blocks()):
            blk = self._block(b)
            out[b * BLOCK_ROWS: b * BLOCK_ROWS + blk.shape[0]] = blk @ v
        return out

    def adjoint_cols(self, q: np.ndarray) -> np.ndarray:
        """A* applied to each column of ``q`` (shape (m, k)) -> (n1*n2, k)."""
        if self.kind == "identity":
            return q.copy()
        if self.kind == "entry_mask":
            out = np.zeros((self.size, q.shape[1]))
            np.add.at(out, self._lin_index(), q)
            return out
        mat = self._matrix()
        if mat is not None:
            return mat.T @ q
        out = np.zeros((self.size, q.shape[1]))
        for b in range(self._n_blocks()):
            blk = self._block(b)
            out += blk.T @ q[b * BLOCK_ROWS: b * BLOCK_ROWS + blk.shape[0]]
        return out

    def _lin_index(self) -> np.ndarray:
        idx = self._cache.get("lin")
        if idx is None:
            idx = self.mask[:, 0] + self.mask[:, 1] * self.n1
            self._cache["lin"] = idx
        return idx

    # -- public matrix-level maps --------------------------------------------

    def apply(self, x) -> np.ndarray:
        x = matcore.as_mat(x)
        if x.shape != (self.n1, self.n2):
            raise ValueError(f"expected {self.n1}x{self.n2} matrix, got {x.shape}")
        return self.apply_cols(matcore.vec(x)[:, None])[:, 0]

    def adjoint(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.m,):
            raise ValueError(f"expected vector of length {self.m}, got shape {q.shape}")
        return matcore.unvec(self.adjoint_cols(q[:, None])[:, 0], self.n1, self.n2)

    def normal(self, x: np.ndarray) -> np.ndarray:
        """A*(A(X)), through the cached Gram matrix when that is cheaper."""
        g = self.gram()
        v = matcore.vec(x)[:, None]
        if g is not None:
            return matcore.unvec(g @ v[:, 0], self.n1, self.n2)
        return matcore.unvec(self.adjoint_cols(self.apply_cols(v))[:, 0], self.n1, self.n2)

    def gram(self) -> np.ndarray | None:
        """Dense ``A^T A`` (n1n2 x n1n2) when it beats two matvecs, else None."""
        if "gram" in self._cache:
            return self._cache["gram"]
        g = None
        if self.kind in ("dense_rows", "gaussian", "bernoulli") and self.size < self.m \
                and self.size**2 <= CACHE_CAP:
            mat = self._matrix()
            if mat is not None:
                g = mat.T @ mat
        self._cache["gram"] = g
        return g

    def to_dense(self) -> np.ndarray:
        return to_dense(self)


# -- constructors -------------------------------------------------------------

def _check_shape(n1, n2, m):
    for name, val in (("n1", n1), ("n2", n2), ("m", m)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val!r}")


def _fisher_yates(gen: np.random.Generator, n: int, k: int) -> np.ndarray:
    """First ``k`` entries of a seeded Fisher-Yates shuffle of range(n).

    Only swapped positions are stored, so memory is O(k) for any ``n``.
    """
    swapped: dict[int, int] = {}
    out = np.empty(k, dtype=np.int64)
    for i in range(k):
        j = int(gen.integers(i, n))
        vi, vj = swapped.get(i, i), swapped.get(j, j)
        swapped[j] = vi
        out[i] = vj
    return out


def make_ensemble(kind: str, n1: int, n2: int, m: int, seed: int | None = None) -> MeasOp:
    """Build a seeded random or deterministic operator.

    ``gaussian`` rows have i.i.d. N(0, 1/m) entries, ``bernoulli`` rows have
    i.i.d. +-1/sqrt(m) entries, ``entry_mask`` observes ``m`` distinct entries
    chosen uniformly without replacement, ``identity`` requires m = n1*n2.
    """
    _check_shape(n1, n2, m)
    if kind in ("gaussian", "bernoulli"):
        if seed is None:
            raise ValueError(f"{kind} ensemble needs a seed")
        return MeasOp(kind, n1, n2, m, seed=int(seed))
    if kind == "entry_mask":
        if seed is None:
            raise ValueError("entry_mask ensemble needs a seed")
        if m > n1 * n2:
            raise ValueError(f"cannot pick {m} distinct entries from {n1}x{n2}")
        gen = _rng.stream(seed, _KIND_CODE[kind], n1, n2, m)
        lin = _fisher_yates(gen, n1 * n2, m)
        return entry_mask(n1, n2, np.column_stack([lin % n1, lin // n1]), seed=int(seed))
    if kind == "identity":
        if m != n1 * n2:
            raise ValueError(f"identity operator requires m = n1*n2 = {n1 * n2}, got {m}")
        return MeasOp(kind, n1, n2, m)
    if kind == "dense_rows":
        raise ValueError("dense_rows operators are built with dense_rows(rows)")
    raise ValueError(f"unknown operator kind {kind!r}")


def dense_rows(rows) -> MeasOp:
    """Operator from explicit sensing matrices, ``rows`` of shape (m, n1, n2)."""
    a = np.asarray(rows, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError("rows must have shape (m, n1, n2)")
    if not np.all(np.isfinite(a)):
        raise ValueError("rows contain NaN or Inf")
    m, n1, n2 = a.shape
    _check_shape(n1, n2, m)
    stacked = np.ascontiguousarray(a.transpose(0, 2, 1).reshape(m, n1 * n2))
    stacked.setflags(write=False)
    return MeasOp("dense_rows", n1, n2, m, rows=stacked)


def from_dense(mat, n1: int, n2: int) -> MeasOp:
    """Operator from an m x (n1*n2) matrix whose rows are vec(A_i)."""
    a = matcore.as_mat(mat, "mat")
    if a.shape[1] != n1 * n2:
        raise ValueError(f"matrix has {a.shape[1]} columns, expected {n1 * n2}")
    a = np.array(a)
    a.setflags(write=False)
    return MeasOp("dense_rows", n1, n2, a.shape[0], rows=a)


def entry_mask(n1: int, n2: int, pairs, seed: int | None = None) -> MeasOp:
    p = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    _check_shape(n1, n2, len(p))
    if np.any(p[:, 0] < 0) or np.any(p[:, 0] >= n1) or np.any(p[:, 1] < 0) or np.any(p[:, 1] >= n2):
        raise ValueError("mask pair out of range")
    if len(np.unique(p[:, 0] + p[:, 1] * n1)) != len(p):
        raise ValueError("mask pairs must be distinct")
    p.setflags(write=False)
    return MeasOp("entry_mask", n1, n2, len(p), seed=seed, mask=p)


# -- module-level API -------------------------------------------------------------

def apply(op: MeasOp, x) -> np.ndarray:
    return op.apply(x)


def adjoint(op: MeasOp, q) -> np.ndarray:
    return op.adjoint(q)


def to_dense(op: MeasOp, cap: int = DENSE_CAP) -> np.ndarray:
    """The m x (n1*n2) matrix with rows vec(A_i)."""
    if op.m * op.size > cap:
        raise ResourceLimitError(
            f"dense form needs {op.m * op.size} reals, cap is {cap}")
    if op.kind == "identity":
        return np.eye(op.size)
    if op.kind == "entry_mask":
        out = np.zeros((op.m, op.size))
        out[np.arange(op.m), op._lin_index()] = 1.0
        return out
    mat = op._matrix()
    if mat is None:
        mat = np.vstack([op._block(b) for b in range(op._n_blocks())])
    return np.array(mat)


def op_spectral_norm(op: MeasOp, tol: float = 1e-8, max_iter: int = 20000) -> float:
    """Largest singular value of ``A``.

    Runs Lanczos (ARPACK ``eigsh``) on ``A*A`` from a fixed seeded start vector.
    Plain power iteration converges at the rate of the top eigenvalue gap,
    which for random ensembles is tiny near the spectral edge; Lanczos needs
    far fewer products. ``tol`` is ARPACK's relative accuracy for the top
    eigenvalue and ``max_iter`` caps its restarts. Results are memoized per
    operator and tolerance.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    key = ("opnorm", tol)
    if key in op._cache:
        return op._cache[key]
    if op.kind == "identity":
        op._cache[key] = 1.0
        return 1.0
    if op.kind == "entry_mask":
        op._cache[key] = 1.0   # A*A is a 0/1 diagonal projection with at least one 1
        return 1.0
    v0 = _rng.normals(_rng.stream(0x5EC7, op.n1, op.n2, op.m), op.size)
    g = op.gram()
    probe = op.apply_cols(v0[:, None])[:, 0]
    if op.size == 1 or not np.any(probe):
        # a Gaussian start has a component along every direction, so A v0 = 0 iff A = 0
        out = float(np.linalg.norm(probe) / np.linalg.norm(v0))
        op._cache[key] = out
        return out
    if g is not None:
        lin = spla.aslinearoperator(g)
    else:
        lin = spla.LinearOperator(
            (op.size, op.size), dtype=np.float64,
            matvec=lambda v: op.adjoint_cols(op.apply_cols(np.reshape(v, (-1, 1))))[:, 0])
    try:
        top = spla.eigsh(lin, k=1, which="LA", v0=v0, tol=tol, maxiter=max_iter,
                         return_eigenvectors=False)[0]
    except spla.ArpackNoConvergence as exc:
        best = float(np.sqrt(max(exc.eigenvalues.max(), 0.0))) if exc.eigenvalues.size else None
        raise NumericalError(f"Lanczos did not reach tol={tol} in {max_iter} restarts",
                             best=best) from exc
    out = float(np.sqrt(max(top, 0.0)))
    op._cache[key] = out
    return out


# -- manifests ------------------------------------------------------------------

def write_op_manifest(op: MeasOp, path) -> dict:
    """JSON ``{kind, n1, n2, m, seed | mask_pairs | rows_path}``."""
    path = os.fspath(path)
    manifest = {"kind": op.kind, "n1": op.n1, "n2": op.n2, "m": op.m}
    if op.kind in ("gaussian", "bernoulli"):
        manifest["seed"] = op.seed
    elif op.kind == "entry_mask":
        manifest["mask_pairs"] = op.mask.tolist()
    elif op.kind == "dense_rows":
        rows_path = os.path.splitext(path)[0] + ".rows.csv"
        matcore.write_csv(op.rows, rows_path)
        manifest["rows_path"] = os.path.relpath(rows_path, os.path.dirname(os.path.abspath(path)))
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def read_op_manifest(path) -> MeasOp:
    path = os.fspath(path)
    with open(path) as fh:
        d = json.load(fh)
    kind, n1, n2, m = d["kind"], int(d["n1"]), int(d["n2"]), int(d["m"])
    if kind == "entry_mask":
        op = entry_mask(n1, n2, d["mask_pairs"])
    elif kind == "dense_rows":
        rows_path = d["rows_path"]
        if not os.path.isabs(rows_path):
            rows_path = os.path.join(os.path.dirname(os.path.abspath(path)), rows_path)
        op = from_dense(matcore.read_csv(rows_path, m, n1 * n2), n1, n2)
    else:
        op = make_ensemble(kind, n1, n2, m, d.get("seed"))
    if op.m != m:
        raise ValueError(f"manifest m={m} disagrees with payload ({op.m} rows)")
    return op

