"""Dense matrix kernels.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(rows, cols)``; :func:`as_mat` is the validating constructor used at every
public entry point. Whenever a matrix has to be flattened, the package uses
column stacking: ``vec(X) = X.ravel(order="F")``, so entry ``(j, k)`` lands at
position ``j + k * rows``. Measurement operators, dense operator rows and the
CSV exchange format all follow this one layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from . import rng as _rng
from .errors import NumericalError


def as_mat(x, name: str = "x") -> np.ndarray:
    """Validate and return ``x`` as a finite float64 2-D array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).ravel(order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Trace inner product <X, Y> = trace(X^T Y)."""
    return float(np.vdot(x, y))


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray  # rows x k
    s: np.ndarray  # k, nonincreasing
    v: np.ndarray  # cols x k

    @property
    def k(self) -> int:
        return self.s.size

    def compose(self, s: np.ndarray | None = None) -> np.ndarray:
        s = self.s if s is None else s
        return (self.u * s) @ self.v.T


def svd(x) -> SvdFactors:
    """Thin SVD with singular values in descending order.

    Uses LAPACK ``gesdd`` and retries with the slower but more robust
    ``gesvd`` driver. If both fail (LAPACK's implicit-QR iteration cap of
    ``30 * k`` sweeps per singular value is exhausted) a
    :class:`NumericalError` is raised.
    """
    a = as_mat(x)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD did not converge for {a.shape} matrix") from exc
    return SvdFactors(u=u, s=np.maximum(s, 0.0), v=vt.T)


def singular_values(x) -> np.ndarray:
    return svd(x).s


def norm(x, kind: str = "frobenius") -> float:
    """Nuclear, operator or Frobenius norm."""
    if kind == "frobenius":
        return float(np.linalg.norm(as_mat(x)))
    s = singular_values(x)
    if kind == "nuclear":
        return float(s.sum())
    if kind == "operator":
        return float(s[0])
    raise ValueError(f"unknown norm kind {kind!r}")


def svt(x, tau: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    f = svd(x)
    return f.compose(np.maximum(f.s - tau, 0.0))


def clip_singular_values(x, radius: float) -> np.ndarray:
    """Euclidean projection onto the operator-norm ball ``{||Z|| <= radius}``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    f = svd(x)
    if f.s[0] <= radius:
        return np.array(x, dtype=np.float64)
    return f.compose(np.minimum(f.s, radius))


def best_rank_r(x, r: int) -> np.ndarray:
    """Truncated SVD keeping the ``r`` leading singular triplets."""
    f = svd(x)
    if r < 0 or r > f.k:
        raise ValueError(f"rank {r} outside [0, {f.k}]")
    return (f.u[:, :r] * f.s[:r]) @ f.v[:, :r].T


def random_orthonormal(n: int, r: int, gen: np.random.Generator) -> np.ndarray:
    """An n x r matrix with orthonormal columns (QR of a Gaussian matrix)."""
    g = _rng.normals(gen, n * r).reshape((n, r), order="F")
    q, rr = np.linalg.qr(g)
    # fix the QR sign gauge so the draw is a deterministic function of g
    d = np.sign(np.diag(rr))
    d[d == 0] = 1.0
    return q * d


def random_low_rank(n1: int, n2: int, r: int, spectrum: Sequence[float], seed: int) -> np.ndarray:
    """Seeded ``U diag(spectrum) V^T`` with orthonormal ``U`` and ``V``."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if n1 < 1 or n2 < 1 or r < 1 or r > min(n1, n2):
        raise ValueError(f"invalid shape n1={n1}, n2={n2}, r={r}")
    if spectrum.shape != (r,):
        raise ValueError(f"spectrum must have length {r}")
    if np.any(spectrum <= 0) or np.any(np.diff(spectrum) > 0):
        raise ValueError("spectrum must be positive and nonincreasing")
    gen = _rng.stream(seed, 0x10C0DE, n1, n2, r)
    u = random_orthonormal(n1, r, gen)
    v = random_orthonormal(n2, r, gen)
    return (u * spectrum) @ v.T


def degrees_of_freedom(n1: int, n2: int, r: int) -> int:
    """Dimension of the manifold of n1 x n2 rank-r matrices."""
    if r < 0 or r > min(n1, n2):
        raise ValueError(f"rank {r} outside [0, {min(n1, n2)}]")
    return r * (n1 + n2 - r)


# -- file I/O ---------------------------------------------------------------

def write_csv(x, path) -> None:
    """Plain CSV, one matrix row per line, full-precision decimals."""
    a = as_mat(x)
    np.savetxt(path, a, delimiter=",", fmt="%.17g")


def read_csv(path, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    a = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if rows is not None and cols is not None:
        a = a.reshape((rows, cols))
    return as_mat(a, name=str(path))


def write_manifest(x, path, data_path=None) -> dict:
    """Write ``x`` as CSV plus a JSON manifest ``{rows, cols, path}``.

    ``data_path`` defaults to the manifest path with a ``.csv`` suffix; it is
    stored relative to the manifest's directory.
    """
    a = as_mat(x)
    path = os.fspath(path)
    if data_path is None:
        data_path = os.path.splitext(path)[0] + ".csv"
    write_csv(a, data_path)
    rel = os.path.relpath(data_path, os.path.dirname(os.path.abspath(path)))
    manifest = {"rows": a.shape[0], "cols": a.shape[1], "path": rel}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def read_manifest(path) -> np.ndarray:
    path = os.fspath(path)
    with open(path) as fh:
        manifest = json.load(fh)
    data_path = manifest["path"]
    if not os.path.isabs(data_path):
        data_path = os.path.join(os.path.dirname(os.path.abspath(path)), data_path)
    return read_csv(data_path, manifest["rows"], manifest["cols"])
