"""Reproducible random streams.

Every random quantity in the package is drawn from a Philox-4x64 counter-based
generator keyed by a tuple of integers through ``numpy.random.SeedSequence``.
Gaussian variates are produced with the Box-Muller transform from the raw
uniform stream rather than numpy's ziggurat sampler, so that the mapping
``(key) -> samples`` depends only on Philox and IEEE arithmetic.

Streams are stateless with respect to call order: two calls with the same key
always yield the same numbers, regardless of what else was drawn before or on
which thread.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(keys) -> list[int]:
    return [int(k) & _MASK64 for k in keys]


def stream(*keys: int) -> np.random.Generator:
    """Return a fresh Philox generator for the integer key tuple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_key(keys))))


def derive_seed(master: int, *keys: int) -> int:
    """Derive an independent 63-bit seed from ``master`` and a key path.

    Used for per-trial seeding: ``derive_seed(master, trial)`` does not depend
    on how many other trials exist or in which order they run.
    """
    ss = np.random.SeedSequence(_key([master, *keys]))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return ((int(hi) << 32) | int(lo)) & ((1 << 63) - 1)


def uniforms(gen: np.random.Generator, size: int) -> np.ndarray:
    return gen.random(size)


def normals(gen: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal samples by Box-Muller on pairs of uniforms."""
    half = (size + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1], keeps log finite
    u2 = gen.random(half)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty(2 * half)
    out[0::2] = rad * np.cos(ang)
    out[1::2] = rad * np.sin(ang)
    return out[:size]


def signs(gen: np.random.Generator, size: int) -> np.ndarray:
    """Independent +1/-1 with probability one half each."""
    return np.where(gen.random(size) < 0.5, -1.0, 1.0)
