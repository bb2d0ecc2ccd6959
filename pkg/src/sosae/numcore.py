"""Dense float64 matrix helpers and the seeded random stream.

A "matrix" throughout the package is a C-contiguous 2-D ``numpy.ndarray`` of
dtype float64. Shapes are always explicit; helpers here refuse to broadcast.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Two-branch form so exp never overflows for large |x|.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def splitmix64(state: int) -> int:
    """One splitmix64 output for the given 64-bit state."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix extra integer keys into a seed to get an independent stream seed."""
    s = splitmix64(seed & _MASK64)
    for k in keys:
        s = splitmix64((s ^ (k & _MASK64)) & _MASK64)
    return s


class Rng:
    """Seeded generator with a platform-independent stream.

    The 64-bit seed is expanded with splitmix64 into the 128-bit state of a
    PCG64 bit generator, whose output sequence numpy guarantees to be stable
    across platforms and releases.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        s1 = splitmix64(self.seed)
        s2 = splitmix64(s1)
        bitgen = np.random.PCG64(np.random.SeedSequence(entropy=[s1, s2]))
        self._gen = np.random.Generator(bitgen)

    def uniform(self, lo: float, hi: float, rows: int, cols: int) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got lo={lo}, hi={hi}")
        return lo + (hi - lo) * self._gen.random((rows, cols))

    def normal(self, std: float, rows: int, cols: int) -> np.ndarray:
        return std * self._gen.standard_normal((rows, cols))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, population, k: int) -> np.ndarray:
        """``k`` distinct elements of ``population`` in sampled order."""
        return self._gen.choice(np.asarray(population), size=k, replace=False)

    def random(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.random((rows, cols))
