"""Deterministic numeric kernel: seeded RNG, checked linear algebra, finite differences.

Everything runs in float64. The RNG is SplitMix64, chosen because its state
transition is tiny and easy to reproduce in any language:

    state    <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z        <- state
    z        <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2^64)
    z        <- (z xor (z >> 27)) * 0x94D049BB133111EB   (mod 2^64)
    output   <- z xor (z >> 31)

A uniform double in [0, 1) is (output >> 11) * 2^-53. Because the state after
n draws is seed + n*0x9E3779B97F4A7C15, bulk draws vectorize exactly.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

SIGMOID_EPS = 1e-15


def mix64(z: int) -> int:
    """SplitMix64 output function on a 64-bit value."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream. Same seed, same platform-independent sequence."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._count = 0  # draws consumed so far

    @property
    def seed(self) -> int:
        return self._seed

    def next_u64(self) -> int:
        self._count += 1
        return mix64((self._seed + self._count * _GOLDEN) & _MASK64)

    def _bulk_u64(self, n: int) -> np.ndarray:
        steps = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        raw = np.uint64(self._seed) + steps * np.uint64(_GOLDEN)
        return _mix64_array(raw)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles, i.i.d. uniform on [0, 1)."""
        return (self._bulk_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        size = int(np.prod(shape))
        return (lo + (hi - lo) * self.uniforms(size)).reshape(shape)

    def integers(self, bound: int, n: int) -> np.ndarray:
        """n ints uniform on [0, bound). Uses the top bits modulo bound."""
        if bound < 1:
            raise ValueError("bound must be >= 1")
        return (self._bulk_u64(n) % np.uint64(bound)).astype(np.int64)

    def normals(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller on paired uniforms."""
        size = int(np.prod(shape))
        m = (size + 1) // 2
        u1 = 1.0 - self.uniforms(m)  # (0, 1], keeps log finite
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return out[:size].reshape(shape)

    def shuffled_order(self, n: int) -> np.ndarray:
        """A permutation of range(n), determined by this stream."""
        return np.argsort(self.uniforms(n), kind="stable")

    def child(self, tag: str) -> "Rng":
        """Derive an independent stream from (seed, tag) only.

        Call order does not matter; reusing a tag reproduces the same stream.
        """
        h = self._seed
        for byte in tag.encode("utf-8"):
            h = mix64(h ^ byte)
        return Rng(mix64(h ^ _GOLDEN))


# ---------------------------------------------------------------------------
# checked dense kernels


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """result[i] = sum_j m[i, j] * v[j]"""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: matrix {m.shape} incompatible with vector {v.shape}")
    return m @ v


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: {a.shape} vs {b.shape}")
    return a * b


def inner(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"inner: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def sigmoid_raw(x):
    """Numerically stable logistic without clamping; saturates to 0.0/1.0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def sigmoid(x):
    """Logistic clamped to [1e-15, 1 - 1e-15] so log-loss stays finite."""
    return np.clip(sigmoid_raw(x), SIGMOID_EPS, 1.0 - SIGMOID_EPS)


def xavier_uniform(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """Uniform on +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"xavier_uniform: rows={rows} cols={cols} must be >= 1")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


def finite_diff_grad(f: Callable[[np.ndarray], float], params: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element.

    f must be deterministic (no dropout, fixed data). params is not modified.
    """
    if h <= 0:
        raise ValueError("finite_diff_grad: h must be > 0")
    theta = np.array(params, dtype=np.float64)
    grad = np.empty_like(theta)
    for idx in np.ndindex(theta.shape):
        saved = theta[idx]
        theta[idx] = saved + h
        fp = f(theta)
        theta[idx] = saved - h
        fm = f(theta)
        theta[idx] = saved
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"finite_diff_grad: non-finite evaluation at index {idx}")
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """max|a-b| scaled by the larger magnitude; 0 when both are all-zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = float(np.max(np.abs(a)) + np.max(np.abs(b))) if a.size else 0.0
    return num / (den + floor)
