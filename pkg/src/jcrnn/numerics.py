"""Dense float64 helpers and a seedable SplitMix64 generator.

Arrays are plain ``numpy.ndarray`` objects in float64, row-major. Vectors
are treated as row vectors, so a layer computes ``x @ W + b``.

The random generator is SplitMix64 (Steele, Lea & Flood 2014)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

Uniform doubles take the top 53 bits: ``(out >> 11) * 2**-53``. The block
methods evaluate the same recurrence vectorised, so drawing ``n`` values
one at a time or as a block yields the same stream.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


class ShapeError(ValueError):
    """Raised when operand shapes are not conformable."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.array(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows or cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected shape ({rows}, {cols}), got {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit conformability check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a_cols = a.shape[-1]
    b_rows = b.shape[0]
    if a_cols != b_rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: {a_cols} != {b_rows}")
    return a @ b


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def sigmoid(x):
    # 0.5 * (1 + tanh(x / 2)) never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def dsigmoid_from_output(s):
    return s * (1.0 - s)


def dtanh_from_output(t):
    return 1.0 - t * t


def activation(x, kind: str):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad_from_output(out, kind: str):
    if kind == "sigmoid":
        return dsigmoid_from_output(out)
    if kind == "tanh":
        return dtanh_from_output(out)
    raise ValueError(f"unknown activation {kind!r}")


def softmax_row(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream. Single owner; not safe to share across threads."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def u64_block(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"block size must be non-negative, got {n}")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            out = _mix_array(states)
        self.state = (self.state + n * GOLDEN) & MASK64
        return out

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def random_block(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return ((self.u64_block(n) >> np.uint64(11)).astype(np.float64) * _INV53).reshape(shape)

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        return lo + (hi - lo) * self.random()

    def uniform_block(self, lo: float, hi: float, shape) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        return lo + (hi - lo) * self.random_block(shape)

    def bernoulli(self, p: float) -> int:
        _check_prob(p)
        return int(self.random() < p)

    def bernoulli_block(self, p: float, shape) -> np.ndarray:
        _check_prob(p)
        return (self.random_block(shape) < p).astype(np.float64)

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self.random()
        u2 = self.random()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal_block(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        # draws are paired (u1, u2) per value, matching repeated normal() calls
        n = int(np.prod(shape))
        u = self.random_block((n, 2))
        z = np.sqrt(-2.0 * np.log(1.0 - u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return (mean + std * z).reshape(shape)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi]; modulo bias is below 2**-40 for small ranges."""
        if hi < lo:
            raise ValueError(f"randint requires lo <= hi, got [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def shuffle(self, items: list) -> list:
        """Fisher-Yates; returns a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(0, i)
            out[i], out[j] = out[j], out[i]
        return out


def _check_prob(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
