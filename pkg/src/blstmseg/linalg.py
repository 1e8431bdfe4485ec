"""Dense numeric helpers shared by the network modules.

Vectors and matrices are plain float64 numpy arrays. The element-wise helpers
accept a trailing batch of leading axes so the recurrent code can run one
sentence or a padded batch of sentences through the same path.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


def _shape_str(a) -> str:
    return "x".join(str(n) for n in np.shape(a)) or "scalar"


def _same_shape(a, b, op: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{op}: shape mismatch {_shape_str(a)} vs {_shape_str(b)}")


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Return ``m @ v``; ``v`` may carry leading batch axes (``(..., cols)``)."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim < 1 or m.shape[1] != v.shape[-1]:
        raise ShapeError(f"matvec: matrix {_shape_str(m)} cannot multiply vector {_shape_str(v)}")
    return v @ m.T


def sigmoid(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    # branch on sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(v: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.float64))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b, "hadamard")
    return np.multiply(a, b, dtype=np.float64)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b, "add")
    return np.add(a, b, dtype=np.float64)


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] < 1:
        raise ShapeError(f"softmax: needs at least one element, got {_shape_str(v)}")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _splitmix_mix(z):
    """SplitMix64 finaliser; works on python ints and uint64 arrays alike."""
    if isinstance(z, np.ndarray):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class Rng:
    """SplitMix64 generator (Steele, Lea & Flood 2014).

    State transition: ``state <- state + 0x9E3779B97F4A7C15 (mod 2**64)``;
    output: the SplitMix64 finaliser applied to the new state. Because the
    n-th output is a pure function of ``seed + n * gamma`` the bulk methods
    vectorise and still produce exactly the sequential stream. Doubles take
    the top 53 bits: ``(u >> 11) * 2**-53``, which lies in [0, 1).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.state = self.seed

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return _splitmix_mix(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("negative draw count")
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        out = _splitmix_mix(steps + np.uint64(self.state))
        self.state = (self.state + n * _GAMMA) & MASK64
        return out

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.u64_array(n) >> np.uint64(11)
        return (u.astype(np.float64) * 2.0**-53).reshape(shape)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("randbelow needs n > 0")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def spawn(self) -> "Rng":
        return Rng(self.next_u64())


def init_uniform(rng: Rng, rows: int, cols: int, scale: float) -> np.ndarray:
    """Matrix of i.i.d. draws from U[-scale, scale], filled row-major."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"init_uniform: dimensions must be positive, got {rows}x{cols}")
    if scale <= 0:
        raise ValueError(f"init_uniform: scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, (rows, cols))
