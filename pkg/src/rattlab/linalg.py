"""Dense float64 arithmetic, nonlinearities and a counter-based RNG.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
The helpers here add the shape checks and masking rules the rest of the
package relies on.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "Rng",
    "hadamard",
    "log_softmax_t",
    "matmul",
    "seeded_uniform",
    "sigmoid",
    "softmax_t",
    "tanh",
]

# splitmix64 constants
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a_shape = (1, a.shape[0])
    else:
        a_shape = a.shape
    b_shape = b.shape if b.ndim == 2 else (b.shape[0], 1)
    if a.ndim > 2 or b.ndim > 2 or a_shape[1] != b_shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Logistic function, evaluated without overflow for large |v|."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(v: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(v, dtype=np.float64))


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard product of {a.shape} and {b.shape}")
    return a * b


def _check_support(logits: np.ndarray, support: np.ndarray, temperature: float):
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    support = np.asarray(support).astype(bool)
    if support.shape[-1] != logits.shape[-1]:
        raise ShapeError(f"support {support.shape} does not match logits {logits.shape}")
    if not support.any(axis=-1).all():
        raise DomainError("softmax support is empty")
    return support


def log_softmax_t(logits: np.ndarray, temperature: float, support: np.ndarray) -> np.ndarray:
    """Log-probabilities over ``support`` along the last axis; -inf elsewhere.

    Works on a single vector or a batch (rows). ``support`` broadcasts
    against ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    support = _check_support(logits, support, temperature)
    z = np.where(support, logits / temperature, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def softmax_t(logits: np.ndarray, temperature: float, support: np.ndarray) -> np.ndarray:
    """Temperature softmax restricted to ``support``.

    Inactive entries are exactly 0 and take no part in the normalisation.
    """
    logits = np.asarray(logits, dtype=np.float64)
    support = _check_support(logits, support, temperature)
    z = np.where(support, logits / temperature, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based generator (splitmix64 over a keyed counter).

    Output depends only on ``(seed, stream path, counter)``, so draws are
    identical on every platform and independent streams can be forked by
    name without disturbing each other.
    """

    def __init__(self, seed: int, key: int | None = None, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.key = _mix_int(self.seed + 0x9E3779B97F4A7C15) if key is None else int(key)
        self.counter = int(counter)

    def stream(self, name: str) -> "Rng":
        """Child generator keyed by ``name``; does not advance this one."""
        h = int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")
        return Rng(self.seed, key=_mix_int(self.key ^ h), counter=0)

    def state(self) -> dict:
        return {"seed": self.seed, "key": self.key, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        return cls(state["seed"], key=state["key"], counter=state["counter"])

    def _bits(self, n: int) -> np.ndarray:
        ctr = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.key) + (ctr + np.uint64(1)) * _GAMMA)

    def random(self, shape=()) -> np.ndarray:
        """Uniform float64 in [0, 1) with 53 random bits."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self._bits(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        if not lo < hi:
            raise DomainError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        out = lo + (hi - lo) * self.random(shape)
        # rounding can land exactly on hi for tiny ranges
        return np.minimum(out, np.nextafter(hi, lo))

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        n = int(np.prod(shape, dtype=np.int64))
        u1 = 1.0 - self.random(n)  # (0, 1]
        u2 = self.random(n)
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def integers(self, high: int, size=()) -> np.ndarray:
        return np.floor(self.random(size) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        keys = self._bits(n)
        return np.argsort(keys, kind="stable")


def seeded_uniform(rng: Rng, lo: float, hi: float, shape) -> np.ndarray:
    return rng.uniform(lo, hi, shape)
