"""Numeric primitives shared by every other module.

Vectors and matrices are plain float64 numpy arrays. The public functions here
validate shapes and finiteness; the recurrent hot loops call numpy directly.
"""
from __future__ import annotations

import zlib

import numpy as np

from .errors import ContractViolation

DTYPE = np.float64


def as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=DTYPE)
    if v.ndim != 1:
        raise ContractViolation(f"expected a 1-d vector, got shape {v.shape}")
    return v


def as_matrix(values) -> np.ndarray:
    m = np.asarray(values, dtype=DTYPE)
    if m.ndim != 2:
        raise ContractViolation(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{what} contains NaN or Inf")
    return a


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product with a dimension check."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ContractViolation(
            f"matvec dimension mismatch: matrix is {m.shape[0]}x{m.shape[1]}, vector has {v.shape[0]}"
        )
    return check_finite(m @ v, "matvec result")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(z, dtype=DTYPE)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}


def activation(kind: str, v) -> np.ndarray:
    """Apply ``sigmoid``, ``tanh`` or ``relu`` element-wise."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractViolation(f"unknown activation {kind!r}") from None
    return fn(np.asarray(v, dtype=DTYPE))


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0 or z.shape[-1] == 0:
        raise ContractViolation("softmax of an empty vector")
    check_finite(z, "logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class SeededRng:
    """Seedable random stream.

    Backed by numpy's PCG64 bit generator, so a given seed reproduces the same
    stream on any build using the same numpy major version. ``child`` derives
    independent named sub-streams from the root seed.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ContractViolation(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def child(self, tag: str) -> "SeededRng":
        mixed = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, zlib.crc32(tag.encode())])
        return SeededRng(int(mixed.generate_state(1, dtype=np.uint64)[0]))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        if not lo < hi:
            raise ContractViolation(f"uniform range requires lo < hi, got [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size)

    def gaussian(self, mean: float = 0.0, std: float = 1.0, size=None):
        if std < 0:
            raise ContractViolation(f"gaussian std must be >= 0, got {std}")
        if std == 0:
            return mean if size is None else np.full(size, mean, dtype=DTYPE)
        return self._gen.normal(mean, std, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)


def rng_uniform(rng: SeededRng, lo: float, hi: float) -> float:
    return float(rng.uniform(lo, hi))


def rng_gaussian(rng: SeededRng, mean: float, std: float) -> float:
    return float(rng.gaussian(mean, std))
