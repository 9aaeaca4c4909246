"""Dense arithmetic, activations, seeded randomness and dropout masks."""

from __future__ import annotations

import enum

import numpy as np

from .errors import InvalidProbabilityError, ShapeError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
ELU_ALPHA = 1.0
LRELU_SLOPE = 0.01


class Activation(str, enum.Enum):
    SELU = "SELU"
    RELU = "RELU"
    RELU6 = "RELU6"
    ELU = "ELU"
    LRELU = "LRELU"
    SIGMOID = "SIGMOID"
    TANH = "TANH"
    SWISH = "SWISH"

    @classmethod
    def parse(cls, value: "str | Activation") -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            names = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown activation {value!r} (expected one of {names})") from None


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _sigmoid(x):
    # exp of a non-positive argument never overflows and keeps the tails accurate
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def activate(kind: Activation, x):
    """Apply ``kind`` elementwise. Works on scalars and arrays."""
    x = np.asarray(x)
    if kind is Activation.RELU:
        return np.maximum(x, 0)
    if kind is Activation.RELU6:
        return np.minimum(np.maximum(x, 0), 6)
    if kind is Activation.ELU:
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0)))
    if kind is Activation.SELU:
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))
    if kind is Activation.LRELU:
        return np.where(x > 0, x, LRELU_SLOPE * x)
    if kind is Activation.SIGMOID:
        return _sigmoid(x)
    if kind is Activation.TANH:
        return np.tanh(x)
    if kind is Activation.SWISH:
        return x * _sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(kind: Activation, x):
    """Derivative of ``activate(kind, .)`` at ``x``; kinks take the right-hand value."""
    x = np.asarray(x)
    one = np.ones_like(x)
    if kind is Activation.RELU:
        return np.where(x >= 0, one, 0 * one)
    if kind is Activation.RELU6:
        return np.where((x >= 0) & (x < 6), one, 0 * one)
    if kind is Activation.ELU:
        return np.where(x >= 0, one, ELU_ALPHA * np.exp(np.minimum(x, 0)))
    if kind is Activation.SELU:
        return SELU_LAMBDA * np.where(x >= 0, one, SELU_ALPHA * np.exp(np.minimum(x, 0)))
    if kind is Activation.LRELU:
        return np.where(x >= 0, one, LRELU_SLOPE * one)
    if kind is Activation.SIGMOID:
        s = _sigmoid(x)
        return s * (1 - s)
    if kind is Activation.TANH:
        t = np.tanh(x)
        return 1 - t * t
    if kind is Activation.SWISH:
        s = _sigmoid(x)
        return s + x * s * (1 - s)
    raise ValueError(f"unknown activation {kind!r}")


class RngStream:
    """Seeded random stream.

    Backed by numpy's PCG64, whose output for a given seed is fixed across
    platforms. ``child(key)`` derives an independent stream without touching
    this one, so separate consumers (init, splitting, corruption, ...) never
    perturb each other's draws.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, seq):
        return seq[int(self.generator.integers(len(seq)))]

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def _check_probability(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise InvalidProbabilityError(f"probability must satisfy 0 <= p < 1, got {p}")


def dropout_mask(rng: RngStream, p: float, size, dtype=np.float64) -> np.ndarray:
    """Inverted dropout mask: 0 with probability p, else 1/(1-p)."""
    _check_probability(p)
    if p == 0.0:
        return np.ones(size, dtype=dtype)
    keep = rng.random(size) >= p
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - p), dtype=dtype)


def noise_mask(rng: RngStream, p: float, size, dtype=np.float64) -> np.ndarray:
    """0/1 corruption mask: zero with probability p, no rescaling."""
    _check_probability(p)
    if p == 0.0:
        return np.ones(size, dtype=dtype)
    return (rng.random(size) >= p).astype(dtype)
