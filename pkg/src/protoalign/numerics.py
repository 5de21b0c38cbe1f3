"""Vector arithmetic, a portable deterministic RNG, and optimizer update rules.

Everything downstream works in float64; 32-bit precision exists only inside
the on-disk formats. The RNG is self-contained (xoshiro256** seeded through
splitmix64) so that a seed produces the same stream on every platform; the
process RNG is never consulted.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeMismatchError, ZeroNormError

ZERO_NORM_FLOOR = 1e-30

_MASK64 = 0xFFFFFFFFFFFFFFFF


def as_f64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def row_norms(matrix: np.ndarray) -> np.ndarray:
    """Euclidean norm along the last axis.

    Single reduction routine shared by normalization, the model forward pass
    and archive loading, so that "normalize" means bit-identical arithmetic
    everywhere.
    """
    m = np.ascontiguousarray(as_f64(matrix))
    return np.sqrt((m * m).sum(axis=-1))


def l2_normalize(vector) -> np.ndarray:
    """Scale ``vector`` (or each row of a matrix) to unit Euclidean norm.

    Raises ZeroNormError when any norm is at or below 1e-30, which signals a
    degenerate embedding rather than numeric noise.
    """
    v = np.ascontiguousarray(as_f64(vector))
    norms = row_norms(v)
    if not np.all(np.isfinite(norms)) or np.any(norms <= ZERO_NORM_FLOOR):
        raise ZeroNormError("cannot normalize a (near-)zero or non-finite vector")
    return v / norms[..., np.newaxis] if v.ndim > 1 else v / norms


def cosine(u, v) -> float:
    """Cosine similarity, clamped to [-1, 1] so rounding never leaks out of range."""
    un = l2_normalize(u)
    vn = l2_normalize(v)
    if un.shape != vn.shape:
        raise ShapeMismatchError(f"cosine: shapes {un.shape} vs {vn.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(un, vn)))))


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """Deterministic xoshiro256** stream, seed-expanded via splitmix64.

    Integer output is exactly reproducible everywhere; float output depends
    only on IEEE-754 arithmetic plus sqrt/log, which keeps streams stable
    across platforms for all practical purposes.
    """

    __slots__ = ("_s0", "_s1", "_s2", "_s3", "_spare")

    def __init__(self, seed: int):
        x = int(seed) & _MASK64
        x, self._s0 = _splitmix64(x)
        x, self._s1 = _splitmix64(x)
        x, self._s2 = _splitmix64(x)
        x, self._s3 = _splitmix64(x)
        if not (self._s0 | self._s1 | self._s2 | self._s3):
            self._s0 = 1  # xoshiro state must never be all zero
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def integer(self, n: int) -> int:
        """Unbiased uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("integer() needs n >= 1")
        limit = (2**64 // n) * n
        while True:
            draw = self.next_u64()
            if draw < limit:
                return draw % n

    def normal(self) -> float:
        """Standard normal via the polar Box-Muller transform."""
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        while True:
            u = 2.0 * self.random() - 1.0
            v = 2.0 * self.random() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                f = math.sqrt(-2.0 * math.log(s) / s)
                self._spare = v * f
                return u * f

    def normals(self, *shape: int) -> np.ndarray:
        out = np.empty(int(np.prod(shape)) if shape else 1, dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal()
        return out.reshape(shape) if shape else out

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integer(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def sample_prefix(self, n: int, k: int) -> list[int]:
        """First k entries of a Fisher-Yates shuffle of range(n), without
        paying for the full shuffle; sampling without replacement."""
        if k > n:
            raise ValueError("sample_prefix: k > n")
        items = list(range(n))
        for i in range(k):
            j = i + self.integer(n - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]


def derive_seed(*parts) -> int:
    """Stable 64-bit sub-seed from arbitrary labeled parts.

    Used wherever one configured seed must fan out into independent streams
    (per bucket, per epoch, per run) without depending on iteration order.
    """
    payload = "\x1f".join(f"{type(p).__name__}:{p}" for p in parts)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class AdamState:
    """Per-tensor Adam accumulators plus hyperparameters."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and advanced state."""
    params = as_f64(params)
    grads = as_f64(grads)
    if params.shape != grads.shape:
        raise ShapeMismatchError(f"adam_step: params {params.shape} vs grads {grads.shape}")
    m_prev = np.zeros_like(params) if state.m is None else state.m
    v_prev = np.zeros_like(params) if state.v is None else state.v
    if m_prev.shape != params.shape or v_prev.shape != params.shape:
        raise ShapeMismatchError("adam_step: accumulator shape differs from params")
    t = state.step + 1
    m = state.beta1 * m_prev + (1.0 - state.beta1) * grads
    v = state.beta2 * v_prev + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    updated = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated, replace(state, step=t, m=m, v=v)


def sgd_step(params: np.ndarray, grads: np.ndarray, learning_rate: float) -> np.ndarray:
    """Plain gradient step, kept for ablations against Adam."""
    params = as_f64(params)
    grads = as_f64(grads)
    if params.shape != grads.shape:
        raise ShapeMismatchError(f"sgd_step: params {params.shape} vs grads {grads.shape}")
    return params - learning_rate * grads
