"""The student: a two-layer residual head over frozen backbone features.

forward(x) = normalize(P·x + W2·gelu(W1·x + b1) + b2)

W1, b1, W2 and b2 are the only trainable tensors. P is a frozen base
projection: the identity when the feature dim equals the embedding dim
(the default, where the head consumes the teacher embedding itself), else a
random orthonormal map fixed at init. W2 and b2 start at zero, so a fresh
head reproduces the normalized base exactly and representation drift starts
from nothing.

The nonlinearity is pinned to the tanh-form gelu so the hand-written
backward pass has a single exact definition to match.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MAGIC
from .errors import FormatError, ShapeMismatchError, ZeroNormError
from .numerics import ZERO_NORM_FLOOR, Rng, as_f64, derive_seed, row_norms

CHECKPOINT_VERSION = 1
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715

TRAINABLE_TENSORS = ("w1", "b1", "w2", "b2")


def gelu(x: np.ndarray) -> np.ndarray:
    """gelu(x) = 0.5 x (1 + tanh(c (x + a x^3))), c = sqrt(2/pi), a = 0.044715."""
    inner = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_prime(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def _quantize(arr: np.ndarray) -> np.ndarray:
    """Snap to float32-representable values so checkpoints round-trip exactly."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


@dataclass
class StudentHead:
    """Trainable parameters plus the frozen base projection."""

    w1: np.ndarray  # (hidden, d_in)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (d, hidden)
    b2: np.ndarray  # (d,)
    projection: np.ndarray | None  # (d, d_in); None means identity
    seed: int
    step: int = 0

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "StudentHead":
        return StudentHead(
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
            projection=None if self.projection is None else self.projection,
            seed=self.seed,
            step=self.step,
        )

    def quantized(self) -> "StudentHead":
        head = self.copy()
        head.w1 = _quantize(head.w1)
        head.b1 = _quantize(head.b1)
        head.w2 = _quantize(head.w2)
        head.b2 = _quantize(head.b2)
        return head


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediates cached by forward() for the exact backward pass."""

    inputs: np.ndarray  # (B, d_in)
    pre_act: np.ndarray  # (B, hidden)
    hidden: np.ndarray  # (B, hidden)
    embeddings: np.ndarray  # (B, d), unit rows
    norms: np.ndarray  # (B,)


@dataclass
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def _orthonormal_projection(d: int, d_in: int, rng: Rng) -> np.ndarray:
    """Frozen (d, d_in) map with orthonormal columns (d >= d_in) or rows."""
    rows, cols = (d, d_in) if d >= d_in else (d_in, d)
    q, r = np.linalg.qr(rng.normals(rows, cols))
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
    return q if d >= d_in else q.T


def init_identity(d_in: int, d: int, hidden: int, seed: int) -> StudentHead:
    """Head whose forward equals normalize(P·x) at step 0 (W2 = b2 = 0)."""
    if min(d_in, d, hidden) < 1:
        raise ShapeMismatchError("dims must be >= 1")
    rng = Rng(derive_seed(seed, "head-init"))
    # inputs are unit-norm vectors, not coordinate-scale ones: ||x|| = 1, so
    # pre-activation variance is w_scale^2 regardless of d_in; sqrt(2) keeps
    # the hidden layer O(1) where sqrt(2/d_in) would leave it ~1/sqrt(d_in)
    w1 = _quantize(rng.normals(hidden, d_in) * np.sqrt(2.0))
    projection = None
    if d_in != d:
        projection = _quantize(_orthonormal_projection(d, d_in, rng))
        projection.flags.writeable = False
    return StudentHead(
        w1=w1,
        b1=np.zeros(hidden),
        w2=np.zeros((d, hidden)),
        b2=np.zeros(d),
        projection=projection,
        seed=seed,
    )


def forward(head: StudentHead, features) -> tuple[np.ndarray, ForwardTrace]:
    """Unit-norm student embeddings for one feature vector or a batch."""
    x = as_f64(features)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.shape[1] != head.d_in:
        raise ShapeMismatchError(f"features have dim {x.shape[1]}, head expects {head.d_in}")
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow from pathological parameters surfaces as the explicit
        # finiteness check below, not as a warning
        pre_act = x @ head.w1.T + head.b1
        hidden = gelu(pre_act)
        base = x if head.projection is None else x @ head.projection.T
        summed = base + hidden @ head.w2.T + head.b2
        norms = row_norms(summed)
    if np.any(norms <= ZERO_NORM_FLOOR) or not np.all(np.isfinite(norms)):
        raise ZeroNormError("student embedding collapsed to zero norm")
    embeddings = summed / norms[:, np.newaxis]
    trace = ForwardTrace(
        inputs=x, pre_act=pre_act, hidden=hidden, embeddings=embeddings, norms=norms
    )
    return (embeddings[0] if single else embeddings), trace


def backward(head: StudentHead, trace: ForwardTrace, grad_embeddings) -> HeadGrads:
    """Exact reverse-mode gradients for the four trainable tensors.

    The normalization Jacobian (I - v v^T)/||s|| projects the incoming
    gradient onto the tangent space of the unit sphere before the affine
    layers; P and the inputs are frozen so no gradient flows to them.
    """
    g = as_f64(grad_embeddings)
    if g.ndim == 1:
        g = g[np.newaxis, :]
    if g.shape != trace.embeddings.shape:
        raise ShapeMismatchError(
            f"grad shape {g.shape} != embeddings shape {trace.embeddings.shape}"
        )
    v = trace.embeddings
    radial = (g * v).sum(axis=1, keepdims=True)
    d_summed = (g - radial * v) / trace.norms[:, np.newaxis]
    d_hidden = d_summed @ head.w2
    d_pre = d_hidden * gelu_prime(trace.pre_act)
    return HeadGrads(
        w1=d_pre.T @ trace.inputs,
        b1=d_pre.sum(axis=0),
        w2=d_summed.T @ trace.hidden,
        b2=d_summed.sum(axis=0),
    )


def save_checkpoint(head: StudentHead, path) -> None:
    """Single-file checkpoint: magic, JSON header, raw little-endian float32
    tensors in header order. Values are quantized to 32-bit on write."""
    head = head.quantized()
    tensors = [("w1", head.w1), ("b1", head.b1), ("w2", head.w2), ("b2", head.b2)]
    if head.projection is not None:
        tensors.append(("projection", head.projection))
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": "checkpoint",
        "d_in": head.d_in,
        "d": head.d,
        "hidden": head.hidden,
        "seed": head.seed,
        "step": head.step,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, tensor in tensors:
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path) -> StudentHead:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION or header.get("kind") != "checkpoint":
        raise FormatError(f"{path}: unsupported checkpoint header")
    offset = 16 + header_len
    arrays = {}
    for spec in header["tensors"]:
        size = int(np.prod(spec["shape"])) if spec["shape"] else 1
        end = offset + 4 * size
        if end > len(raw):
            raise FormatError(f"{path}: truncated checkpoint tensor {spec['name']!r}")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{path}: non-finite checkpoint tensor {spec['name']!r}")
        arrays[spec["name"]] = arr.reshape(spec["shape"])
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after checkpoint tensors")
    projection = arrays.get("projection")
    if projection is not None:
        projection.flags.writeable = False
    head = StudentHead(
        w1=arrays["w1"],
        b1=arrays["b1"],
        w2=arrays["w2"],
        b2=arrays["b2"],
        projection=projection,
        seed=header["seed"],
        step=header["step"],
    )
    if head.d_in != header["d_in"] or head.d != header["d"] or head.hidden != header["hidden"]:
        raise FormatError(f"{path}: tensor shapes disagree with checkpoint dims")
    return head
