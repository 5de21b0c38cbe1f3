"""The dual objective: anchor BCE over temperature-scaled cosine logits plus
cosine distillation against the frozen teacher.

Loss functions treat the (already unit-norm) student embeddings as free
variables and return gradients with respect to them; the model's backward
pass owns the normalization Jacobian and everything below it.

On the logit scale: the formula Z = tau * cos compresses logits into
[-tau, tau] for tau < 1, which leaves BCE nearly flat; conventional CLIP
practice divides by tau instead. Both are supported, dividing is the
default, and nothing else differs between the modes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CountMismatchError, ShapeMismatchError

LOGIT_MODES = ("scale_by_inverse_tau", "scale_by_tau")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    logit_mode: str = "scale_by_inverse_tau"
    distill_weight: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.logit_mode not in LOGIT_MODES:
            raise ConfigError(f"logit_mode must be one of {LOGIT_MODES}, got {self.logit_mode!r}")
        if self.distill_weight < 0:
            raise ConfigError(f"distill_weight must be >= 0, got {self.distill_weight}")

    @property
    def logit_scale(self) -> float:
        if self.logit_mode == "scale_by_inverse_tau":
            return 1.0 / self.temperature
        return self.temperature


def one_hot_targets(bucket_indices, n_classes: int) -> np.ndarray:
    """One-hot target matrix Y; exactly one class per curated example."""
    idx = np.asarray(bucket_indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatchError("bucket indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
        raise ShapeMismatchError(f"bucket index out of range for {n_classes} classes")
    targets = np.zeros((idx.size, n_classes))
    targets[np.arange(idx.size), idx] = 1.0
    return targets


def logits(embeddings: np.ndarray, anchor_matrix: np.ndarray, config: LossConfig) -> np.ndarray:
    """Z[i, c] = scale * cos(v_i, t_c); inputs are unit rows so cos is a dot."""
    if embeddings.shape[-1] != anchor_matrix.shape[-1]:
        raise ShapeMismatchError(
            f"embedding dim {embeddings.shape[-1]} != anchor dim {anchor_matrix.shape[-1]}"
        )
    return config.logit_scale * (embeddings @ anchor_matrix.T)


def logits_backward(d_logits: np.ndarray, anchor_matrix: np.ndarray, config: LossConfig) -> np.ndarray:
    """Chain dL/dZ back to dL/d(embeddings)."""
    return config.logit_scale * (d_logits @ anchor_matrix)


def _softplus(x: np.ndarray) -> np.ndarray:
    # max(x, 0) + log1p(exp(-|x|)): stable for any magnitude
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_loss(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all B*C logits, with its gradient.

    Element loss is y*softplus(-z) + (1-y)*softplus(z); the mean (rather
    than a sum) keeps the distillation weight's meaning independent of batch
    size. Gradient is (sigmoid(z) - y) / (B*C).
    """
    if z.shape != y.shape:
        raise ShapeMismatchError(f"logits {z.shape} vs targets {y.shape}")
    if z.size == 0:
        raise CountMismatchError("bce_loss needs at least one element")
    per_element = y * _softplus(-z) + (1.0 - y) * _softplus(z)
    loss = float(per_element.mean())
    grad = (_sigmoid(z) - y) / z.size
    return loss, grad


def distillation_loss(student: np.ndarray, teacher: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cosine distance (1/B) sum(1 - cos(v_i, v_i_teacher)) over the
    batch, with gradient -teacher/B wrt the unit-norm student rows."""
    if student.ndim != 2 or teacher.ndim != 2:
        raise ShapeMismatchError("distillation_loss expects batched embeddings")
    if student.shape[0] != teacher.shape[0]:
        raise CountMismatchError(
            f"student batch {student.shape[0]} != teacher batch {teacher.shape[0]}"
        )
    if student.shape[1] != teacher.shape[1]:
        raise ShapeMismatchError(
            f"student dim {student.shape[1]} != teacher dim {teacher.shape[1]}"
        )
    if student.shape[0] == 0:
        raise CountMismatchError("distillation_loss needs at least one row")
    batch = student.shape[0]
    cos = np.clip((student * teacher).sum(axis=1), -1.0, 1.0)
    loss = float((1.0 - cos).mean())
    grad = -teacher / batch
    return loss, grad


def total_loss(bce: float, distillation: float, distill_weight: float) -> float:
    """Weighted sum of the two objectives."""
    if distill_weight < 0:
        raise ConfigError("distill_weight must be >= 0")
    return bce + distill_weight * distillation
