"""Mini-batch training: wiring curation output, anchors, the student head,
the dual objective and the optimizer, with checkpointing and multi-seed runs.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .anchors import AnchorSet
from .curation import CuratedDataset
from .data import Dataset
from .errors import (
    ConfigError,
    DimMismatchError,
    EmptyDatasetError,
    NonFiniteLossError,
    ZeroNormError,
)
from .loss import LossConfig, bce_loss, distillation_loss, logits, logits_backward, one_hot_targets, total_loss
from .model import StudentHead, backward, forward, init_identity, save_checkpoint
from .numerics import AdamState, Rng, adam_step, derive_seed, sgd_step

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    epochs: int = 10
    hidden: int = 256
    seed: int = 0
    optimizer: str = "adam"
    loss: LossConfig = field(default_factory=LossConfig)
    # stop once total loss improves by less than this relative amount over
    # two consecutive epochs; 0 disables early stopping
    plateau_rel_tol: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")


@dataclass
class StepRecord:
    step: int
    bce: float
    distillation: float
    total: float


@dataclass
class TrainLog:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_mean_total: list[float] = field(default_factory=list)
    epoch_wall_seconds: list[float] = field(default_factory=list)
    stopped_after_epoch: int = 0
    checkpoint_path: str | None = None

    def to_json(self) -> dict:
        return {
            "steps": [
                {"step": s.step, "bce": s.bce, "distillation": s.distillation, "total": s.total}
                for s in self.steps
            ],
            "epoch_mean_total": self.epoch_mean_total,
            "epoch_wall_seconds": self.epoch_wall_seconds,
            "stopped_after_epoch": self.stopped_after_epoch,
            "checkpoint_path": self.checkpoint_path,
        }


@dataclass(frozen=True)
class Batch:
    features: np.ndarray  # (B, d_in)
    teacher: np.ndarray  # (B, d)
    targets: np.ndarray  # (B, C) one-hot
    ids: tuple[str, ...]


def resolve_training_arrays(dataset: Dataset, curated: CuratedDataset):
    """Stack features, teacher embeddings and bucket indices in entry order."""
    by_id = {ex.id: ex for ex in dataset.examples}
    missing = [example_id for example_id, _ in curated.entries if example_id not in by_id]
    if missing:
        raise DimMismatchError(f"curated ids missing from dataset, e.g. {missing[0]!r}")
    examples = [by_id[example_id] for example_id, _ in curated.entries]
    features = np.stack(
        [ex.teacher_embedding if ex.feature is None else ex.feature for ex in examples]
    )
    teacher = np.stack([ex.teacher_embedding for ex in examples])
    buckets = np.array([bucket for _, bucket in curated.entries], dtype=np.int64)
    ids = tuple(example_id for example_id, _ in curated.entries)
    return features, teacher, buckets, ids


def make_batches(
    features: np.ndarray,
    teacher: np.ndarray,
    buckets: np.ndarray,
    ids: tuple[str, ...],
    n_classes: int,
    batch_size: int,
    epoch_seed: int,
) -> list[Batch]:
    """Seeded shuffle, then contiguous chunks; the final partial batch is kept."""
    n = features.shape[0]
    if n == 0:
        raise EmptyDatasetError("cannot make batches from an empty curated set")
    order = Rng(epoch_seed).permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        pick = order[start : start + batch_size]
        batches.append(
            Batch(
                features=features[pick],
                teacher=teacher[pick],
                targets=one_hot_targets(buckets[pick], n_classes),
                ids=tuple(ids[i] for i in pick),
            )
        )
    return batches


def loss_and_grads(head: StudentHead, batch: Batch, anchors: AnchorSet, config: LossConfig):
    """One forward/backward pass: losses plus gradients for the 4 tensors.

    This is the production training step; the gradient-check suite compares
    its output against central finite differences of the scalar loss.
    """
    embeddings, trace = forward(head, batch.features)
    z = logits(embeddings, anchors.anchor_matrix, config)
    bce, d_logits = bce_loss(z, batch.targets)
    dist, d_dist = distillation_loss(embeddings, batch.teacher)
    total = total_loss(bce, dist, config.distill_weight)
    grad_embeddings = logits_backward(d_logits, anchors.anchor_matrix, config)
    grad_embeddings = grad_embeddings + config.distill_weight * d_dist
    grads = backward(head, trace, grad_embeddings)
    return total, bce, dist, grads


def _check_alignment(dataset: Dataset, curated: CuratedDataset, anchors: AnchorSet):
    if anchors.d != dataset.d:
        raise DimMismatchError(f"anchor dim {anchors.d} != dataset embedding dim {dataset.d}")
    if tuple(curated.bucket_axis) != tuple(anchors.class_axis):
        raise DimMismatchError(
            f"curated bucket axis {curated.bucket_axis} != anchor class axis {anchors.class_axis}"
        )


def fit(
    dataset: Dataset,
    curated: CuratedDataset,
    anchors: AnchorSet,
    config: TrainConfig,
    checkpoint_path=None,
) -> tuple[StudentHead, TrainLog]:
    """Train the student head; deterministic given (inputs, config).

    Final parameters are quantized to their 32-bit checkpoint form before
    returning, so the in-memory head and the saved checkpoint agree exactly.
    """
    _check_alignment(dataset, curated, anchors)
    if not curated.entries:
        raise EmptyDatasetError("curated dataset has no entries")
    features, teacher, buckets, ids = resolve_training_arrays(dataset, curated)
    head = init_identity(dataset.d_in, dataset.d, config.hidden, derive_seed(config.seed, "init"))
    opt_states = {
        name: AdamState(learning_rate=config.learning_rate)
        for name in head.trainable()
    }
    log = TrainLog()
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        epoch_totals = []
        batches = make_batches(
            features,
            teacher,
            buckets,
            ids,
            anchors.n_classes,
            config.batch_size,
            derive_seed(config.seed, "epoch", epoch),
        )
        for batch in batches:
            try:
                total, bce, dist, grads = loss_and_grads(head, batch, anchors, config.loss)
            except ZeroNormError as exc:
                raise NonFiniteLossError(step, f"step {step}: {exc}") from exc
            if not np.isfinite(total):
                raise NonFiniteLossError(step)
            step += 1
            tensors = head.trainable()
            for name, grad in grads.tensors().items():
                if config.optimizer == "adam":
                    updated, opt_states[name] = adam_step(tensors[name], grad, opt_states[name])
                else:
                    updated = sgd_step(tensors[name], grad, config.learning_rate)
                setattr(head, name, updated)
            log.steps.append(StepRecord(step=step, bce=bce, distillation=dist, total=total))
            epoch_totals.append(total)
        log.epoch_mean_total.append(float(np.mean(epoch_totals)))
        log.epoch_wall_seconds.append(time.perf_counter() - t0)
        log.stopped_after_epoch = epoch + 1
        if config.plateau_rel_tol > 0 and epoch >= 2:
            prev = log.epoch_mean_total[epoch - 2]
            improvement = (prev - log.epoch_mean_total[epoch]) / max(abs(prev), 1e-12)
            if improvement < config.plateau_rel_tol:
                logger.info("stopping at epoch %d: loss plateau", epoch + 1)
                break
    head.step = step
    head = head.quantized()
    if checkpoint_path is not None:
        save_checkpoint(head, checkpoint_path)
        log.checkpoint_path = str(checkpoint_path)
    return head, log


def run_multi_seed(
    dataset: Dataset,
    curated: CuratedDataset,
    anchors: AnchorSet,
    config: TrainConfig,
    seeds,
    out_dir=None,
) -> list[tuple[int, StudentHead, TrainLog]]:
    """Independent fit per seed; artifacts are named by seed."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("run_multi_seed needs at least one seed")
    results = []
    for seed in seeds:
        path = None
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            path = Path(out_dir) / f"head_seed{seed}.ckpt"
        head, log = fit(dataset, curated, anchors, replace(config, seed=seed), path)
        results.append((seed, head, log))
    return results
