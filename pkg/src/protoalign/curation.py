"""Curated training cohorts.

The curated set is the union of the full target cohort (every example whose
target label is set, co-occurring findings notwithstanding) and, per
background finding, the pure single-pathology subset capped at K seeded
random samples. Each curated example lands in exactly one bucket, which is
the one-hot supervision class used for training.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .data import Dataset
from .errors import ConfigError, EmptyTargetError, UnknownLabelError
from .numerics import Rng, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurationConfig:
    """Target finding, background cap K, sampling seed, optional restricted
    background set (defaults to every non-target finding)."""

    target: str
    cap: int = 4000
    seed: int = 0
    background: tuple[str, ...] | None = None


@dataclass(frozen=True)
class BucketStats:
    finding: str
    pre_cap: int
    post_cap: int


@dataclass(frozen=True)
class CuratedDataset:
    """Entries of (example id, bucket index); bucket axis is the target
    followed by the background findings in vocabulary order."""

    target: str
    bucket_axis: tuple[str, ...]
    entries: tuple[tuple[str, int], ...]
    stats: tuple[BucketStats, ...]

    def bucket_ids(self, finding: str) -> list[str]:
        idx = self.bucket_axis.index(finding)
        return [example_id for example_id, b in self.entries if b == idx]


def resolve_backgrounds(dataset: Dataset, config: CurationConfig) -> tuple[str, ...]:
    """Background findings in vocabulary order, validated against the config."""
    if config.target not in dataset.vocabulary:
        raise UnknownLabelError(f"unknown target finding {config.target!r}")
    if config.cap < 1:
        raise ConfigError(f"cap must be >= 1, got {config.cap}")
    if config.background is None:
        return tuple(n for n in dataset.vocabulary.names if n != config.target)
    chosen = set(config.background)
    if config.target in chosen:
        raise ConfigError("target finding cannot be its own background")
    for name in chosen:
        if name not in dataset.vocabulary:
            raise UnknownLabelError(f"unknown background finding {name!r}")
    return tuple(n for n in dataset.vocabulary.names if n in chosen)


def target_cohort(dataset: Dataset, target: str, split: str | None = None) -> list[str]:
    """Ids of every example labeled with the target, co-occurrence ignored."""
    t = dataset.vocabulary.index_of(target)
    return [ex.id for ex in dataset.split_examples(split) if ex.labels[t] == 1]


def background_subset(
    dataset: Dataset,
    target: str,
    finding: str,
    background: tuple[str, ...] | None = None,
    split: str | None = None,
) -> list[str]:
    """Ids of pure single-pathology examples for ``finding``: that label set,
    the target unset, and every other background finding unset."""
    if finding == target:
        raise ConfigError("background subset cannot use the target finding")
    t = dataset.vocabulary.index_of(target)
    b = dataset.vocabulary.index_of(finding)
    if background is None:
        background = tuple(n for n in dataset.vocabulary.names if n != target)
    others = [dataset.vocabulary.index_of(c) for c in background if c != finding]
    out = []
    for ex in dataset.split_examples(split):
        if ex.labels[b] == 1 and ex.labels[t] == 0 and all(ex.labels[c] == 0 for c in others):
            out.append(ex.id)
    return out


def curate(dataset: Dataset, config: CurationConfig, split: str | None = "train") -> CuratedDataset:
    """Build the curated training set; pure function of (dataset, config).

    Each background bucket draws min(K, subset size) ids without replacement
    from its own stream seeded by hash(config.seed, finding), so results do
    not depend on bucket evaluation order. Defaults to the train split so a
    held-out test split can never leak into training.
    """
    backgrounds = resolve_backgrounds(dataset, config)
    axis = (config.target, *backgrounds)
    cohort = target_cohort(dataset, config.target, split)
    if not cohort:
        raise EmptyTargetError(f"no examples labeled {config.target!r}; nothing to refine")
    entries: list[tuple[str, int]] = [(example_id, 0) for example_id in cohort]
    stats = [BucketStats(config.target, len(cohort), len(cohort))]
    for bucket_index, finding in enumerate(backgrounds, start=1):
        subset = background_subset(dataset, config.target, finding, backgrounds, split)
        keep = min(config.cap, len(subset))
        if not subset:
            logger.warning("background bucket %r is empty", finding)
        rng = Rng(derive_seed(config.seed, "bucket", finding))
        picked = sorted(rng.sample_prefix(len(subset), keep))
        entries.extend((subset[i], bucket_index) for i in picked)
        stats.append(BucketStats(finding, len(subset), keep))
    return CuratedDataset(
        target=config.target,
        bucket_axis=axis,
        entries=tuple(entries),
        stats=tuple(stats),
    )


def save_curation_csv(curated: CuratedDataset, path) -> None:
    """Sidecar CSV of (id, bucket label)."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "bucket"])
        for example_id, bucket in curated.entries:
            writer.writerow([example_id, curated.bucket_axis[bucket]])


def load_curation_csv(path) -> list[tuple[str, str]]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "bucket"]:
            raise ConfigError(f"{path}: curation CSV header must be id,bucket")
        return [(row[0], row[1]) for row in reader]


def entries_for_axis(pairs: list[tuple[str, str]], bucket_axis: tuple[str, ...]) -> tuple[tuple[str, int], ...]:
    """Map (id, bucket label) pairs onto a class axis, e.g. the anchor axis."""
    index = {name: i for i, name in enumerate(bucket_axis)}
    entries = []
    for example_id, label in pairs:
        if label not in index:
            raise UnknownLabelError(f"curated bucket {label!r} is not on the class axis")
        entries.append((example_id, index[label]))
    return tuple(entries)


def curation_report(dataset: Dataset, config: CurationConfig, curated: CuratedDataset) -> dict:
    """JSON-ready summary: per-bucket sizes pre/post cap plus the target's
    co-occurrence counts (used to pick confounder classes)."""
    from .data import cooccurrence_table

    return {
        "target": config.target,
        "cap": config.cap,
        "seed": config.seed,
        "bucket_axis": list(curated.bucket_axis),
        "buckets": [
            {"finding": s.finding, "pre_cap": s.pre_cap, "post_cap": s.post_cap}
            for s in curated.stats
        ],
        "total_entries": len(curated.entries),
        "cooccurrence_with_target": cooccurrence_table(dataset, config.target, split="train"),
    }
