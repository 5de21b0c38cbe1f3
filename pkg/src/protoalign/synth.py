"""Synthetic embedding benchmarks with controlled co-occurrence entanglement.

The generative story mirrors the failure mode the refinement targets: each
finding owns an orthonormal ground-truth prototype, and an example's teacher
embedding is the normalized blend of its primary prototype with the
prototypes sampled as co-occurring, plus angular noise.

Entanglement is a property of the frozen encoder, not of the labels, so the
visual pull between two findings is symmetric in their co-occurrence: an
example of class b can be dragged toward a frequently co-occurring class t
without carrying t's label (the encoder merged the clusters; the labeler
did not). Per example and pair, one uniform draw decides both, so a labeled
co-occurrence always comes with its visual blend and the symmetric excess
produces blend-only confusions. Text anchors stay clean. Train-split labels
can additionally be flipped at a configurable rate (report-derived labels
are noisy; the consensus-labeled test split stays clean).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .anchors import (
    COMPLEX_NEGATIVE_TEMPLATES,
    COMPLEX_POSITIVE_TEMPLATES,
    expand_template,
)
from .data import (
    Dataset,
    LabelVocabulary,
    TextArchive,
    make_example,
    make_prompt,
)
from .errors import ConfigError
from .numerics import Rng, derive_seed, l2_normalize

HEALTHY = "healthy"


@dataclass(frozen=True)
class SynthConfig:
    findings: tuple[str, ...]
    counts: dict[str, dict[str, int]]  # split -> {finding or "healthy": count}
    cooccurrence: dict[str, dict[str, float]] = field(default_factory=dict)
    dim: int = 64
    dispersion: float | dict[str, float] = 0.35  # RMS angular noise per class
    entanglement: float = 0.6  # blend weight toward sampled co-occurring prototypes
    label_noise: float = 0.0  # train-only per-label flip probability
    anchor_noise: float = 0.05
    modality_gap: float = 0.75  # text-cone weight in every anchor embedding
    test_shift: float = 0.0  # covariate shift applied to test-split embeddings
    seed: int = 0

    def __post_init__(self):
        if self.dim < 4:
            raise ConfigError(f"dim must be >= 4, got {self.dim}")
        if len(self.findings) < 2:
            raise ConfigError("need at least two findings")
        if self.dim < len(self.findings) + 1:
            raise ConfigError(
                "dim must exceed the number of findings (orthonormal prototypes plus text cone)"
            )
        if not 0.0 <= self.modality_gap < 1.0:
            raise ConfigError(f"modality_gap must be in [0, 1), got {self.modality_gap}")
        if self.test_shift < 0.0:
            raise ConfigError(f"test_shift must be >= 0, got {self.test_shift}")
        if HEALTHY in self.findings:
            raise ConfigError(f"{HEALTHY!r} is reserved for unlabeled examples")
        if not 0.0 <= self.entanglement <= 1.0:
            raise ConfigError(f"entanglement must be in [0, 1], got {self.entanglement}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError(f"label_noise must be in [0, 1), got {self.label_noise}")
        for split, per_class in self.counts.items():
            if split not in ("train", "test"):
                raise ConfigError(f"unknown split {split!r} in counts")
            for name, count in per_class.items():
                if name != HEALTHY and name not in self.findings:
                    raise ConfigError(f"count for unknown finding {name!r}")
                if count < 0:
                    raise ConfigError(f"negative count for {name!r}")
        for row, cols in self.cooccurrence.items():
            if row not in self.findings:
                raise ConfigError(f"co-occurrence row for unknown finding {row!r}")
            for col, prob in cols.items():
                if col not in self.findings or col == row:
                    raise ConfigError(f"bad co-occurrence column {col!r} in row {row!r}")
                if not 0.0 <= prob <= 1.0:
                    raise ConfigError(f"co-occurrence probability {prob} out of [0, 1]")

    def dispersion_for(self, finding: str) -> float:
        if isinstance(self.dispersion, dict):
            return float(self.dispersion.get(finding, 0.0))
        return float(self.dispersion)

    def to_json(self) -> dict:
        return {
            "findings": list(self.findings),
            "counts": {s: dict(c) for s, c in self.counts.items()},
            "cooccurrence": {r: dict(c) for r, c in self.cooccurrence.items()},
            "dim": self.dim,
            "dispersion": self.dispersion if not isinstance(self.dispersion, dict) else dict(self.dispersion),
            "entanglement": self.entanglement,
            "label_noise": self.label_noise,
            "anchor_noise": self.anchor_noise,
            "modality_gap": self.modality_gap,
            "test_shift": self.test_shift,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SynthConfig":
        data = dict(payload)
        if "findings" not in data or "counts" not in data:
            raise ConfigError("synth config needs 'findings' and 'counts'")
        data["findings"] = tuple(data["findings"])
        return cls(**data)


@dataclass(frozen=True)
class SynthTruth:
    prototypes: dict[str, np.ndarray]
    config: SynthConfig

    def to_json(self) -> dict:
        return {
            "prototypes": {k: [float(x) for x in v] for k, v in self.prototypes.items()},
            "config": self.config.to_json(),
        }


def _orthonormal_rows(n: int, d: int, rng: Rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normals(d, n))
    return (q * np.sign(np.diag(r))).T


def generate(config: SynthConfig) -> tuple[Dataset, TextArchive, SynthTruth]:
    """Deterministic archives from a config; equal seeds give equal bytes."""
    vocab = LabelVocabulary(config.findings)
    # rows 0..C-1 are class prototypes; the extra row is the shared text cone
    # every anchor leans into (images and text occupy separate regions of the
    # space; the pos/neg score difference cancels the shared component)
    frame = _orthonormal_rows(len(config.findings) + 1, config.dim, Rng(derive_seed(config.seed, "prototypes")))
    prototypes = frame[: len(config.findings)]
    text_cone = frame[len(config.findings)]
    proto_by_name = {name: prototypes[i] for i, name in enumerate(config.findings)}
    # fixed covariate-shift direction for the held-out split, orthogonal to
    # every prototype and the text cone: teacher-space anchor cosines barely
    # move, but a head that over-warped the training manifold pays for it here
    raw_shift = Rng(derive_seed(config.seed, "test-shift")).normals(config.dim)
    raw_shift = raw_shift - frame.T @ (frame @ raw_shift)
    shift = config.test_shift * l2_normalize(raw_shift)

    examples = []
    for split in ("train", "test"):
        per_class = config.counts.get(split, {})
        for c, name in enumerate(config.findings):
            count = per_class.get(name, 0)
            rng = Rng(derive_seed(config.seed, "examples", split, name))
            label_prob = config.cooccurrence.get(name, {})
            # visual confusion is symmetric in the pairwise co-occurrence
            blend_prob = {
                other: max(
                    label_prob.get(other, 0.0),
                    config.cooccurrence.get(other, {}).get(name, 0.0),
                )
                for other in config.findings
                if other != name
            }
            disp = config.dispersion_for(name)
            for i in range(count):
                labeled, blended = set(), []
                for other in config.findings:
                    if other == name:
                        continue
                    u = rng.random()
                    if u < label_prob.get(other, 0.0):
                        labeled.add(other)
                        blended.append(other)
                    elif u < blend_prob[other]:
                        blended.append(other)
                noise = disp * rng.normals(config.dim) / np.sqrt(config.dim)
                mix = prototypes[c]
                if blended and config.entanglement > 0.0:
                    pulled = np.mean([proto_by_name[s] for s in blended], axis=0)
                    mix = (1.0 - config.entanglement) * prototypes[c] + config.entanglement * pulled
                labels = [
                    1 if (f == name or f in labeled) else 0 for f in config.findings
                ]
                vec = mix + noise if split == "train" else mix + noise + shift
                examples.append(
                    make_example(
                        f"{split}-{name}-{i:05d}",
                        labels,
                        l2_normalize(vec),
                        split,
                    )
                )
        healthy_count = per_class.get(HEALTHY, 0)
        rng = Rng(derive_seed(config.seed, "examples", split, HEALTHY))
        for i in range(healthy_count):
            vec = rng.normals(config.dim)
            if split == "test":
                vec = l2_normalize(vec) + shift
            examples.append(
                make_example(
                    f"{split}-{HEALTHY}-{i:05d}",
                    [0] * len(config.findings),
                    l2_normalize(vec),
                    split,
                )
            )

    if config.label_noise > 0.0:
        noise_rng = Rng(derive_seed(config.seed, "label-noise"))
        noisy = []
        for ex in examples:
            if ex.split != "train":
                noisy.append(ex)
                continue
            labels = list(ex.labels)
            for j in range(len(labels)):
                if noise_rng.random() < config.label_noise:
                    labels[j] = 1 - labels[j]
            noisy.append(make_example(ex.id, labels, ex.teacher_raw, ex.split))
        examples = noisy

    dataset = Dataset.from_examples(vocab, examples, d=config.dim)

    anchor_rng = Rng(derive_seed(config.seed, "anchors"))
    gap = config.modality_gap
    prompts = []
    for name in config.findings:
        proto = proto_by_name[name]
        for template in COMPLEX_POSITIVE_TEMPLATES:
            jitter = config.anchor_noise * anchor_rng.normals(config.dim) / np.sqrt(config.dim)
            vec = gap * text_cone + (1.0 - gap) * proto + jitter
            prompts.append(
                make_prompt(expand_template(template, name), name, "positive", l2_normalize(vec))
            )
        for template in COMPLEX_NEGATIVE_TEMPLATES:
            jitter = config.anchor_noise * anchor_rng.normals(config.dim) / np.sqrt(config.dim)
            vec = gap * text_cone - (1.0 - gap) * proto + jitter
            prompts.append(
                make_prompt(expand_template(template, name), name, "negative", l2_normalize(vec))
            )
    text = TextArchive(vocabulary=vocab, prompts=tuple(prompts), d=config.dim)
    truth = SynthTruth(prototypes={n: proto_by_name[n] for n in config.findings}, config=config)
    return dataset, text, truth


BENCHMARK_NAME = "entangled-ptx"


def benchmark_config(seed: int = 2024) -> SynthConfig:
    """The bundled benchmark: a rare target finding whose training-set
    embeddings are strongly entangled with one frequent confounder and mildly
    with two others, long-tailed backgrounds, noisy train labels, and a
    rare-positive test split."""
    return SynthConfig(
        findings=(
            "pneumothorax",
            "pleural_effusion",
            "atelectasis",
            "edema",
            "consolidation",
            "pneumonia",
        ),
        counts={
            "train": {
                "pneumothorax": 400,
                "pleural_effusion": 1000,
                "atelectasis": 900,
                "edema": 750,
                "consolidation": 650,
                "pneumonia": 550,
                HEALTHY: 750,
            },
            "test": {
                "pneumothorax": 40,
                "pleural_effusion": 430,
                "atelectasis": 380,
                "edema": 320,
                "consolidation": 270,
                "pneumonia": 230,
                HEALTHY: 330,
            },
        },
        cooccurrence={
            "pneumothorax": {
                "pleural_effusion": 0.5,
                "atelectasis": 0.3,
                "edema": 0.2,
                "consolidation": 0.1,
            },
            "pleural_effusion": {"atelectasis": 0.25},
        },
        dim=64,
        dispersion=0.2,
        entanglement=0.6,
        label_noise=0.03,
        anchor_noise=0.05,
        test_shift=0.1,
        seed=seed,
    )


PRESETS = {BENCHMARK_NAME: benchmark_config}


def write_truth(truth: SynthTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), indent=2, sort_keys=True) + "\n")
