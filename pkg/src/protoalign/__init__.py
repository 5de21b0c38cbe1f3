"""Prototype-anchored refinement of frozen embeddings.

Curates cohort-focused training subsets from multi-label data, trains a
small residual head against frozen text anchors with a distillation
constraint, scores zero-shot against positive/negative anchor pairs, and
evaluates with rank-based AUC plus a sensitivity-anchored operating point.
"""

from .anchors import AnchorSet, build_anchor, build_anchor_set
from .curation import CuratedDataset, CurationConfig, curate
from .data import (
    Dataset,
    LabeledExample,
    LabelVocabulary,
    TextArchive,
    cooccurrence_table,
    load_archive,
    load_text_archive,
    save_archive,
    save_text_archive,
)
from .evaluation import (
    OperatingPoint,
    RunAggregate,
    aggregate_runs,
    evaluate,
    operating_point,
    roc_auc,
    zero_shot_score,
)
from .loss import LossConfig, bce_loss, distillation_loss, logits, total_loss
from .model import StudentHead, backward, forward, init_identity, load_checkpoint, save_checkpoint
from .numerics import AdamState, Rng, adam_step, cosine, l2_normalize
from .synth import SynthConfig, benchmark_config, generate
from .train import TrainConfig, TrainLog, fit, run_multi_seed

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AnchorSet",
    "CuratedDataset",
    "CurationConfig",
    "Dataset",
    "LabelVocabulary",
    "LabeledExample",
    "LossConfig",
    "OperatingPoint",
    "Rng",
    "RunAggregate",
    "StudentHead",
    "SynthConfig",
    "TextArchive",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "aggregate_runs",
    "backward",
    "bce_loss",
    "benchmark_config",
    "build_anchor",
    "build_anchor_set",
    "cooccurrence_table",
    "cosine",
    "curate",
    "distillation_loss",
    "evaluate",
    "fit",
    "forward",
    "generate",
    "init_identity",
    "l2_normalize",
    "load_archive",
    "load_checkpoint",
    "load_text_archive",
    "logits",
    "operating_point",
    "roc_auc",
    "run_multi_seed",
    "save_archive",
    "save_checkpoint",
    "save_text_archive",
    "total_loss",
    "zero_shot_score",
]
