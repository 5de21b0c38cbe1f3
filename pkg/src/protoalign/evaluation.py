"""Zero-shot scoring and the measurement protocol: ROC AUC, the
sensitivity-anchored operating point, per-finding report tables, and
multi-run aggregation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet
from .data import Dataset, cooccurrence_table
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    MissingAnchorError,
    ShapeMismatchError,
    UnknownLabelError,
)
from .model import StudentHead, forward
from .numerics import as_f64, l2_normalize

SCORE_MODES = ("difference", "softmax")


def zero_shot_score(embedding, t_pos, t_neg=None, mode: str = "difference"):
    """Score one embedding (or each row of a batch) against the positive and
    negative anchors.

    difference: cos(v, t_pos) - cos(v, t_neg); falls back to the bare
    positive cosine when no negative anchor exists.
    softmax: pair probability exp(c_pos) / (exp(c_pos) + exp(c_neg)), a
    monotone transform of the difference; requires the negative anchor.
    """
    if mode not in SCORE_MODES:
        raise ConfigError(f"score mode must be one of {SCORE_MODES}, got {mode!r}")
    v = as_f64(embedding)
    pos = as_f64(t_pos)
    if v.shape[-1] != pos.shape[0]:
        raise ShapeMismatchError(f"embedding dim {v.shape[-1]} != anchor dim {pos.shape[0]}")
    c_pos = v @ pos
    if t_neg is None:
        if mode == "softmax":
            raise MissingAnchorError("softmax scoring needs a negative anchor")
        return c_pos
    c_neg = v @ as_f64(t_neg)
    if mode == "difference":
        return c_pos - c_neg
    return 1.0 / (1.0 + np.exp(-(c_pos - c_neg)))


def _validate_scores(scores, labels):
    s = as_f64(scores)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeMismatchError("scores and labels must be equal-length vectors")
    if not np.all(np.isfinite(s)):
        raise DegenerateLabelsError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise DegenerateLabelsError("labels must be 0/1")
    return s, y.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank tie correction:
    P(score_pos > score_neg) + 0.5 P(score_pos = score_neg)."""
    s, y = _validate_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"AUC needs at least one positive and one negative ({n_pos} pos, {n_neg} neg)"
        )
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "f1": self.f1,
        }


def operating_point(scores, labels, target_sensitivity: float) -> OperatingPoint:
    """Metrics at the largest threshold whose sensitivity (with the
    score >= threshold decision rule, ties classified positive) still
    reaches ``target_sensitivity``."""
    if not 0.0 < target_sensitivity <= 1.0:
        raise ConfigError(f"target sensitivity must be in (0, 1], got {target_sensitivity}")
    s, y = _validate_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0:
        raise DegenerateLabelsError("operating point needs at least one positive")
    # smallest k with k/n_pos >= target, robust to float fuzz in t*n
    k = math.ceil(target_sensitivity * n_pos)
    if k > 1 and (k - 1) / n_pos >= target_sensitivity:
        k -= 1
    k = min(max(k, 1), n_pos)
    pos_desc = np.sort(s[y == 1])[::-1]
    threshold = float(pos_desc[k - 1])
    tp = int(np.count_nonzero(s[y == 1] >= threshold))
    fp = int(np.count_nonzero(s[y == 0] >= threshold))
    tn = n_neg - fp
    sensitivity = tp / n_pos
    specificity = tn / n_neg if n_neg else 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2.0 * precision * sensitivity / (precision + sensitivity) if precision + sensitivity else 0.0
    return OperatingPoint(
        threshold=threshold,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        f1=f1,
    )


@dataclass(frozen=True)
class RunAggregate:
    aucs: tuple[float, ...]
    mean: float
    sd: float | None
    ci_low: float | None
    ci_high: float | None

    def to_json(self) -> dict:
        return {
            "aucs": list(self.aucs),
            "mean": self.mean,
            "sd": self.sd,
            "ci95": None if self.sd is None else [self.ci_low, self.ci_high],
        }


def aggregate_runs(aucs) -> RunAggregate:
    """Mean, sample SD and normal-approximation 95% CI across seeds; a single
    run reports the mean alone."""
    values = tuple(float(a) for a in aucs)
    if not values:
        raise ConfigError("aggregate_runs needs at least one AUC")
    mean = float(np.mean(values))
    if len(values) < 2:
        return RunAggregate(aucs=values, mean=mean, sd=None, ci_low=None, ci_high=None)
    sd = float(np.std(values, ddof=1))
    half = 1.96 * sd / math.sqrt(len(values))
    return RunAggregate(aucs=values, mean=mean, sd=sd, ci_low=mean - half, ci_high=mean + half)


def student_embeddings(dataset: Dataset, head: StudentHead | None, split: str | None):
    """Embeddings for a split: head forward over its inputs, or the
    re-normalized teacher when ``head`` is None (the frozen baseline).

    An identity-initialized head and the baseline produce bit-identical
    embeddings because both reduce to the same normalization arithmetic.
    """
    examples = dataset.split_examples(split)
    if not examples:
        raise DegenerateLabelsError(f"no examples in split {split!r}")
    teacher = np.stack([ex.teacher_embedding for ex in examples])
    if head is None:
        return examples, l2_normalize(teacher)
    inputs = np.stack(
        [ex.teacher_embedding if ex.feature is None else ex.feature for ex in examples]
    )
    embeddings, _ = forward(head, inputs)
    return examples, embeddings


def evaluate(
    dataset: Dataset,
    anchors: AnchorSet,
    head: StudentHead | None = None,
    findings=None,
    target_sensitivity: float = 0.95,
    score_mode: str = "difference",
    split: str = "test",
) -> dict:
    """Per-finding AUC plus the target's operating point, as a JSON-ready
    report. Per-finding failures (missing anchor, one-class labels) are
    recorded on the row instead of aborting the run."""
    examples, embeddings = student_embeddings(dataset, head, split)
    if findings is None:
        findings = list(anchors.class_axis)
    train_cooc = cooccurrence_table(dataset, anchors.target, split="train")
    rows = []
    operating = None
    for finding in findings:
        row: dict = {
            "finding": finding,
            "cooccurrence_with_target_train": train_cooc.get(finding),
        }
        try:
            labels = dataset.label_column(finding, split)
            scores = zero_shot_score(
                embeddings,
                anchors.positive(finding),
                anchors.negative(finding),
                mode=score_mode,
            )
            row["n_pos"] = int(labels.sum())
            row["n_neg"] = int(labels.size - labels.sum())
            row["auc"] = roc_auc(scores, labels)
            if finding == anchors.target:
                operating = operating_point(scores, labels, target_sensitivity)
        except (MissingAnchorError, DegenerateLabelsError, UnknownLabelError) as exc:
            row["auc"] = None
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return {
        "split": split,
        "score_mode": score_mode,
        "target": anchors.target,
        "target_sensitivity": target_sensitivity,
        "baseline": head is None,
        "findings": rows,
        "operating_point": None if operating is None else operating.to_json(),
    }


def render_table(report: dict) -> str:
    """Aligned text rendering of an evaluation report."""
    lines = [
        f"split={report['split']} mode={report['score_mode']} target={report['target']}",
        f"{'finding':<24} {'AUC':>8} {'pos':>6} {'neg':>6}  note",
    ]
    for row in report["findings"]:
        auc = "-" if row.get("auc") is None else f"{row['auc']:.4f}"
        note = row.get("error", "")
        lines.append(
            f"{row['finding']:<24} {auc:>8} {row.get('n_pos', 0):>6} {row.get('n_neg', 0):>6}  {note}"
        )
    op = report.get("operating_point")
    if op:
        lines.append(
            "operating point: "
            f"threshold={op['threshold']:.6f} sensitivity={op['sensitivity']:.4f} "
            f"specificity={op['specificity']:.4f} precision={op['precision']:.4f} f1={op['f1']:.4f}"
        )
    return "\n".join(lines)


def pca_projection(embeddings: np.ndarray) -> np.ndarray:
    """Top-2 principal component scores of the (centered) embeddings, with a
    deterministic sign convention."""
    centered = embeddings - embeddings.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros((2 - vt.shape[0], vt.shape[1]))])
    signs = np.sign(components[np.arange(components.shape[0]), np.argmax(np.abs(components), axis=1)])
    signs[signs == 0] = 1.0
    components = components * signs[:, np.newaxis]
    return centered @ components.T


def dump_embeddings(
    dataset: Dataset,
    head: StudentHead | None,
    finding: str,
    split: str | None = "test",
) -> list[list]:
    """Rows of (id, finding label, pc1, pc2, full embedding) for external
    plotting of the embedding space."""
    examples, embeddings = student_embeddings(dataset, head, split)
    col = dataset.vocabulary.index_of(finding)
    projected = pca_projection(embeddings)
    rows = []
    for ex, pc, emb in zip(examples, projected, embeddings):
        rows.append([ex.id, int(ex.labels[col]), float(pc[0]), float(pc[1]), *map(float, emb)])
    return rows
