"""Frozen class anchors built from text-prompt embeddings.

Each class anchor is the l2-normalized arithmetic mean of its template
embeddings; the target class additionally gets a negative anchor for
positive-vs-negative scoring at inference. Anchors are read-only by
construction: nothing downstream can train them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabelVocabulary, TextArchive
from .errors import (
    EmptyTemplateError,
    FormatError,
    MissingAnchorError,
    MissingPromptError,
    ZeroNormError,
)
from .numerics import as_f64, l2_normalize, row_norms

SIMPLE_POSITIVE_TEMPLATES = ("{pathology}", "indicating {pathology}")
SIMPLE_NEGATIVE_TEMPLATES = ("no {pathology}", "no indication of {pathology}")

# Larger, more varied prompt set for the anchor-ensemble ablation.
COMPLEX_POSITIVE_TEMPLATES = (
    "{pathology}",
    "indicating {pathology}",
    "evidence of {pathology}",
    "findings consistent with {pathology}",
    "radiograph showing {pathology}",
    "there is {pathology}",
)
COMPLEX_NEGATIVE_TEMPLATES = (
    "no {pathology}",
    "no indication of {pathology}",
    "no evidence of {pathology}",
    "without {pathology}",
)

TEMPLATE_SETS = {
    "simple": (SIMPLE_POSITIVE_TEMPLATES, SIMPLE_NEGATIVE_TEMPLATES),
    "complex": (COMPLEX_POSITIVE_TEMPLATES, COMPLEX_NEGATIVE_TEMPLATES),
}


@dataclass(frozen=True)
class AnchorSet:
    """C frozen unit anchors on the (target + backgrounds) class axis, plus
    negative anchors where the text archive provides them (always for the
    target)."""

    target: str
    class_axis: tuple[str, ...]
    anchor_matrix: np.ndarray  # (C, d), rows unit norm, read-only
    templates: dict[str, tuple[str, ...]]
    negatives: dict[str, np.ndarray]

    @property
    def d(self) -> int:
        return self.anchor_matrix.shape[1]

    @property
    def n_classes(self) -> int:
        return self.anchor_matrix.shape[0]

    def positive(self, finding: str) -> np.ndarray:
        try:
            return self.anchor_matrix[self.class_axis.index(finding)]
        except ValueError:
            raise MissingAnchorError(f"no anchor for finding {finding!r}") from None

    def negative(self, finding: str) -> np.ndarray | None:
        return self.negatives.get(finding)


def build_anchor(template_embeddings) -> np.ndarray:
    """l2-normalized mean of the per-template embeddings (order-independent)."""
    rows = [as_f64(e) for e in template_embeddings]
    if not rows:
        raise EmptyTemplateError("anchor needs at least one template embedding")
    stacked = np.stack(rows)
    if np.any(np.abs(row_norms(stacked) - 1.0) > 1e-6):
        raise FormatError("template embeddings must be unit norm")
    mean = stacked.mean(axis=0)
    if float(row_norms(mean)) <= 1e-10:
        raise ZeroNormError("template embeddings cancel out; anchor undefined")
    return l2_normalize(mean)


def expand_template(template: str, finding: str) -> str:
    return template.format(pathology=finding)


def _gather(archive: TextArchive, finding: str, templates, role: str) -> list[np.ndarray]:
    rows = []
    for template in templates:
        prompt = expand_template(template, finding)
        entry = archive.get(prompt)
        if entry is None:
            raise MissingPromptError(finding, prompt)
        if entry.finding != finding or entry.role != role:
            raise FormatError(
                f"prompt {prompt!r} is tagged ({entry.finding!r}, {entry.role!r}), "
                f"expected ({finding!r}, {role!r})"
            )
        rows.append(entry.embedding)
    return rows


def build_anchor_set(
    archive: TextArchive,
    vocabulary: LabelVocabulary,
    target: str,
    positive_templates: tuple[str, ...] = SIMPLE_POSITIVE_TEMPLATES,
    negative_templates: tuple[str, ...] = SIMPLE_NEGATIVE_TEMPLATES,
    background: tuple[str, ...] | None = None,
) -> AnchorSet:
    """Assemble anchors for the class axis (target first, then backgrounds in
    vocabulary order).

    Every class needs all its positive template prompts in the archive; the
    negative anchor is required for the target and built opportunistically
    for any other class whose negative prompts are all present.
    """
    if target not in vocabulary:
        raise MissingAnchorError(f"target {target!r} not in vocabulary")
    if background is None:
        background = tuple(n for n in vocabulary.names if n != target)
    axis = (target, *background)
    anchors = np.stack([build_anchor(_gather(archive, f, positive_templates, "positive")) for f in axis])
    anchors.flags.writeable = False
    negatives: dict[str, np.ndarray] = {}
    for finding in axis:
        try:
            rows = _gather(archive, finding, negative_templates, "negative")
        except MissingPromptError:
            if finding == target:
                raise
            continue
        neg = build_anchor(rows)
        neg.flags.writeable = False
        negatives[finding] = neg
    return AnchorSet(
        target=target,
        class_axis=axis,
        anchor_matrix=anchors,
        templates={f: tuple(positive_templates) for f in axis},
        negatives=negatives,
    )


def anchor_report(anchor_set: AnchorSet) -> dict:
    """JSON-ready inspection summary: per-class templates, negative
    availability, and the pairwise anchor cosine matrix."""
    cosines = anchor_set.anchor_matrix @ anchor_set.anchor_matrix.T
    return {
        "target": anchor_set.target,
        "class_axis": list(anchor_set.class_axis),
        "dim": anchor_set.d,
        "templates": {k: list(v) for k, v in anchor_set.templates.items()},
        "has_negative": {f: f in anchor_set.negatives for f in anchor_set.class_axis},
        "pairwise_cosine": [[round(float(v), 6) for v in row] for row in cosines],
    }
