"""Export job description and validation.

A job is one JSON file naming the backbone, the labeled image manifest, the
prompt templates, and the two output directories. Everything is validated
up front so no encoding work starts on a malformed job.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ExportValidationError

# CLIP's published preprocessing constants; recorded in every manifest
DEFAULT_SIZE = 224
DEFAULT_MEAN = (0.48145466, 0.4578275, 0.40821073)
DEFAULT_STD = (0.26862954, 0.26130258, 0.27577711)

DEFAULT_POSITIVE_TEMPLATES = ("{pathology}", "indicating {pathology}")
DEFAULT_NEGATIVE_TEMPLATES = ("no {pathology}", "no indication of {pathology}")

SPLITS = ("train", "test")


@dataclass(frozen=True)
class ImageEntry:
    id: str
    path: Path
    labels: tuple[str, ...]
    split: str


@dataclass(frozen=True)
class Preprocessing:
    size: int = DEFAULT_SIZE
    mean: tuple[float, float, float] = DEFAULT_MEAN
    std: tuple[float, float, float] = DEFAULT_STD

    def to_json(self) -> dict:
        return {"resize": [self.size, self.size], "mean": list(self.mean), "std": list(self.std)}


@dataclass(frozen=True)
class ExportJob:
    model: dict
    vocabulary: tuple[str, ...]
    images: tuple[ImageEntry, ...]
    positive_templates: tuple[str, ...]
    negative_templates: tuple[str, ...]
    negative_classes: tuple[str, ...]
    out_images: Path
    out_text: Path
    batch_size: int = 16
    device: str = "cpu"
    preprocessing: Preprocessing = field(default_factory=Preprocessing)


def _check_templates(templates, role: str) -> tuple[str, ...]:
    out = []
    for template in templates:
        if not isinstance(template, str) or "{pathology}" not in template:
            raise ExportValidationError(
                f"{role} template {template!r} must contain the literal '{{pathology}}'"
            )
        out.append(template)
    if not out:
        raise ExportValidationError(f"at least one {role} template is required")
    return tuple(out)


def load_job(path) -> ExportJob:
    """Parse and validate a job file; raises before any model work."""
    job_path = Path(path)
    try:
        payload = json.loads(job_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ExportValidationError(f"cannot read job file {path}: {exc}") from exc
    base = job_path.parent

    if "model" not in payload or "kind" not in payload.get("model", {}):
        raise ExportValidationError("job needs a model section with a 'kind'")
    vocabulary = tuple(payload.get("vocabulary", ()))
    if not vocabulary or len(set(vocabulary)) != len(vocabulary):
        raise ExportValidationError("vocabulary must be a nonempty list of unique findings")

    entries = []
    seen: set[str] = set()
    for i, raw in enumerate(payload.get("images", ())):
        image_id = raw.get("id")
        if not image_id:
            raise ExportValidationError(f"image entry {i} has no id")
        if image_id in seen:
            raise ExportValidationError(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        img_path = Path(raw.get("path", ""))
        if not img_path.is_absolute():
            img_path = base / img_path
        if not img_path.exists():
            raise ExportValidationError(f"image {image_id!r}: file not found: {img_path}")
        labels = tuple(raw.get("labels", ()))
        unknown = [l for l in labels if l not in vocabulary]
        if unknown:
            raise ExportValidationError(f"image {image_id!r}: labels not in vocabulary: {unknown}")
        split = raw.get("split", "train")
        if split not in SPLITS:
            raise ExportValidationError(f"image {image_id!r}: split must be one of {SPLITS}")
        entries.append(ImageEntry(id=image_id, path=img_path, labels=labels, split=split))

    prompts = payload.get("prompts", {})
    positive = _check_templates(
        prompts.get("positive_templates", DEFAULT_POSITIVE_TEMPLATES), "positive"
    )
    negative = _check_templates(
        prompts.get("negative_templates", DEFAULT_NEGATIVE_TEMPLATES), "negative"
    )
    negative_classes = prompts.get("negative_classes", "all")
    if negative_classes == "all":
        negative_classes = vocabulary
    else:
        negative_classes = tuple(negative_classes)
        unknown = [c for c in negative_classes if c not in vocabulary]
        if unknown:
            raise ExportValidationError(f"negative_classes not in vocabulary: {unknown}")

    batch_size = int(payload.get("batch_size", 16))
    if batch_size < 1:
        raise ExportValidationError("batch_size must be >= 1")

    prep_raw = payload.get("preprocessing", {})
    preprocessing = Preprocessing(
        size=int(prep_raw.get("size", DEFAULT_SIZE)),
        mean=tuple(prep_raw.get("mean", DEFAULT_MEAN)),
        std=tuple(prep_raw.get("std", DEFAULT_STD)),
    )

    def _out(key: str) -> Path:
        raw = payload.get(key)
        if not raw:
            raise ExportValidationError(f"job needs an {key!r} output directory")
        out = Path(raw)
        return out if out.is_absolute() else base / out

    return ExportJob(
        model=dict(payload["model"]),
        vocabulary=vocabulary,
        images=tuple(entries),
        positive_templates=positive,
        negative_templates=negative,
        negative_classes=negative_classes,
        out_images=_out("out_images"),
        out_text=_out("out_text"),
        batch_size=batch_size,
        device=str(payload.get("device", "cpu")),
        preprocessing=preprocessing,
    )
