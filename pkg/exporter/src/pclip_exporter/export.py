"""Archive writers: encode images/prompts and emit PCLIPF32 directories.

The directory layout mirrors the refinement toolkit's contract exactly:
manifest.json, labels.csv (or prompts.csv), and magic-prefixed row-major
little-endian float32 embedding files, rows in manifest id order and
l2-normalized before write.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import Encoder, load_encoder
from .errors import ImageDecodeError, WriteError
from .job import ExportJob

logger = logging.getLogger(__name__)

MAGIC = b"PCLIPF32"
FORMAT_VERSION = 1


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.sqrt((rows * rows).sum(axis=1, keepdims=True))
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise WriteError("encoder produced a zero or non-finite embedding")
    return rows / norms


def _write_f32(path: Path, rows: np.ndarray) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    except OSError as exc:
        raise WriteError(f"cannot write {path}: {exc}") from exc


def _load_image(entry, preprocessing) -> np.ndarray:
    try:
        with Image.open(entry.path) as img:
            rgb = img.convert("RGB").resize(
                (preprocessing.size, preprocessing.size), Image.BICUBIC
            )
    except (OSError, ValueError) as exc:
        raise ImageDecodeError(f"image {entry.id!r}: {exc}") from exc
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(preprocessing.mean, dtype=np.float32)) / np.asarray(
        preprocessing.std, dtype=np.float32
    )
    return arr.transpose(2, 0, 1)


def export_images(job: ExportJob, encoder: Encoder | None = None) -> Path:
    """Encode the job's images and write the image archive directory.

    Images that fail to decode are logged and skipped; the archive holds the
    rest in manifest order.
    """
    encoder = encoder or load_encoder(job.model, job.device)
    kept = []
    pixel_batches: list[np.ndarray] = []
    pending: list[np.ndarray] = []
    for entry in job.images:
        try:
            pending.append(_load_image(entry, job.preprocessing))
        except ImageDecodeError as exc:
            logger.warning("skipping undecodable image: %s", exc)
            continue
        kept.append(entry)
        if len(pending) == job.batch_size:
            pixel_batches.append(np.stack(pending))
            pending = []
    if pending:
        pixel_batches.append(np.stack(pending))

    if kept:
        embeddings = _normalize_rows(np.vstack([encoder.encode_images(b) for b in pixel_batches]))
    else:
        embeddings = np.zeros((0, encoder.dim))

    out = job.out_images
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "images",
        "d": encoder.dim,
        "d_in": encoder.dim,
        "count": len(kept),
        "vocabulary": list(job.vocabulary),
        "ids": [e.id for e in kept],
        "splits": [e.split for e in kept],
        "has_features": False,
        "provenance": {
            "backend": encoder.kind,
            "model": job.model,
            "preprocessing": job.preprocessing.to_json(),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *job.vocabulary])
        for entry in kept:
            present = set(entry.labels)
            writer.writerow([entry.id, *(1 if f in present else 0 for f in job.vocabulary)])
    _write_f32(out / "teacher.f32", embeddings)
    logger.info("wrote %d/%d images to %s", len(kept), len(job.images), out)
    return out


def expand_prompts(job: ExportJob) -> list[tuple[str, str, str]]:
    """(prompt, class, role) rows: positives for every finding, negatives for
    the configured classes."""
    rows = []
    for finding in job.vocabulary:
        for template in job.positive_templates:
            rows.append((template.format(pathology=finding), finding, "positive"))
    for finding in job.negative_classes:
        for template in job.negative_templates:
            rows.append((template.format(pathology=finding), finding, "negative"))
    return rows


def export_prompts(job: ExportJob, encoder: Encoder | None = None) -> Path:
    """Encode every (class, template, role) prompt and write the text archive."""
    encoder = encoder or load_encoder(job.model, job.device)
    rows = expand_prompts(job)
    texts = [prompt for prompt, _, _ in rows]
    embeddings = []
    for start in range(0, len(texts), job.batch_size):
        embeddings.append(encoder.encode_texts(texts[start : start + job.batch_size]))
    matrix = _normalize_rows(np.vstack(embeddings)) if rows else np.zeros((0, encoder.dim))

    out = job.out_text
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "text",
        "d": encoder.dim,
        "d_in": encoder.dim,
        "count": len(rows),
        "vocabulary": list(job.vocabulary),
        "ids": [prompt for prompt, _, _ in rows],
        "splits": ["train"] * len(rows),
        "has_features": False,
        "provenance": {"backend": encoder.kind, "model": job.model},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(out / "prompts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prompt", "class", "role"])
        writer.writerows(rows)
    _write_f32(out / "teacher.f32", matrix)
    logger.info("wrote %d prompt embeddings to %s", len(rows), out)
    return out
