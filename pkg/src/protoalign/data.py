"""Dataset schema, label vocabulary, and the on-disk feature-archive format.

An archive is a directory::

    manifest.json   version, dims, count, vocabulary, ids, split per id
    labels.csv      id plus one 0/1 column per finding (header = vocabulary order)
    teacher.f32     8-byte magic ``PCLIPF32`` + row-major little-endian float32
    features.f32    optional, same layout with row width d_in

Text-prompt archives reuse the layout with ``prompts.csv`` (prompt, class,
role) in place of ``labels.csv``; prompt strings double as ids.

Float32 rows are the canonical bytes: every example keeps the exact 32-bit
payload it was created or loaded with, and the float64 working copy is
derived from it. Saving therefore reproduces an archive bit-for-bit.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatchError,
    DuplicateIdError,
    FormatError,
    UnknownLabelError,
)
from .numerics import as_f64, l2_normalize, row_norms

MAGIC = b"PCLIPF32"
FORMAT_VERSION = 1
SPLITS = ("train", "test")
PROMPT_ROLES = ("positive", "negative")

# 32-bit storage drift tolerated on load; anything worse is corrupt data.
NORM_BAND = (0.99, 1.01)


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered finding names; the canonical class axis for labels, anchors and reports."""

    names: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.names:
            raise FormatError("vocabulary must not be empty")
        if any(not n for n in self.names):
            raise FormatError("vocabulary names must be nonempty strings")
        if len(set(self.names)) != len(self.names):
            raise DuplicateIdError("vocabulary names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLabelError(f"unknown finding {name!r}") from None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _quantize32(values) -> np.ndarray:
    raw = np.ascontiguousarray(values, dtype="<f4")
    if not np.all(np.isfinite(raw)):
        raise FormatError("non-finite values in float payload")
    return _frozen(raw)


@dataclass(frozen=True)
class LabeledExample:
    """One image: id, multi-hot finding labels, frozen teacher embedding,
    optional frozen backbone feature, and its split."""

    id: str
    labels: np.ndarray  # uint8, length = vocabulary size
    teacher_raw: np.ndarray  # float32, the canonical bytes
    teacher_embedding: np.ndarray  # float64 unit vector derived from teacher_raw
    split: str
    feature_raw: np.ndarray | None = None
    feature: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.teacher_raw.shape[0]

    @property
    def d_in(self) -> int:
        return self.d if self.feature_raw is None else self.feature_raw.shape[0]


def make_example(
    example_id: str,
    labels,
    teacher,
    split: str,
    feature=None,
) -> LabeledExample:
    """Build an example, quantizing payloads to their canonical 32-bit form."""
    if split not in SPLITS:
        raise FormatError(f"split must be one of {SPLITS}, got {split!r}")
    label_arr = np.asarray(labels)
    if not np.isin(label_arr, (0, 1)).all():
        raise FormatError(f"labels for {example_id!r} must be 0/1")
    label_arr = _frozen(label_arr.astype(np.uint8))
    teacher_raw = _quantize32(teacher)
    norm = float(row_norms(teacher_raw))
    if not NORM_BAND[0] <= norm <= NORM_BAND[1]:
        raise FormatError(
            f"teacher embedding for {example_id!r} has norm {norm:.6f}, outside {NORM_BAND}"
        )
    embedding = _frozen(l2_normalize(as_f64(teacher_raw)))
    feature_raw = None if feature is None else _quantize32(feature)
    feature64 = None if feature_raw is None else _frozen(as_f64(feature_raw))
    return LabeledExample(
        id=str(example_id),
        labels=label_arr,
        teacher_raw=teacher_raw,
        teacher_embedding=embedding,
        split=split,
        feature_raw=feature_raw,
        feature=feature64,
    )


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of examples sharing one vocabulary and dims."""

    vocabulary: LabelVocabulary
    examples: tuple[LabeledExample, ...]
    d: int
    d_in: int

    @classmethod
    def from_examples(
        cls,
        vocabulary: LabelVocabulary,
        examples,
        d: int | None = None,
        d_in: int | None = None,
    ) -> "Dataset":
        examples = tuple(examples)
        if not examples:
            if d is None:
                raise FormatError("an empty dataset needs explicit dims")
            return cls(vocabulary=vocabulary, examples=(), d=d, d_in=d if d_in is None else d_in)
        d = examples[0].d
        d_in = examples[0].d_in
        has_features = examples[0].feature_raw is not None
        seen: set[str] = set()
        for ex in examples:
            if ex.id in seen:
                raise DuplicateIdError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
            if len(ex.labels) != len(vocabulary):
                raise DimMismatchError(
                    f"example {ex.id!r} has {len(ex.labels)} labels, vocabulary has {len(vocabulary)}"
                )
            if ex.d != d or ex.d_in != d_in or (ex.feature_raw is not None) != has_features:
                raise DimMismatchError(f"example {ex.id!r} disagrees on embedding dims")
        return cls(vocabulary=vocabulary, examples=examples, d=d, d_in=d_in)

    def __len__(self) -> int:
        return len(self.examples)

    def split_examples(self, split: str | None) -> tuple[LabeledExample, ...]:
        if split is None:
            return self.examples
        return tuple(ex for ex in self.examples if ex.split == split)

    def label_column(self, finding: str, split: str | None = None) -> np.ndarray:
        col = self.vocabulary.index_of(finding)
        return np.array([ex.labels[col] for ex in self.split_examples(split)], dtype=np.uint8)


def cooccurrence_table(dataset: Dataset, target: str, split: str | None = None) -> dict[str, int]:
    """Count, for each non-target finding b, examples with both target and b set.

    Used to rank confounder classes in curation and evaluation reports.
    """
    t = dataset.vocabulary.index_of(target)
    counts = np.zeros(len(dataset.vocabulary), dtype=np.int64)
    for ex in dataset.split_examples(split):
        if ex.labels[t]:
            counts += ex.labels
    return {
        name: int(counts[i])
        for i, name in enumerate(dataset.vocabulary.names)
        if name != target
    }


def _write_f32(path: Path, rows) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for row in rows:
            fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def _read_f32(path: Path, count: int, width: int) -> np.ndarray:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path.name}: {exc}") from exc
    if blob[:8] != MAGIC:
        raise FormatError(f"{path.name}: bad magic {blob[:8]!r}")
    payload = blob[8:]
    expected = 4 * count * width
    if len(payload) != expected:
        raise FormatError(
            f"{path.name}: expected {expected} payload bytes for {count}x{width}, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path.name}: non-finite values")
    return data.reshape(count, width)


def save_archive(dataset: Dataset, path) -> None:
    """Write ``dataset`` as an archive directory (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    has_features = dataset.examples and dataset.examples[0].feature_raw is not None
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "images",
        "d": dataset.d,
        "d_in": dataset.d_in,
        "count": len(dataset.examples),
        "vocabulary": list(dataset.vocabulary.names),
        "ids": [ex.id for ex in dataset.examples],
        "splits": [ex.split for ex in dataset.examples],
        "has_features": bool(has_features),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *dataset.vocabulary.names])
        for ex in dataset.examples:
            writer.writerow([ex.id, *(int(v) for v in ex.labels)])
    _write_f32(root / "teacher.f32", [ex.teacher_raw for ex in dataset.examples])
    if has_features:
        _write_f32(root / "features.f32", [ex.feature_raw for ex in dataset.examples])


def _load_manifest(root: Path, expected_kind: str) -> dict:
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{root}: no manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: unreadable manifest: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported archive version {manifest.get('version')!r}")
    kind = manifest.get("kind", expected_kind)
    if kind != expected_kind:
        raise FormatError(f"expected a {expected_kind!r} archive, found {kind!r}")
    for key in ("d", "count", "vocabulary", "ids"):
        if key not in manifest:
            raise FormatError(f"manifest missing key {key!r}")
    if len(manifest["ids"]) != manifest["count"]:
        raise DimMismatchError(
            f"manifest count {manifest['count']} != {len(manifest['ids'])} ids"
        )
    return manifest


def load_archive(path) -> Dataset:
    """Load and validate an archive; teacher embeddings are re-normalized."""
    root = Path(path)
    manifest = _load_manifest(root, "images")
    vocabulary = LabelVocabulary(tuple(manifest["vocabulary"]))
    count = manifest["count"]
    d = manifest["d"]
    d_in = manifest.get("d_in", d)
    splits = manifest.get("splits")
    if splits is None or len(splits) != count:
        raise DimMismatchError("manifest splits do not cover every id")

    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise FormatError(f"{root}: no labels.csv")
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("labels.csv is empty") from None
        if header != ["id", *vocabulary.names]:
            raise FormatError("labels.csv header does not match vocabulary order")
        label_rows = list(reader)
    if len(label_rows) != count:
        raise DimMismatchError(f"labels.csv has {len(label_rows)} rows, manifest says {count}")

    teacher = _read_f32(root / "teacher.f32", count, d)
    features = None
    if manifest.get("has_features"):
        features = _read_f32(root / "features.f32", count, d_in)

    examples = []
    for i, (example_id, split) in enumerate(zip(manifest["ids"], splits)):
        row = label_rows[i]
        if not row or row[0] != example_id:
            raise FormatError(f"labels.csv row {i} id {row[:1]!r} != manifest id {example_id!r}")
        if len(row) != 1 + len(vocabulary):
            raise DimMismatchError(f"labels.csv row {i} has {len(row) - 1} label columns")
        try:
            labels = [int(v) for v in row[1:]]
        except ValueError:
            raise FormatError(f"labels.csv row {i}: labels must be integers") from None
        examples.append(
            make_example(
                example_id,
                labels,
                teacher[i],
                split,
                feature=None if features is None else features[i],
            )
        )
    dataset = Dataset.from_examples(vocabulary, examples, d=d, d_in=d_in)
    if dataset.d != d or dataset.d_in != d_in:
        raise DimMismatchError(
            f"payload dims ({dataset.d}, {dataset.d_in}) != manifest dims ({d}, {d_in})"
        )
    return dataset


@dataclass(frozen=True)
class PromptEmbedding:
    """One text prompt's embedding plus its (class, role) assignment."""

    prompt: str
    finding: str
    role: str  # "positive" | "negative"
    raw: np.ndarray
    embedding: np.ndarray


def make_prompt(prompt: str, finding: str, role: str, embedding) -> PromptEmbedding:
    if role not in PROMPT_ROLES:
        raise FormatError(f"prompt role must be one of {PROMPT_ROLES}, got {role!r}")
    raw = _quantize32(embedding)
    norm = float(row_norms(raw))
    if not NORM_BAND[0] <= norm <= NORM_BAND[1]:
        raise FormatError(f"prompt {prompt!r} embedding norm {norm:.6f} outside {NORM_BAND}")
    return PromptEmbedding(
        prompt=str(prompt),
        finding=str(finding),
        role=role,
        raw=raw,
        embedding=_frozen(l2_normalize(as_f64(raw))),
    )


@dataclass(frozen=True)
class TextArchive:
    """Prompt embeddings keyed by prompt string, sharing one vocabulary."""

    vocabulary: LabelVocabulary
    prompts: tuple[PromptEmbedding, ...]
    d: int

    def __post_init__(self):
        seen: set[str] = set()
        for p in self.prompts:
            if p.prompt in seen:
                raise DuplicateIdError(f"duplicate prompt {p.prompt!r}")
            seen.add(p.prompt)
            if p.finding not in self.vocabulary:
                raise UnknownLabelError(f"prompt {p.prompt!r} names unknown class {p.finding!r}")
            if p.raw.shape[0] != self.d:
                raise DimMismatchError(f"prompt {p.prompt!r} has dim {p.raw.shape[0]}, archive {self.d}")

    def get(self, prompt: str) -> PromptEmbedding | None:
        for p in self.prompts:
            if p.prompt == prompt:
                return p
        return None


def save_text_archive(archive: TextArchive, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "kind": "text",
        "d": archive.d,
        "d_in": archive.d,
        "count": len(archive.prompts),
        "vocabulary": list(archive.vocabulary.names),
        "ids": [p.prompt for p in archive.prompts],
        "splits": ["train"] * len(archive.prompts),
        "has_features": False,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(root / "prompts.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prompt", "class", "role"])
        for p in archive.prompts:
            writer.writerow([p.prompt, p.finding, p.role])
    _write_f32(root / "teacher.f32", [p.raw for p in archive.prompts])


def load_text_archive(path) -> TextArchive:
    root = Path(path)
    manifest = _load_manifest(root, "text")
    vocabulary = LabelVocabulary(tuple(manifest["vocabulary"]))
    count = manifest["count"]
    d = manifest["d"]
    prompts_path = root / "prompts.csv"
    if not prompts_path.exists():
        raise FormatError(f"{root}: no prompts.csv")
    with open(prompts_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["prompt", "class", "role"]:
            raise FormatError("prompts.csv header must be prompt,class,role")
        rows = list(reader)
    if len(rows) != count:
        raise DimMismatchError(f"prompts.csv has {len(rows)} rows, manifest says {count}")
    embeddings = _read_f32(root / "teacher.f32", count, d)
    prompts = []
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise FormatError(f"prompts.csv row {i} must have 3 columns")
        prompt, finding, role = row
        if prompt != manifest["ids"][i]:
            raise FormatError(f"prompts.csv row {i} does not match manifest id order")
        prompts.append(make_prompt(prompt, finding, role, embeddings[i]))
    return TextArchive(vocabulary=vocabulary, prompts=tuple(prompts), d=d)
