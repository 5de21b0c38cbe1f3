"""Frozen encoder backends.

``torchscript``: a pair of scripted modules. The image model maps a
(B, 3, S, S) float tensor to (B, d); the text model maps (B, L) int64
UTF-8 byte tokens (0 = padding, byte value + 1 otherwise) to (B, d).
Fully offline.

``hf-clip``: a transformers CLIPModel checkpoint by name or local path,
when the transformers package and the weights are available.
"""
from __future__ import annotations

import numpy as np
import torch

from .errors import ModelLoadError


class Encoder:
    """Wraps a loaded backbone behind encode_images / encode_texts."""

    def __init__(self, kind: str, dim: int, image_fn, text_fn):
        self.kind = kind
        self.dim = dim
        self._image_fn = image_fn
        self._text_fn = text_fn

    def encode_images(self, batch: np.ndarray) -> np.ndarray:
        return self._image_fn(batch)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        return self._text_fn(texts)


def byte_tokens(texts: list[str], max_length: int) -> torch.Tensor:
    """UTF-8 byte tokenizer: value + 1, zero-padded/truncated to max_length."""
    out = torch.zeros((len(texts), max_length), dtype=torch.int64)
    for i, text in enumerate(texts):
        raw = text.encode("utf-8")[:max_length]
        out[i, : len(raw)] = torch.tensor([b + 1 for b in raw], dtype=torch.int64)
    return out


def _load_torchscript(spec: dict, device: str) -> Encoder:
    for key in ("image_model", "text_model"):
        if key not in spec:
            raise ModelLoadError(f"torchscript model spec needs {key!r}")
    try:
        image_model = torch.jit.load(spec["image_model"], map_location=device).eval()
        text_model = torch.jit.load(spec["text_model"], map_location=device).eval()
    except (OSError, RuntimeError, ValueError) as exc:
        raise ModelLoadError(f"cannot load torchscript checkpoint: {exc}") from exc
    max_length = int(spec.get("max_text_length", 64))
    size = int(spec.get("input_size", 224))
    with torch.no_grad():
        probe = image_model(torch.zeros(1, 3, size, size, device=device))
    dim = int(probe.shape[-1])

    def image_fn(batch: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = image_model(torch.from_numpy(batch).to(device))
        return out.cpu().numpy().astype(np.float64)

    def text_fn(texts: list[str]) -> np.ndarray:
        with torch.no_grad():
            out = text_model(byte_tokens(texts, max_length).to(device))
        return out.cpu().numpy().astype(np.float64)

    return Encoder("torchscript", dim, image_fn, text_fn)


def _load_hf_clip(spec: dict, device: str) -> Encoder:
    if "name" not in spec:
        raise ModelLoadError("hf-clip model spec needs a 'name'")
    try:
        from transformers import CLIPModel, CLIPProcessor
    except ImportError as exc:
        raise ModelLoadError("hf-clip backend needs the transformers package") from exc
    try:
        model = CLIPModel.from_pretrained(spec["name"]).to(device).eval()
        processor = CLIPProcessor.from_pretrained(spec["name"])
    except Exception as exc:  # transformers raises a zoo of download/load errors
        raise ModelLoadError(f"cannot load CLIP checkpoint {spec['name']!r}: {exc}") from exc
    dim = int(model.config.projection_dim)

    def image_fn(batch: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = model.get_image_features(pixel_values=torch.from_numpy(batch).to(device))
        return out.cpu().numpy().astype(np.float64)

    def text_fn(texts: list[str]) -> np.ndarray:
        tokens = processor(text=texts, return_tensors="pt", padding=True, truncation=True)
        with torch.no_grad():
            out = model.get_text_features(
                input_ids=tokens["input_ids"].to(device),
                attention_mask=tokens["attention_mask"].to(device),
            )
        return out.cpu().numpy().astype(np.float64)

    return Encoder("hf-clip", dim, image_fn, text_fn)


def load_encoder(spec: dict, device: str = "cpu") -> Encoder:
    torch.set_num_threads(1)  # deterministic re-exports
    kind = spec.get("kind")
    if kind == "torchscript":
        return _load_torchscript(spec, device)
    if kind == "hf-clip":
        return _load_hf_clip(spec, device)
    raise ModelLoadError(f"unknown model kind {kind!r}")
