"""Fixtures: a tiny scripted encoder pair and a labeled sample-image set."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn

DIM = 16
FINDINGS = ("tgt", "bga", "bgb")


class TinyImageEncoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(3, 4, kernel_size=5, stride=4)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.proj = nn.Linear(64, dim)

    def forward(self, x):
        h = torch.relu(self.conv(x))
        h = self.pool(h).flatten(1)
        return self.proj(h)


class TinyTextEncoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.embed = nn.Embedding(257, 16, padding_idx=0)
        self.proj = nn.Linear(16, dim)

    def forward(self, tokens):
        mask = (tokens > 0).float().unsqueeze(-1)
        summed = (self.embed(tokens) * mask).sum(dim=1)
        count = mask.sum(dim=1).clamp(min=1.0)
        return self.proj(summed / count)


@pytest.fixture(scope="session")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpts")
    torch.manual_seed(7)
    image_model = TinyImageEncoder(DIM).eval()
    text_model = TinyTextEncoder(DIM).eval()
    image_path = root / "image_encoder.pt"
    text_path = root / "text_encoder.pt"
    torch.jit.trace(image_model, torch.zeros(1, 3, 224, 224)).save(str(image_path))
    torch.jit.trace(text_model, torch.zeros(2, 8, dtype=torch.int64)).save(str(text_path))
    return {"image": image_path, "text": text_path}


def render_image(path: Path, seed: int) -> None:
    rng = np.random.default_rng(seed)
    base = np.linspace(0, 255, 64, dtype=np.float64)
    canvas = np.zeros((64, 64, 3))
    canvas[:, :, 0] = base[np.newaxis, :]
    canvas[:, :, 1] = base[:, np.newaxis]
    canvas[:, :, 2] = rng.integers(0, 256, size=(64, 64))
    Image.fromarray(canvas.astype(np.uint8)).save(path)


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    layout = [
        ("img0", ("tgt",), "train"),
        ("img1", ("tgt", "bga"), "train"),
        ("img2", ("tgt",), "train"),
        ("img3", ("bga",), "train"),
        ("img4", ("bga",), "train"),
        ("img5", ("bgb",), "train"),
        ("img6", ("bgb",), "train"),
        ("img7", ("tgt",), "test"),
        ("img8", ("bga",), "test"),
        ("img9", ("bgb",), "test"),
    ]
    entries = []
    for i, (image_id, labels, split) in enumerate(layout):
        path = root / f"{image_id}.png"
        render_image(path, seed=i)
        entries.append({"id": image_id, "path": str(path), "labels": list(labels), "split": split})
    return entries


@pytest.fixture
def job_file(tmp_path, checkpoints, sample_images):
    def build(**overrides):
        payload = {
            "model": {
                "kind": "torchscript",
                "image_model": str(checkpoints["image"]),
                "text_model": str(checkpoints["text"]),
            },
            "vocabulary": list(FINDINGS),
            "images": sample_images,
            "prompts": {"negative_classes": ["tgt"]},
            "out_images": str(tmp_path / "out/images"),
            "out_text": str(tmp_path / "out/text"),
            "batch_size": 4,
        }
        payload.update(overrides)
        path = tmp_path / "job.json"
        path.write_text(json.dumps(payload))
        return path

    return build
