"""Shared builders for synthetic datasets used across the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from protoalign.data import Dataset, LabelVocabulary, make_example
from protoalign.numerics import Rng, l2_normalize


def random_dataset(
    seed: int,
    n_examples: int,
    findings: tuple[str, ...],
    d: int = 6,
    with_features: bool = False,
    d_in: int | None = None,
    label_density: float = 0.3,
    test_fraction: float = 0.25,
) -> Dataset:
    """Fuzzed dataset with independent Bernoulli labels and random unit teachers."""
    rng = Rng(seed)
    vocab = LabelVocabulary(findings)
    d_in = d if d_in is None else d_in
    examples = []
    for i in range(n_examples):
        labels = [1 if rng.random() < label_density else 0 for _ in findings]
        teacher = l2_normalize(rng.normals(d))
        feature = rng.normals(d_in) if with_features else None
        split = "test" if rng.random() < test_fraction else "train"
        examples.append(make_example(f"ex-{i:05d}", labels, teacher, split, feature=feature))
    return Dataset.from_examples(vocab, examples, d=d, d_in=d_in)


@pytest.fixture
def small_vocab():
    return ("pneumothorax", "effusion", "atelectasis", "pneumonia")


def finite_difference_grads(loss_fn, head, step=1e-5):
    """Central-difference gradients of loss_fn(head) wrt each trainable tensor.

    Deliberately independent of the analytic backward pass: it only re-runs
    the scalar loss with one coordinate nudged at a time.
    """
    grads = {}
    for name, tensor in head.trainable().items():
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = loss_fn(head)
            flat[i] = original - step
            down = loss_fn(head)
            flat[i] = original
            grad_flat[i] = (up - down) / (2.0 * step)
        grads[name] = grad
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all tensors in the dicts."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
