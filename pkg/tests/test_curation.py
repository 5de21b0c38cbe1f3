import numpy as np
import pytest

from protoalign.curation import (
    CurationConfig,
    background_subset,
    curate,
    curation_report,
    entries_for_axis,
    load_curation_csv,
    save_curation_csv,
    target_cohort,
)
from protoalign.data import Dataset, LabelVocabulary, make_example
from protoalign.errors import (
    ConfigError,
    EmptyTargetError,
    UnknownLabelError,
)
from protoalign.numerics import Rng, l2_normalize

from conftest import random_dataset


def build_dataset(rows, findings, split="train"):
    rng = Rng(123)
    vocab = LabelVocabulary(findings)
    examples = [
        make_example(example_id, labels, l2_normalize(rng.normals(4)), split)
        for example_id, labels in rows
    ]
    return Dataset.from_examples(vocab, examples, d=4)


# Independent predicate-by-predicate filters; deliberately reimplemented with
# plain loops so they can act as the oracle for the curate() implementation.
def oracle_target_cohort(dataset, target, split=None):
    t = list(dataset.vocabulary.names).index(target)
    out = []
    for ex in dataset.examples:
        if split is not None and ex.split != split:
            continue
        if ex.labels[t] == 1:
            out.append(ex.id)
    return out


def oracle_background_subset(dataset, target, b, backgrounds, split=None):
    names = list(dataset.vocabulary.names)
    ti, bi = names.index(target), names.index(b)
    out = []
    for ex in dataset.examples:
        if split is not None and ex.split != split:
            continue
        if ex.labels[bi] != 1 or ex.labels[ti] != 0:
            continue
        if any(ex.labels[names.index(c)] != 0 for c in backgrounds if c != b):
            continue
        out.append(ex.id)
    return out


def check_against_oracle(dataset, config, split="train"):
    curated = curate(dataset, config, split=split)
    backgrounds = curated.bucket_axis[1:]
    by_id = {ex.id: ex for ex in dataset.examples}
    names = list(dataset.vocabulary.names)

    assert curated.bucket_ids(config.target) == oracle_target_cohort(
        dataset, config.target, split
    )
    seen = set()
    for example_id, bucket in curated.entries:
        assert example_id not in seen
        seen.add(example_id)
        assert 0 <= bucket < len(curated.bucket_axis)
    for b in backgrounds:
        pure = oracle_background_subset(dataset, config.target, b, backgrounds, split)
        picked = curated.bucket_ids(b)
        assert len(picked) == min(config.cap, len(pure))
        assert set(picked) <= set(pure)
        if len(pure) <= config.cap:
            assert sorted(picked) == sorted(pure)
        # purity and disjointness, rescanned from raw labels
        for example_id in picked:
            labels = by_id[example_id].labels
            assert labels[names.index(b)] == 1
            assert labels[names.index(config.target)] == 0
            assert all(labels[names.index(c)] == 0 for c in backgrounds if c != b)
    stats = {s.finding: s for s in curated.stats}
    for b in backgrounds:
        assert stats[b].post_cap == min(config.cap, stats[b].pre_cap)


def test_target_cohort_keeps_cooccurring(small_vocab):
    ds = build_dataset(
        [("a", [1, 1, 0, 0]), ("b", [1, 0, 0, 0]), ("c", [0, 1, 0, 0])], small_vocab
    )
    assert target_cohort(ds, "pneumothorax") == ["a", "b"]


def test_target_cohort_empty(small_vocab):
    ds = build_dataset([("a", [0, 1, 0, 0])], small_vocab)
    assert target_cohort(ds, "pneumothorax") == []


def test_target_cohort_matches_oracle(small_vocab):
    for seed in range(15):
        ds = random_dataset(seed, 200, small_vocab, d=4)
        got = target_cohort(ds, "pneumothorax")
        assert got == oracle_target_cohort(ds, "pneumothorax")


def test_background_subset_single_pathology(small_vocab):
    ds = build_dataset(
        [
            ("only-eff", [0, 1, 0, 0]),
            ("eff-and-atel", [0, 1, 1, 0]),
            ("eff-with-target", [1, 1, 0, 0]),
            ("healthy", [0, 0, 0, 0]),
        ],
        small_vocab,
    )
    assert background_subset(ds, "pneumothorax", "effusion") == ["only-eff"]
    assert background_subset(ds, "pneumothorax", "atelectasis") == []


def test_background_subset_matches_oracle(small_vocab):
    backgrounds = tuple(n for n in small_vocab if n != "pneumothorax")
    for seed in range(15):
        ds = random_dataset(seed + 50, 200, small_vocab, d=4)
        for b in backgrounds:
            got = background_subset(ds, "pneumothorax", b)
            assert got == oracle_background_subset(ds, "pneumothorax", b, backgrounds)


def test_curate_cap_applies(small_vocab):
    rows = [(f"t{i}", [1, 0, 0, 0]) for i in range(3)]
    rows += [(f"e{i}", [0, 1, 0, 0]) for i in range(60)]
    ds = build_dataset(rows, small_vocab)
    curated = curate(ds, CurationConfig(target="pneumothorax", cap=40, seed=1))
    assert len(curated.bucket_ids("effusion")) == 40
    assert len(curated.bucket_ids("pneumothorax")) == 3  # target never capped


def test_curate_small_subset_uncapped(small_vocab):
    rows = [("t0", [1, 0, 0, 0])] + [(f"e{i}", [0, 1, 0, 0]) for i in range(10)]
    ds = build_dataset(rows, small_vocab)
    curated = curate(ds, CurationConfig(target="pneumothorax", cap=4000, seed=1))
    assert len(curated.bucket_ids("effusion")) == 10


def test_curate_deterministic(small_vocab):
    ds = random_dataset(7, 300, small_vocab, d=4)
    cfg = CurationConfig(target="pneumothorax", cap=20, seed=5)
    assert curate(ds, cfg) == curate(ds, cfg)


def test_curate_seed_changes_sample(small_vocab):
    rows = [("t0", [1, 0, 0, 0])] + [(f"e{i}", [0, 1, 0, 0]) for i in range(200)]
    ds = build_dataset(rows, small_vocab)
    a = curate(ds, CurationConfig(target="pneumothorax", cap=20, seed=1))
    b = curate(ds, CurationConfig(target="pneumothorax", cap=20, seed=2))
    assert a.bucket_ids("effusion") != b.bucket_ids("effusion")


def test_curate_oracle_fuzz(small_vocab):
    for seed in range(40):
        ds = random_dataset(seed + 500, 150, small_vocab, d=4, label_density=0.25)
        cfg = CurationConfig(target="pneumothorax", cap=1 + seed % 30, seed=seed)
        try:
            check_against_oracle(ds, cfg)
        except EmptyTargetError:
            assert oracle_target_cohort(ds, "pneumothorax", "train") == []


def test_curate_empty_target_raises(small_vocab):
    ds = build_dataset([("a", [0, 1, 0, 0])], small_vocab)
    with pytest.raises(EmptyTargetError):
        curate(ds, CurationConfig(target="pneumothorax"))


def test_curate_empty_background_bucket_allowed(small_vocab):
    ds = build_dataset([("a", [1, 0, 0, 0]), ("b", [0, 1, 0, 0])], small_vocab)
    curated = curate(ds, CurationConfig(target="pneumothorax"))
    assert curated.bucket_ids("pneumonia") == []
    stats = {s.finding: s for s in curated.stats}
    assert stats["pneumonia"].pre_cap == 0


def test_curate_ignores_test_split(small_vocab):
    train = build_dataset([("tr", [1, 0, 0, 0])], small_vocab, split="train")
    both = Dataset.from_examples(
        train.vocabulary,
        list(train.examples)
        + [
            make_example("te", [1, 0, 0, 0], l2_normalize(Rng(9).normals(4)), "test"),
        ],
    )
    curated = curate(both, CurationConfig(target="pneumothorax"))
    assert curated.bucket_ids("pneumothorax") == ["tr"]


def test_curate_restricted_background(small_vocab):
    rows = [("t", [1, 0, 0, 0]), ("e", [0, 1, 0, 0]), ("p", [0, 0, 0, 1]), ("ep", [0, 1, 0, 1])]
    ds = build_dataset(rows, small_vocab)
    cfg = CurationConfig(target="pneumothorax", background=("effusion",))
    curated = curate(ds, cfg)
    assert curated.bucket_axis == ("pneumothorax", "effusion")
    # purity only quantifies over the configured background set
    assert sorted(curated.bucket_ids("effusion")) == ["e", "ep"]


def test_curate_validation_errors(small_vocab):
    ds = build_dataset([("a", [1, 0, 0, 0])], small_vocab)
    with pytest.raises(UnknownLabelError):
        curate(ds, CurationConfig(target="nodule"))
    with pytest.raises(ConfigError):
        curate(ds, CurationConfig(target="pneumothorax", cap=0))
    with pytest.raises(ConfigError):
        curate(ds, CurationConfig(target="pneumothorax", background=("pneumothorax",)))


def test_sampling_uniformity(small_vocab):
    # |D_b| = 10, K = 5: every id should be included in roughly half the seeds.
    rows = [("t", [1, 0, 0, 0])] + [(f"e{i}", [0, 1, 0, 0]) for i in range(10)]
    ds = build_dataset(rows, small_vocab)
    hits = {f"e{i}": 0 for i in range(10)}
    runs = 1000
    for seed in range(runs):
        curated = curate(ds, CurationConfig(target="pneumothorax", cap=5, seed=seed))
        for example_id in curated.bucket_ids("effusion"):
            hits[example_id] += 1
    for count in hits.values():
        assert 0.4 <= count / runs <= 0.6


def test_curation_csv_round_trip(tmp_path, small_vocab):
    ds = random_dataset(21, 120, small_vocab, d=4)
    curated = curate(ds, CurationConfig(target="pneumothorax", cap=10, seed=3))
    path = tmp_path / "curation.csv"
    save_curation_csv(curated, path)
    pairs = load_curation_csv(path)
    assert entries_for_axis(pairs, curated.bucket_axis) == curated.entries
    with pytest.raises(UnknownLabelError):
        entries_for_axis(pairs, ("pneumothorax",))


def test_curation_report_shape(small_vocab):
    ds = random_dataset(22, 80, small_vocab, d=4)
    cfg = CurationConfig(target="pneumothorax", cap=10, seed=3)
    curated = curate(ds, cfg)
    report = curation_report(ds, cfg, curated)
    assert report["target"] == "pneumothorax"
    assert report["bucket_axis"][0] == "pneumothorax"
    assert len(report["buckets"]) == 4
    assert report["total_entries"] == len(curated.entries)
    assert set(report["cooccurrence_with_target"]) == set(small_vocab) - {"pneumothorax"}
