import json
import subprocess
import sys

import numpy as np
import pytest

from pclip_exporter.backends import byte_tokens, load_encoder
from pclip_exporter.cli import main
from pclip_exporter.errors import ExportValidationError, ModelLoadError
from pclip_exporter.export import expand_prompts, export_images, export_prompts
from pclip_exporter.job import load_job

MAGIC = b"PCLIPF32"


def read_rows(path, count, dim):
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    return np.frombuffer(blob[8:], dtype="<f4").reshape(count, dim)


def test_job_validation_duplicate_id(job_file, sample_images):
    images = sample_images + [dict(sample_images[0])]
    with pytest.raises(ExportValidationError, match="duplicate image id"):
        load_job(job_file(images=images))


def test_job_validation_missing_file(job_file, sample_images):
    images = [dict(sample_images[0])]
    images[0]["path"] = "/nonexistent/nope.png"
    with pytest.raises(ExportValidationError, match="file not found"):
        load_job(job_file(images=images))


def test_job_validation_unknown_label(job_file, sample_images):
    images = [dict(sample_images[0], labels=["mystery"])]
    with pytest.raises(ExportValidationError, match="not in vocabulary"):
        load_job(job_file(images=images))


def test_job_validation_bad_template(job_file):
    with pytest.raises(ExportValidationError, match="no pneumothorax at all"):
        load_job(job_file(prompts={"positive_templates": ["no pneumothorax at all"]}))


def test_model_load_errors(tmp_path, job_file):
    job = load_job(job_file())
    with pytest.raises(ModelLoadError):
        load_encoder({"kind": "mystery"}, "cpu")
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a model")
    with pytest.raises(ModelLoadError):
        load_encoder({"kind": "torchscript", "image_model": str(bad), "text_model": str(bad)}, "cpu")
    del job


def test_export_images_archive_layout(job_file):
    job = load_job(job_file())
    out = export_images(job)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 10
    assert manifest["d"] == 16  # equals the model projection dim
    assert manifest["vocabulary"] == ["tgt", "bga", "bgb"]
    assert manifest["provenance"]["preprocessing"]["resize"] == [224, 224]
    rows = read_rows(out / "teacher.f32", 10, 16)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-5)
    labels = (out / "labels.csv").read_text().splitlines()
    assert labels[0] == "id,tgt,bga,bgb"
    assert labels[1] == "img0,1,0,0"
    assert labels[2] == "img1,1,1,0"


def test_export_images_deterministic(job_file, tmp_path):
    job = load_job(job_file())
    first = export_images(job)
    first_bytes = (first / "teacher.f32").read_bytes()
    job2 = load_job(
        job_file(out_images=str(tmp_path / "again/images"), out_text=str(tmp_path / "again/text"))
    )
    second = export_images(job2)
    assert (second / "teacher.f32").read_bytes() == first_bytes


def test_export_images_skips_undecodable(job_file, sample_images, tmp_path, caplog):
    broken = tmp_path / "broken.png"
    broken.write_bytes(b"this is not a png")
    images = sample_images + [{"id": "imgX", "path": str(broken), "labels": [], "split": "train"}]
    job = load_job(job_file(images=images))
    with caplog.at_level("WARNING"):
        out = export_images(job)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 10
    assert "imgX" not in manifest["ids"]
    assert any("imgX" in record.message for record in caplog.records)


def test_expand_prompts_counting(job_file):
    # counting check: 3 findings x 2 positive + 1 negative class x 2 = 8 rows;
    # with 6 findings and target-only negatives the same rule gives 14
    job = load_job(job_file())
    rows = expand_prompts(job)
    assert len(rows) == 3 * 2 + 1 * 2
    positives = [r for r in rows if r[2] == "positive"]
    assert len(positives) == 6
    assert ("indicating tgt", "tgt", "positive") in rows
    assert ("no indication of tgt", "tgt", "negative") in rows


def test_export_prompts_archive(job_file):
    job = load_job(job_file())
    out = export_prompts(job)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "text"
    assert manifest["count"] == 8
    rows = read_rows(out / "teacher.f32", 8, 16)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-5)
    header, *lines = (out / "prompts.csv").read_text().splitlines()
    assert header == "prompt,class,role"
    assert len(lines) == 8


def test_byte_tokens_shape_and_padding():
    tokens = byte_tokens(["ab", "a much longer prompt"], max_length=8)
    assert tokens.shape == (2, 8)
    assert tokens[0, 0].item() == ord("a") + 1
    assert tokens[0, 2:].tolist() == [0] * 6


def test_cli_runs_job(job_file, tmp_path, capsys):
    assert main(["--job", str(job_file())]) == 0
    printed = capsys.readouterr().out
    assert "image archive" in printed and "text archive" in printed


def test_cli_validation_exit_code(job_file, sample_images, capsys):
    images = sample_images + [dict(sample_images[0])]
    assert main(["--job", str(job_file(images=images))]) == 1
    assert "error: ExportValidationError" in capsys.readouterr().err


def run_toolkit(*args):
    result = subprocess.run(
        [sys.executable, "-m", "protoalign.cli", *args], capture_output=True, text=True
    )
    assert result.returncode == 0, result.stderr
    return result.stdout


def test_exported_archives_run_through_the_toolkit(job_file, tmp_path):
    """Cross-component contract: exported archives load with zero validation
    errors and curate/train/eval complete end-to-end on them."""
    job = load_job(job_file())
    export_images(job)
    export_prompts(job)

    config = tmp_path / "pipeline.json"
    config.write_text(
        json.dumps(
            {"target": "tgt", "train": {"epochs": 2, "batch_size": 4, "hidden": 8}}
        )
    )
    run_toolkit(
        "curate",
        "--archive", str(job.out_images),
        "--config", str(config),
        "--out", str(tmp_path / "curated"),
    )
    run_toolkit(
        "train",
        "--archive", str(job.out_images),
        "--curation", str(tmp_path / "curated/curation.csv"),
        "--anchors", str(job.out_text),
        "--config", str(config),
        "--out", str(tmp_path / "runs"),
    )
    out = run_toolkit(
        "eval",
        "--archive", str(job.out_images),
        "--anchors", str(job.out_text),
        "--checkpoint", str(tmp_path / "runs/head_seed0.ckpt"),
        "--config", str(config),
        "--out", str(tmp_path / "report.json"),
    )
    assert "operating point" in out
    report = json.loads((tmp_path / "report.json").read_text())
    target_row = next(r for r in report["findings"] if r["finding"] == "tgt")
    assert target_row["auc"] is not None
    assert report["operating_point"] is not None
