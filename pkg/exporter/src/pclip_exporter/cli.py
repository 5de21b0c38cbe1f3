"""Command-line entry point: run an export job file."""
from __future__ import annotations

import argparse
import logging
import sys

from .backends import load_encoder
from .errors import ExporterError
from .export import export_images, export_prompts
from .job import load_job


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pclip-export",
        description="Encode images and text prompts with a frozen backbone "
        "and write archive directories for the refinement toolkit.",
    )
    parser.add_argument("--job", required=True, help="export job JSON file")
    parser.add_argument(
        "--only",
        choices=("images", "prompts"),
        help="export just one side (default: both)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        job = load_job(args.job)
        encoder = load_encoder(job.model, job.device)
        if args.only in (None, "images"):
            out = export_images(job, encoder)
            print(f"image archive: {out}")
        if args.only in (None, "prompts"):
            out = export_prompts(job, encoder)
            print(f"text archive: {out}")
    except ExporterError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
