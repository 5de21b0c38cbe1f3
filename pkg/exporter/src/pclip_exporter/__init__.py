"""Bridge from pretrained vision-language checkpoints to PCLIPF32 archives.

Encodes images and text prompts with a frozen backbone and writes the
archive directories the refinement toolkit consumes. The directory format
is the entire contract: this package never imports the toolkit and never
computes losses or metrics.
"""

from .errors import ExportValidationError, ImageDecodeError, ModelLoadError, WriteError
from .export import export_images, export_prompts
from .job import ExportJob, load_job

__all__ = [
    "ExportJob",
    "ExportValidationError",
    "ImageDecodeError",
    "ModelLoadError",
    "WriteError",
    "export_images",
    "export_prompts",
    "load_job",
]
