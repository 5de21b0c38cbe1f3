class ExporterError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ExportValidationError(ExporterError):
    """Job file inconsistencies: duplicate ids, missing files, bad templates."""


class ModelLoadError(ExporterError):
    """The backbone checkpoint cannot be loaded."""


class ImageDecodeError(ExporterError):
    """One image failed to open/decode (logged per file, job continues)."""


class WriteError(ExporterError):
    """Archive output could not be written."""
