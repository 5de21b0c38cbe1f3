"""Exception hierarchy shared by every module.

``ToolkitError`` subclasses signal invalid inputs or configs; the CLI maps
them to exit code 1. Anything else escaping a command is a runtime failure
(exit code 2).
"""
from __future__ import annotations


class ToolkitError(Exception):
    """Base class for validation-style failures."""

    exit_code = 1


class ZeroNormError(ToolkitError):
    """A vector expected to be normalizable has (near-)zero norm."""


class ShapeMismatchError(ToolkitError):
    """Array shapes are inconsistent with each other."""


class FormatError(ToolkitError):
    """An archive or checkpoint file is malformed (bad magic, truncation, non-finite data)."""


class DimMismatchError(ToolkitError):
    """Counts or dimensions disagree between a manifest and its payload."""


class DuplicateIdError(ToolkitError):
    """Two examples (or prompts) share an id."""


class UnknownLabelError(ToolkitError):
    """A finding name is not part of the vocabulary."""


class EmptyTargetError(ToolkitError):
    """The target cohort is empty; training would be meaningless."""


class EmptyTemplateError(ToolkitError):
    """An anchor was requested from an empty template list."""


class MissingPromptError(ToolkitError):
    """A text archive lacks the embedding for a required (class, template) prompt."""

    def __init__(self, finding: str, prompt: str):
        super().__init__(f"missing prompt embedding for class {finding!r}: {prompt!r}")
        self.finding = finding
        self.prompt = prompt


class CountMismatchError(ToolkitError):
    """Two batched sequences that must align have different lengths."""


class EmptyDatasetError(ToolkitError):
    """No examples are available where at least one is required."""


class DegenerateLabelsError(ToolkitError):
    """A score set lacks the positives and/or negatives a metric needs."""


class MissingAnchorError(ToolkitError):
    """No anchor embedding exists for a requested finding."""


class ConfigError(ToolkitError):
    """A configuration value is out of range or internally inconsistent."""


class NonFiniteLossError(Exception):
    """Training produced a NaN/Inf loss; aborted mid-run (runtime failure)."""

    exit_code = 2

    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"non-finite loss at step {step}")
        self.step = step
