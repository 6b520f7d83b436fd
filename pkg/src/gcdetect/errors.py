"""Exception hierarchy shared across the pipeline.

The CLI maps InputValidationError to exit code 1 and DataIOError to exit
code 2; everything raised by library code should derive from one of them.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class InputValidationError(PipelineError):
    """Bad parameters, malformed inputs, violated preconditions."""


class DataIOError(PipelineError):
    """Files missing, unreadable, or undecodable."""


class MissingFileError(DataIOError):
    pass


class FormatError(DataIOError):
    """File exists but cannot be decoded as the expected format."""


class DimensionMismatchError(InputValidationError):
    """Manifest-declared dimensions disagree with the decoded file."""


class ModelError(InputValidationError):
    """Model file or manifest violates the classifier contract."""
