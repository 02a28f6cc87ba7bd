"""
Error taxonomy for the O-DisCo toolkit.

Every failure raised by the services carries an ``ErrorCategory`` that the
command line maps onto its exit status, plus a short machine-readable code.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional


class ErrorCategory(Enum):
    """Enumeration of error categories and their exit statuses."""

    INPUT = "input"
    INVARIANT = "invariant"
    INTERNAL = "internal"

    @property
    def exit_code(self) -> int:
        return _EXIT_CODES[self]


_EXIT_CODES = {
    ErrorCategory.INPUT: 2,
    ErrorCategory.INVARIANT: 3,
    ErrorCategory.INTERNAL: 4,
}


class ODiscoError(Exception):
    """Base exception for toolkit errors."""

    category = ErrorCategory.INTERNAL
    code = "internal"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details


class InvalidArithmeticError(ODiscoError, ArithmeticError):
    """Raised when a pixel value is not finite."""

    category = ErrorCategory.INVARIANT
    code = "invalid_arithmetic"


class InvalidKernelError(ODiscoError, ValueError):
    """Raised for even, non-positive or otherwise unusable kernel sizes."""

    category = ErrorCategory.INVARIANT
    code = "invalid_kernel"


class InvalidThresholdError(ODiscoError, ValueError):
    """Raised when edge thresholds are inverted."""

    category = ErrorCategory.INVARIANT
    code = "invalid_threshold"


class InvalidBlockError(ODiscoError, ValueError):
    """Raised when a mosaic block size is not positive."""

    category = ErrorCategory.INVARIANT
    code = "invalid_block"


class InvalidParameterError(ODiscoError, ValueError):
    """Raised when an explicit parameter violates its module's invariants."""

    category = ErrorCategory.INVARIANT
    code = "invalid_parameter"


class DegenerateRegionError(ODiscoError, ValueError):
    """Raised when a masked region selects no pixels."""

    category = ErrorCategory.INVARIANT
    code = "degenerate_region"


class ShapeMismatchError(ODiscoError, ValueError):
    """Raised when paired arrays do not share dimensions."""

    category = ErrorCategory.INPUT
    code = "shape_mismatch"


class InsufficientFramesError(ODiscoError, ValueError):
    """Raised when an operation needs more frames than were supplied."""

    category = ErrorCategory.INPUT
    code = "insufficient_frames"


class UnknownTaskError(ODiscoError, ValueError):
    """Raised for task names outside the task catalogue."""

    category = ErrorCategory.INPUT
    code = "unknown_task"


class MissingFrameError(ODiscoError):
    """Raised when a frame directory has a gap in its numbering."""

    category = ErrorCategory.INPUT
    code = "missing_frame"


class FrameDimensionError(ODiscoError):
    """Raised when a frame or frame count differs from what was expected."""

    category = ErrorCategory.INPUT
    code = "dimension_mismatch"


class LossySourceError(ODiscoError):
    """Raised when a frame is stored in a lossy format."""

    category = ErrorCategory.INPUT
    code = "lossy_source"


class ManifestError(ODiscoError):
    """Raised for unreadable or inconsistent manifests."""

    category = ErrorCategory.INPUT
    code = "invalid_manifest"


class TensorFormatError(ODiscoError):
    """Raised for malformed raw tensor files; ``code`` names the defect."""

    category = ErrorCategory.INPUT

    def __init__(self, message: str, code: str, **details: Any):
        super().__init__(message, **details)
        self.code = code


class MissingCellError(ODiscoError, ValueError):
    """Raised when an averaged metric column has a missing value."""

    category = ErrorCategory.INPUT
    code = "missing_cell"


class DegenerateColumnError(ODiscoError, ValueError):
    """Raised when a metric column cannot be min-max normalized."""

    category = ErrorCategory.INVARIANT
    code = "degenerate_column"


@dataclass
class ErrorReport:
    """Structured, machine-readable description of a failed invocation."""

    category: ErrorCategory
    code: str
    message: str
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return self.category.exit_code

    def to_dict(self) -> dict:
        return {
            "error_category": self.category.value,
            "error_code": self.code,
            "exit_code": self.exit_code,
            "message": self.message,
            "details": {key: str(value) for key, value in self.details.items()},
        }


def build_error_report(error: BaseException, context: Optional[str] = None) -> ErrorReport:
    """
    Convert any exception into an ErrorReport.

    Toolkit errors keep their own category and code; anything else is an
    internal error.
    """
    if isinstance(error, ODiscoError):
        details = dict(error.details)
        if context:
            details["context"] = context
        return ErrorReport(error.category, error.code, error.message, details)

    details = {"exception": type(error).__name__}
    if context:
        details["context"] = context
    return ErrorReport(ErrorCategory.INTERNAL, "internal", str(error) or repr(error), details)
