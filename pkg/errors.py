"""
Custom Exception Classes
=========================

Error hierarchy for the synthetic action-video pipeline, with helpful
messages and recovery suggestions. Everything deriving from InputError is a
problem with the caller's inputs (CLI exit status 1); anything else escaping
a subcommand is an internal failure (exit status 2).
"""

from typing import Any, Iterable, Optional

from pydantic import ValidationError as PydanticValidationError


# ============================================================================
# BASE EXCEPTIONS
# ============================================================================

class SynthesisError(Exception):
    """Base exception for all pipeline errors."""

    def __init__(
        self,
        message: str,
        suggestion: Optional[str] = None,
        context: Optional[dict] = None
    ):
        self.message = message
        self.suggestion = suggestion
        self.context = context or {}
        super().__init__(self.message)

    def __str__(self):
        parts = [self.message]
        if self.suggestion:
            parts.append(f"\n💡 Suggestion: {self.suggestion}")
        if self.context:
            parts.append(f"\n📋 Context: {self.context}")
        return "".join(parts)

    def to_dict(self) -> dict:
        """Convert to dictionary for reports and manifests."""
        return {
            "error": self.message,
            "suggestion": self.suggestion,
            "context": self.context,
            "error_type": self.__class__.__name__
        }


class InputError(SynthesisError):
    """Base class for errors caused by invalid inputs."""
    pass


# ============================================================================
# DOCUMENT ERRORS
# ============================================================================

class DocumentFormatError(InputError):
    """A document is malformed or does not match its file format."""

    def __init__(self, source: str, reason: str, field_path: Optional[str] = None):
        self.source = source
        self.field_path = field_path
        location = f" at {field_path}" if field_path else ""
        super().__init__(
            message=f"Malformed document {source}{location}: {reason}",
            suggestion="Check the document against its JSON file format",
            context={"source": source, "field_path": field_path}
        )


class InvariantViolationError(InputError):
    """A value violates a domain invariant."""

    def __init__(self, field_path: str, reason: str, source: Optional[str] = None):
        self.field_path = field_path
        self.reason = reason
        self.source = source
        prefix = f"{source}: " if source else ""
        super().__init__(
            message=f"{prefix}{field_path}: {reason}",
            suggestion="Correct the offending field and retry",
            context={"field_path": field_path, "source": source}
        )


class DimensionMismatchError(InputError):
    """Two inputs disagree on a dimension (joint count, feature size...)."""

    def __init__(self, what: str, expected: Any, actual: Any):
        super().__init__(
            message=f"Dimension mismatch for {what}: expected {expected}, got {actual}",
            suggestion="Make sure the inputs were produced for the same skeleton or model",
            context={"what": what, "expected": expected, "actual": actual}
        )


class DegenerateBoneError(InputError):
    """An observed bone is too short to define a direction; `joint` is the bone's child joint."""

    def __init__(self, joint: str, frame: int, parent_joint: Optional[str] = None):
        self.joint = joint
        self.parent_joint = parent_joint
        self.frame = frame
        bone = f"'{parent_joint}' -> '{joint}'" if parent_joint else f"at joint '{joint}'"
        super().__init__(
            message=f"Degenerate bone {bone} in frame {frame}",
            suggestion="The child keypoint coincides with its parent; clean the keypoint track",
            context={"joint": joint, "parent_joint": parent_joint, "frame": frame}
        )


# ============================================================================
# COMPOSITING / DATASET ERRORS
# ============================================================================

class NoForegroundError(InputError):
    """A white-background sequence contains no visible foreground."""

    def __init__(self, source: Optional[str] = None):
        super().__init__(
            message="no foreground",
            suggestion="Check the camera framing; every frame rendered fully transparent",
            context={"source": source} if source else None
        )


class BackgroundPoolError(InputError):
    """More backgrounds requested than the pool holds."""

    def __init__(self, g: int, pool_size: int):
        super().__init__(
            message=f"Cannot sample g={g} backgrounds from a pool of {pool_size}",
            suggestion="Lower g or add background images to the pool",
            context={"g": g, "pool_size": pool_size}
        )


class ManifestFormatError(InputError):
    """A manifest line could not be parsed or is inconsistent."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.line_number = line_number
        super().__init__(
            message=f"{path}, line {line_number}: {reason}",
            suggestion="Regenerate the manifest with gen-dataset",
            context={"path": path, "line_number": line_number}
        )


# ============================================================================
# EXPERIMENT ERRORS
# ============================================================================

class InsufficientPoolError(InputError):
    """A pool does not hold enough videos for a class."""

    def __init__(self, pool: str, class_label: str, needed: int, available: int):
        super().__init__(
            message=(
                f"{pool} pool has {available} videos of class '{class_label}', "
                f"{needed} needed"
            ),
            suggestion="Generate more videos or lower the experiment counts",
            context={"pool": pool, "class_label": class_label,
                     "needed": needed, "available": available}
        )


class SplitLeakageError(InputError):
    """The same video or identity appears in training and test data."""

    def __init__(self, kind: str, ids: Iterable[str]):
        ids = sorted(ids)
        super().__init__(
            message=f"{kind} shared between train and test: {', '.join(ids[:5])}",
            suggestion="Reserve distinct identities for the test split",
            context={"kind": kind, "ids": ids}
        )


class EmptyDataError(InputError):
    """A required collection is empty."""

    def __init__(self, what: str):
        super().__init__(
            message=f"Empty {what}",
            suggestion=f"Provide at least one element in the {what}"
        )


# ============================================================================
# CONFIGURATION ERRORS
# ============================================================================

class ConfigurationError(InputError):
    """Configuration error."""

    def __init__(self, setting: str, reason: str):
        super().__init__(
            message=f"Configuration error for '{setting}': {reason}",
            suggestion="Check the configuration file or command-line flags",
            context={"setting": setting}
        )


# ============================================================================
# HELPER FUNCTIONS
# ============================================================================

_STRUCTURAL_ERROR_TYPES = {
    "missing", "extra_forbidden", "json_invalid", "model_type", "dict_type",
    "list_type", "tuple_type", "too_short", "too_long",
}


def from_validation_error(exc: PydanticValidationError, source: str) -> InputError:
    """
    Convert a pydantic ValidationError to a pipeline error.

    Args:
        exc: The pydantic error
        source: Document name for the message

    Returns:
        DocumentFormatError for structural problems, InvariantViolationError
        for value problems; both carry the dotted field path of the first error
    """
    first = exc.errors()[0]
    field_path = ".".join(str(part) for part in first.get("loc", ())) or "<root>"
    message = first.get("msg", "invalid value")
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]

    if first.get("type") in _STRUCTURAL_ERROR_TYPES:
        return DocumentFormatError(source, message, field_path)
    return InvariantViolationError(field_path, message, source)


def safe_execute(
    func,
    *args,
    error_class=SynthesisError,
    error_message: str = "Operation failed",
    **kwargs
):
    """
    Safely execute a function with error handling.

    Args:
        func: Function to execute
        *args: Function arguments
        error_class: Exception class to raise on failure
        error_message: Error message
        **kwargs: Function keyword arguments

    Returns:
        Function result or raises error_class
    """
    try:
        return func(*args, **kwargs)
    except SynthesisError:
        # Re-raise our custom errors
        raise
    except Exception as e:
        raise error_class(
            message=f"{error_message}: {str(e)}",
            suggestion="Check the input data and try again"
        ) from e
