"""Exception hierarchy shared across the package.

Every error raised by d4d derives from :class:`D4dError` so the CLI can map
any pipeline failure to a single nonzero exit code.
"""


class D4dError(Exception):
    """Base class for all d4d failures."""


class ShapeError(D4dError, ValueError):
    """Operands have incompatible or unexpected shapes."""


class ParameterError(D4dError, ValueError):
    """An argument is outside its documented domain."""


class CapacityError(D4dError, ValueError):
    """A source collection is too small for the requested operation."""


class FormatError(D4dError):
    """A serialized file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EvaluationError(D4dError):
    """Metric evaluation cannot proceed (e.g. no valid pixels)."""


class GenerationError(D4dError):
    """Sampling produced a non-finite intermediate state."""


class TrainingDiverged(D4dError):
    """Training hit a non-finite loss. Carries step diagnostics."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
