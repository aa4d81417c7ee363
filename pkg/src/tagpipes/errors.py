"""Exception taxonomy shared across the package.

Plain precondition breaches (empty inputs, out-of-range arguments) raise
ValueError; the classes here cover failures a caller may want to catch and
handle individually.
"""


class TagPipesError(Exception):
    """Base class for package-specific errors."""


class FormatError(TagPipesError):
    """A file or payload does not match its documented format."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += f" [{path}"
            loc += f":{line}]" if line is not None else "]"
        elif line is not None:
            loc += f" [line {line}]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class ValidationError(TagPipesError):
    """Structurally parseable input that violates a semantic constraint."""


class InsufficientClassError(ValidationError):
    """A class has too few members for the requested per-class sample."""


class InsufficientNodesError(ValidationError):
    """The node pool cannot cover the requested split or budget."""


class EmptyVocabularyError(TagPipesError):
    """Fitting a vocabulary produced no usable terms."""


class ShapeError(TagPipesError):
    """Tensor dimensions disagree with the model or with each other."""


class DivergenceError(TagPipesError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, learning_rate: float):
        super().__init__(
            f"non-finite training loss at epoch {epoch} (learning_rate={learning_rate})"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


class TransportError(TagPipesError):
    """A network-level failure that persisted through retries."""


class ProviderError(TagPipesError):
    """The remote service answered with an error payload."""

    def __init__(self, message: str, *, status: int | None = None):
        super().__init__(message)
        self.status = status


class ProtocolError(TagPipesError):
    """The remote service answered with a malformed or inconsistent payload."""


class CancellationError(TagPipesError):
    """An operation was abandoned because its limiter shut down."""


class InsufficientAnnotationError(TagPipesError):
    """Too few usable pseudo labels survived annotation."""


class RunFailureError(TagPipesError):
    """An experiment aborted because too many seeds failed."""
