"""Exception types shared across the package."""


class NavHintError(Exception):
    """Base class for all package errors."""


class GenerationError(NavHintError):
    """World or episode generation gave up after its retry budget."""


class UnknownNodeError(NavHintError, KeyError):
    """A node id that does not exist in the world was requested."""


class WorldReferenceError(NavHintError, LookupError):
    """An episode or record references a world that is not available."""


class UndefinedInputError(NavHintError, ValueError):
    """Input for which the requested quantity is undefined (empty corpus, empty rollout, ...)."""


class ShapeError(NavHintError, ValueError):
    """Tensor shapes do not line up."""


class HintParseError(NavHintError, ValueError):
    """The sub-instruction clause of a hint could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class TrainingAbort(NavHintError, RuntimeError):
    """Training hit a non-finite loss."""


class CheckFailure(NavHintError, AssertionError):
    """Gradient check exceeded its tolerance."""


class SchemaError(NavHintError, ValueError):
    """A file does not match the expected schema or version."""
