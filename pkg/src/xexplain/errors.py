"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: usage problems are handled by argparse
itself (exit 2), ModelContractError maps to 3, DataError to 4 and
NoMatchError to 5.
"""


class XExplainError(Exception):
    """Base class for all engine errors."""


class ModelContractError(XExplainError):
    """The model file or manifest violates the interchange contract."""


class DecompositionError(ModelContractError):
    """The declared final layer does not reproduce the logits (f = xW + b fails)."""


class DataError(XExplainError):
    """Bad input data: unreadable images, malformed manifests, corrupt index files."""


class DimensionError(DataError):
    """Operands have incompatible shapes or sizes."""


class BoundsError(DataError):
    """An index or geometry argument is outside its valid range."""


class FormatError(DataError):
    """A persisted binary artifact is corrupt or has the wrong layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParameterError(DataError):
    """A configuration parameter is out of its valid range."""


class NoMatchError(XExplainError):
    """The constrained matching problem has an empty feasible set."""
