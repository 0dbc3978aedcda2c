"""Exception hierarchy.

Data-side problems (bad CSV, bad checkpoint) and configuration problems are
kept in separate branches so the CLI can map them onto stable exit codes.
"""


class EhrGraphError(Exception):
    """Base class for all package errors."""


class ContractError(EhrGraphError, ValueError):
    """A documented precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes do not conform."""


class DataError(EhrGraphError):
    """Input data could not be used (maps to CLI exit code 2)."""


class SchemaError(DataError, ValueError):
    pass


class ParseError(DataError, ValueError):
    pass


class EmptyRecordError(DataError, ValueError):
    """A patient row has no active medical event."""


class CheckpointError(DataError):
    pass


class GenerationError(EhrGraphError, RuntimeError):
    """Synthetic data could not be generated with the requested rates."""


class ConfigError(EhrGraphError, ValueError):
    """Invalid run configuration (maps to CLI exit code 3)."""
