"""Error taxonomy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) -> 3, NumericError -> 4. Everything else is a bug.
"""


class ConfigError(Exception):
    """Invalid configuration: bad dimensions, malformed options, missing paths."""


class DataError(Exception):
    """Invalid input data: unresolved references, out-of-range ids, bad spans."""


class SchemaError(DataError):
    """A service schema violates its invariants."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class DomainError(ValueError):
    """Input outside an operation's mathematical domain (e.g. empty softmax)."""


class DecodeError(RuntimeError):
    """A prediction head could not produce a well-formed output."""


class NumericError(ArithmeticError):
    """Non-finite value produced where the contract requires finite results."""
