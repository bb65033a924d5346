"""Exception types shared across the package.

All subclass ValueError so callers that only care about "bad input"
can catch the builtin.
"""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class SchemaError(ValueError):
    """A data file is structurally inconsistent (e.g. partial augmentation coverage)."""


class ParseError(ValueError):
    """A data file contains unparseable or non-finite values."""


class DimensionMismatchError(ValueError):
    """Array shapes disagree with each other or with the declared dimension."""


class DegenerateVectorError(ValueError):
    """A zero-norm vector reached an operation that requires a direction."""


class ContractError(ValueError):
    """An internal calling contract was violated (stale cache, missing inputs, ...)."""
