"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(RuntimeError):
    """A computation produced non-finite or otherwise unusable numbers."""


class SchemaError(ValueError):
    """An input file does not have the expected columns or structure."""


class ParseError(ValueError):
    """A cell or row of an input file could not be parsed."""
