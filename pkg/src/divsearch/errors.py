"""Exception hierarchy shared by all pipeline stages."""


class DivsearchError(Exception):
    """Base class for all package errors."""


class ConfigError(DivsearchError):
    """Invalid configuration, query, or input file."""


class QueryParseError(ConfigError):
    """Structured-query text could not be parsed.

    Carries the character offset of the offending token.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DimensionError(DivsearchError):
    """Vector dimension does not match the corpus."""


class NotFoundError(DivsearchError):
    """Referenced item id does not exist."""


class EmptyInputError(DivsearchError):
    """Operation requires at least one element."""


class NumericalError(DivsearchError):
    """Numerical failure, e.g. a kernel matrix that is not positive definite."""
