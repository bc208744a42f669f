"""Exception hierarchy shared by all modules."""


class PostselectError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(PostselectError, ValueError):
    """An input violated a documented precondition (non-unit vector, bad dimension, ...)."""


class ArgumentError(PostselectError, ValueError):
    """A count or parameter is outside its allowed range."""


class NumericError(PostselectError, ArithmeticError):
    """A numerical routine failed to converge or broke an integrity check."""


class EmptySubensembleError(PostselectError):
    """Postselection rejected every event, so the conditional statistic is undefined."""


class SearchExhaustedError(PostselectError):
    """Rejection sampling used its whole budget without an accepted draw."""


class ConfigError(PostselectError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
