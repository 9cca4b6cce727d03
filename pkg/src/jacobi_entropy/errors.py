"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems exit 1,
mathematical domain violations exit 2, numerical non-convergence exits 3.
"""


class JacobiError(Exception):
    exit_code = 1


class ConfigError(JacobiError):
    exit_code = 1


class ParseError(ConfigError):
    """Malformed potential source. ``position`` is a 0-based character offset."""

    def __init__(self, message, position=None, source=None):
        self.position = position
        self.source = source
        if position is not None:
            message = f"{message} (at position {position})"
            if source is not None:
                message = f"{message}\n  {source}\n  {' ' * position}^"
        super().__init__(message)


class DimensionError(ConfigError):
    pass


class DomainError(JacobiError):
    exit_code = 2


class TurningPointError(DomainError):
    pass


class DegenerateCriticalPointError(DomainError):
    pass


class ValidityError(DomainError):
    """A truncated expansion was evaluated outside its range of validity."""


class ResonanceError(DomainError):
    def __init__(self, message, eigenvalue=None):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class ConvergenceError(JacobiError):
    exit_code = 3
