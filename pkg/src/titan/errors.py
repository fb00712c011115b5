"""Exception hierarchy shared by every titan module."""


class TitanError(Exception):
    """Base class for all library errors."""


class DomainError(TitanError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class PrecisionError(DomainError):
    """A value is not representable on the exact backend's grid."""


class ParseError(TitanError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProtocolError(TitanError):
    """A node program broke the message-passing contract."""


class BudgetExceeded(ProtocolError):
    pass


class RankError(DomainError):
    """The normal-equation matrix is (numerically) singular."""
