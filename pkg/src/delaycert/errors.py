"""Shared exception and warning types."""


class ContractError(ValueError):
    """A documented precondition or invariant was violated by the caller."""


class DomainError(ContractError):
    """Evaluation was requested outside the domain an object covers."""


class ProblemFileError(ContractError):
    """A problem file failed validation; the message carries the field path."""


class ParseError(ValueError):
    """Syntax error in a DSL expression, with 1-based line:column position."""

    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class EvalError(ValueError):
    """Arithmetic domain violation while evaluating an expression.

    Carries the position of the offending node when raised through the
    tree walker; the fast compiled path raises it position-free.
    """

    def __init__(self, message, line=None, col=None):
        prefix = f"{line}:{col}: " if line is not None else ""
        super().__init__(prefix + message)
        self.message = message
        self.line = line
        self.col = col


class QuadratureWarning(UserWarning):
    """Quadrature refinement hit its cap before meeting the internal check."""
