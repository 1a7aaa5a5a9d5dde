"""Exception hierarchy shared across gradlab modules."""


class GradlabError(Exception):
    pass


class DimensionError(GradlabError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(GradlabError, ValueError):
    """An argument lies outside the operation's domain."""


class CompositionError(GradlabError, KeyError):
    """A traced computation referenced a name that was not bound."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ContractError(GradlabError, ValueError):
    """A traced computation violated its output contract (e.g. non-scalar)."""


class DivergenceError(GradlabError, ArithmeticError):
    """Non-finite values appeared during an iterative computation."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TraceCorruptionError(GradlabError):
    """Reconstructed weights failed checksum verification."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NotPositiveDefiniteError(GradlabError, ValueError):
    """Operator is not positive definite after damping."""


class ConfigError(GradlabError, ValueError):
    """Malformed experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
