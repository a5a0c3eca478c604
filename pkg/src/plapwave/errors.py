"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A caller-supplied value violates an operation's precondition."""


class UnsupportedOperation(TypeError):
    """The operation is not defined for the given basis kind."""


class NumericalFailure(RuntimeError):
    """A numerical routine did not converge.

    ``diagnostics`` carries whatever the failing routine could report
    (iteration counts, residual norms, solver messages).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""
