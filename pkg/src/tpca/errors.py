"""Exception hierarchy. The CLI maps these onto exit codes."""


class TpcaError(Exception):
    """Base class for all package errors."""


class InfeasibleError(TpcaError):
    """The observation pattern does not allow the requested estimate (exit code 3)."""


class IdentificationError(InfeasibleError):
    """Two units never share an observed period, so their second moment is undefined."""

    def __init__(self, i, j):
        self.pair = (int(i), int(j))
        super().__init__(f"units {i} and {j} have no commonly observed period")


class SingularGramError(InfeasibleError):
    """The loading Gram matrix of the observed units at some period is singular."""

    def __init__(self, t, condition):
        self.t = int(t)
        self.condition = float(condition)
        super().__init__(
            f"loading Gram matrix at period {t} is singular (condition number {condition:.3g})"
        )


class NumericalError(TpcaError):
    """A computation produced a non-finite or otherwise unusable result (exit code 4)."""
