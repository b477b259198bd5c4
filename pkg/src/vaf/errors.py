"""Exception hierarchy shared by all vaf modules."""


class VafError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VafError, ValueError):
    """Argument outside the domain where a formula is defined."""


class InputError(VafError, ValueError):
    """Malformed or inconsistent caller input."""


class ConvergenceError(VafError, ArithmeticError):
    """An iterative solver exhausted its budget.

    ``diagnostics`` carries whatever state the solver had when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SimulationError(VafError, RuntimeError):
    """Internal logic error inside a simulation run (a bug, not bad input)."""


class CloudRequestError(VafError):
    """An instance request the cloud refused. Callers are expected to tolerate it."""


class QuotaExceeded(CloudRequestError):
    pass


class InjectedFailure(CloudRequestError):
    pass
