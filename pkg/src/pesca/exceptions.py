"""Exception hierarchy shared by every module."""


class PescaError(Exception):
    """Base class for all package errors."""


class ContractError(PescaError, ValueError):
    """Inputs violate a documented precondition (shapes, ranges, counts)."""


class InvalidStateError(PescaError, ValueError):
    """A numeric state is unusable, e.g. non-finite natural parameters."""


class DivergenceError(PescaError, ArithmeticError):
    """The objective became non-finite during a fit."""

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = trace


class EstimationError(PescaError, ValueError):
    """Dispersion estimation cannot proceed (e.g. no residual degrees of freedom)."""


class StratificationError(ContractError):
    """A binary block cannot be split into stratified train/test parts."""


class SimulationInfeasibleError(PescaError, RuntimeError):
    """The rejection sampler ran out of attempts."""
