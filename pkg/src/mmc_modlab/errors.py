"""Exception hierarchy shared by the analysis and simulation modules."""

from __future__ import annotations


class ModlabError(Exception):
    """Base class for every error raised by mmc_modlab."""


class InvalidParameterError(ModlabError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class SolverError(ModlabError):
    """A steady-state solve failed.

    ``block`` names the equation group that could not be satisfied so the CLI
    can report it; ``residual`` is the last residual vector (if any).
    """

    def __init__(self, message: str, block: str = "", residual=None, iterate=None):
        self.block = block
        self.residual = residual
        self.iterate = iterate
        super().__init__(message)


class NonConvergenceError(SolverError):
    pass


class SingularJacobianError(SolverError):
    pass


class SingularDenominatorError(SolverError):
    pass


class NegativeEnergyError(ModlabError):
    pass


class NonZeroMeanError(ModlabError):
    pass


class BracketError(ModlabError):
    pass


class SimulationAborted(ModlabError):
    def __init__(self, message: str, t: float = float("nan")):
        self.t = t
        super().__init__(message)


class NotSettledError(ModlabError):
    def __init__(self, message: str, drift: dict | None = None):
        self.drift = drift or {}
        super().__init__(message)
