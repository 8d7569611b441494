"""Exception hierarchy shared by all solver modules."""


class CrystalTDLError(Exception):
    """Base class for every error raised by this package."""


class ResolutionError(CrystalTDLError, ValueError):
    pass


class NeutralityError(CrystalTDLError, ValueError):
    pass


class SupportError(CrystalTDLError, ValueError):
    pass


class ShapeError(CrystalTDLError, ValueError):
    pass


class DomainError(CrystalTDLError, ValueError):
    pass


class PreconditionError(CrystalTDLError, ValueError):
    pass


class DeformationError(PreconditionError):
    pass


class MarginError(PreconditionError):
    pass


class BasisError(CrystalTDLError, ValueError):
    pass


class StepError(CrystalTDLError, ValueError):
    pass


class BudgetError(CrystalTDLError, ValueError):
    pass


class ConfigError(CrystalTDLError, ValueError):
    pass


class ConvergenceError(CrystalTDLError, RuntimeError):
    """Iteration stopped before reaching its tolerance.

    ``history`` holds the residual (or delta) sequence that was observed.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class GapError(CrystalTDLError, RuntimeError):
    """Occupied and unoccupied spectra are not separated by the required gap."""

    def __init__(self, message, homo=None, lumo=None):
        super().__init__(message)
        self.homo = homo
        self.lumo = lumo


class MetallicError(GapError):
    pass
