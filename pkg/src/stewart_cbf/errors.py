"""Exception types shared across the package."""


class StewartCbfError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(StewartCbfError):
    """A configuration value violates its contract."""


class SingularPoseError(StewartCbfError):
    """The kinematic Jacobian is (near-)singular at the requested pose."""

    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class DegenerateSensitivityError(StewartCbfError):
    """A constraint must be tightened but its force sensitivity is ~zero."""


class GramSingularError(StewartCbfError):
    """Both constraints are active but their Gram matrix is singular."""

    def __init__(self, message, diagnosis=None):
        super().__init__(message)
        self.diagnosis = diagnosis


class QpInfeasibleError(StewartCbfError):
    """No force satisfies every constraint row; carries a conflicting subset."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []


class QpCycleError(StewartCbfError):
    """The active-set iteration exceeded its cycling guard."""


class SimulationDiverged(StewartCbfError):
    """State became non-finite during integration."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
