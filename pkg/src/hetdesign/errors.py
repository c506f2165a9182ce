"""Exception hierarchy shared by all hetdesign modules."""


class DesignError(Exception):
    """Base class for every error raised by hetdesign."""


class InvalidMatrix(DesignError, ValueError):
    pass


class DimensionError(DesignError, ValueError):
    pass


class IllDefinedSchur(DesignError, ValueError):
    pass


class SingularTopBlock(DesignError, ValueError):
    pass


class NotContrasts(DesignError, ValueError):
    pass


class ZeroRowQ1(DesignError, ValueError):
    pass


class EmptyLevels(DesignError, ValueError):
    pass


class InfeasibleDesign(DesignError):
    """The target system is not estimable under the design."""


class InfeasibleMarginal(DesignError):
    pass


class InfeasibleInterest(DesignError):
    """No design on the covariate space makes the covariate functions estimable."""


class NotConverged(DesignError):
    """Iteration budget exhausted; ``best`` carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class OracleTooLarge(DesignError, ValueError):
    pass


class LPInfeasible(DesignError):
    pass


class VerificationFailed(DesignError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TooFewTrials(DesignError, ValueError):
    pass


class BadStrata(DesignError, ValueError):
    pass


class ConfigError(DesignError, ValueError):
    pass
