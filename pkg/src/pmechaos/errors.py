"""Exception hierarchy shared by all modules."""


class PmeChaosError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PmeChaosError, ValueError):
    """Invalid parameters: scaling exponent, box size, time step, ..."""


class ResolutionError(ConfigurationError):
    """A kernel is not resolved by the grid it is evaluated on."""


class UnsupportedFamilyError(PmeChaosError, NotImplementedError):
    pass


class SingularityError(PmeChaosError, ValueError):
    pass


class AssumptionViolation(PmeChaosError):
    """A numerical check of the kernel assumptions failed."""


class BlowUpError(PmeChaosError, FloatingPointError):
    """Non-finite particle positions or a density exceeding its ceiling."""

    def __init__(self, message, step=None, system=None):
        super().__init__(message)
        self.step = step
        self.system = system


class SchemeError(PmeChaosError, ArithmeticError):
    """The PDE scheme produced an undershoot or lost too much mass to clipping."""


class StalenessError(PmeChaosError, ValueError):
    """Density snapshot and particle ensemble are at different times."""


class ShapeError(PmeChaosError, ValueError):
    pass


class NormalizationError(PmeChaosError, ValueError):
    pass


class DomainError(PmeChaosError, ValueError):
    pass


class InequalityViolation(PmeChaosError, AssertionError):
    pass


class ResourceError(PmeChaosError, MemoryError):
    pass


class IntegrityError(PmeChaosError):
    """Missing or corrupted study artifacts."""
