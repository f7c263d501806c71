"""Exception types shared across the package."""


class FreepathError(Exception):
    """Base class for all package errors."""


class ConfigError(FreepathError):
    """Invalid configuration or schema violation."""


class ModelError(FreepathError):
    """Physical-model violation (domain, energy surface, assumptions)."""


class IntegrationError(FreepathError):
    """Numerical integration failure (step underflow, stiffness)."""

    def __init__(self, message, last_state=None, last_time=None):
        super().__init__(message)
        self.last_state = last_state
        self.last_time = last_time


class SingularInfallError(IntegrationError):
    """Radial infall into a singular origin: the momentum-continuous
    extension does not exist, so the flight is aborted."""


class SlowRegionError(FreepathError):
    """Hazard target not reached within the time budget (particle loitering
    where the reflection rate is tiny)."""

    def __init__(self, message, elapsed=None, hazard=None):
        super().__init__(message)
        self.elapsed = elapsed
        self.hazard = hazard
