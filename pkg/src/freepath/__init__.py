"""freepath: simulation and verification of the free path of a high-velocity
random flight process in a radial external field.

The package simulates the reflection chain (positions, scaled times,
directions) of a particle flying along classical trajectories between
isotropic direction changes, with free-flight durations sampled exactly by
hazard inversion; estimates the scaled drift/covariance of that chain
against their closed-form limits; simulates the limiting diffusion with its
additive clock and natural-time change; and classifies the accessibility of
the radial domain's endpoints via scale/speed measures.
"""

from .errors import (ConfigError, FreepathError, IntegrationError, ModelError,
                     SingularInfallError, SlowRegionError)
from .model import (DensitySpec, Domain, EndpointKind, ModelConfig,
                    NumericsOptions, PotentialSpec, domain_from_potential,
                    hazard_rate, scaled_speed, speed, validate_assumptions)
from .scenarios import scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FreepathError", "IntegrationError", "ModelError",
    "SingularInfallError", "SlowRegionError",
    "DensitySpec", "Domain", "EndpointKind", "ModelConfig", "NumericsOptions",
    "PotentialSpec", "domain_from_potential", "hazard_rate", "scaled_speed",
    "speed", "validate_assumptions", "scenario", "__version__",
]
