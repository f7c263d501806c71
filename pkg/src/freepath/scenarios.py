"""Built-in scenario library.

Every scenario yields a validated ModelConfig; the density can be swapped
for the affine family g(r) = 1 + beta r, and the dimension, mass, energy,
and scaling index are all overridable.
"""

from __future__ import annotations

import math
from typing import Optional

from .errors import ConfigError
from .model import (DensitySpec, Domain, EndpointKind, ModelConfig,
                    PotentialSpec, domain_from_potential)

SCENARIO_NAMES = ("free", "heuristic-1.2", "constant-force", "newtonian", "harmonic")


def _density(beta: float, expression: Optional[str]) -> DensitySpec:
    if expression is not None:
        return DensitySpec.from_expression(expression)
    if beta == 0.0:
        return DensitySpec.constant(1.0)
    return DensitySpec.affine(1.0, beta)


def scenario(name: str, *, mass: Optional[float] = None, energy: Optional[float] = None,
             dimension: int = 3, scaling_n: float = 1.0, beta: float = 0.0,
             force: float = 1.0, gravity_k: float = 1.0, harmonic_a: float = 1.0,
             potential_expression: Optional[str] = None,
             density_expression: Optional[str] = None) -> ModelConfig:
    """Build a named scenario (or a custom one via expression strings)."""
    density = _density(beta, density_expression)
    if name == "free":
        mass = 2.0 if mass is None else mass
        energy = 1.0 if energy is None else energy
        potential = PotentialSpec.free()
        domain = Domain(0.0, math.inf, EndpointKind.ORIGIN, EndpointKind.INFINITY)
    elif name == "heuristic-1.2":
        # m = 2, U(r) = r, g = 1, E = 1: uniform acceleration toward the
        # origin with unit initial speed; the canonical test configuration
        mass = 2.0 if mass is None else mass
        energy = 1.0 if energy is None else energy
        potential = PotentialSpec.constant_force(1.0)
        domain = domain_from_potential(potential, energy, mass)
    elif name == "constant-force":
        mass = 2.0 if mass is None else mass
        energy = 1.0 if energy is None else energy
        potential = PotentialSpec.constant_force(force)
        domain = domain_from_potential(potential, energy, mass)
    elif name == "newtonian":
        mass = 2.0 if mass is None else mass
        energy = 1.0 if energy is None else energy
        if energy <= 0:
            raise ConfigError("newtonian scenario needs E > 0")
        potential = PotentialSpec.newtonian(gravity_k)
        domain = Domain(0.0, math.inf, EndpointKind.ORIGIN, EndpointKind.INFINITY)
    elif name == "harmonic":
        mass = 2.0 if mass is None else mass
        energy = 4.0 if energy is None else energy
        potential = PotentialSpec.harmonic(harmonic_a)
        domain = domain_from_potential(potential, energy, mass)
    elif name == "custom":
        if potential_expression is None:
            raise ConfigError("custom scenario needs a potential expression")
        if mass is None or energy is None:
            raise ConfigError("custom scenario needs mass and energy")
        potential = PotentialSpec.from_expression(potential_expression)
        domain = domain_from_potential(potential, energy, mass)
    else:
        raise ConfigError("unknown scenario %r (known: %s, custom)" %
                          (name, ", ".join(SCENARIO_NAMES)))
    return ModelConfig(potential, density, mass, energy, domain,
                       dimension=dimension, scaling_n=scaling_n)
