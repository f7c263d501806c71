"""Shared numerical substrate: quadrature, root finding, RK stepping with
dense output, counter-based RNG streams, and the Kolmogorov distribution."""

from .quadrature import QuadratureResult, integrate_adaptive, integrate_simpson, integrate_tanh_sinh
from .roots import bracket_root
from .rng import RngStream
from .ksdist import kolmogorov_cdf, kolmogorov_sf
from .rk import AdaptiveBatch, DenseInterpolant, rk_step_dense

__all__ = [
    "QuadratureResult",
    "integrate_adaptive",
    "integrate_simpson",
    "integrate_tanh_sinh",
    "bracket_root",
    "RngStream",
    "kolmogorov_cdf",
    "kolmogorov_sf",
    "AdaptiveBatch",
    "DenseInterpolant",
    "rk_step_dense",
]
