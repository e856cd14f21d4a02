"""Green functions of the fractional Laplacian with gradient perturbations.

Closed-form ball kernels, singular quadrature, the perturbation series for
drifted Green functions on small balls, and Monte Carlo oracles.
"""

from .drift import DriftField, is_kato, kato_modulus
from .errors import (
    ConfigError,
    DomainError,
    FracGreenError,
    NonContractiveError,
    ParameterError,
    QuadratureError,
    SingularityError,
)
from .estimators import GreenKernelTransformer, GreenPairEstimator
from .geometry import Annulus, Ball, DisjointBallUnion, c11_check
from .kernels import StableParams, ball_green, ball_poisson, stable_density
from .perturb import SeriesConfig, contractive_ball, tilde_green

__version__ = "0.1.0"

__all__ = [
    "Annulus",
    "Ball",
    "ConfigError",
    "DisjointBallUnion",
    "DomainError",
    "DriftField",
    "FracGreenError",
    "GreenKernelTransformer",
    "GreenPairEstimator",
    "NonContractiveError",
    "ParameterError",
    "QuadratureError",
    "SeriesConfig",
    "SingularityError",
    "StableParams",
    "ball_green",
    "ball_poisson",
    "c11_check",
    "contractive_ball",
    "is_kato",
    "kato_modulus",
    "stable_density",
    "tilde_green",
]
