"""Two-sample tests for validating generative models against a reference."""

from .calibration import NullDistribution, build_null, p_value, threshold
from .deformations import DeformationSpec, apply, draw
from .generators import CorrelatedGaussian, EmpiricalPool, MixtureOfGaussians, preset, sample
from .power import BisectionConfig, bisect_epsilon, bisect_epsilon_llr, estimate_at
from .rng import RngStream
from .statistics import StatisticSpec, evaluate

__version__ = "0.1.0"

__all__ = [
    "BisectionConfig",
    "CorrelatedGaussian",
    "DeformationSpec",
    "EmpiricalPool",
    "MixtureOfGaussians",
    "NullDistribution",
    "RngStream",
    "StatisticSpec",
    "apply",
    "bisect_epsilon",
    "bisect_epsilon_llr",
    "build_null",
    "draw",
    "estimate_at",
    "evaluate",
    "p_value",
    "preset",
    "sample",
    "threshold",
]
