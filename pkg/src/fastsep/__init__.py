"""Multichannel blind source separation with full-rank and jointly
diagonalizable spatial covariance models."""

__version__ = "0.1.0"

from .errors import (
    DegenerateModelError,
    FastsepError,
    InvalidInputError,
    NumericalBreakdownError,
    SingularMatrixError,
)
from .separate import (
    METHODS,
    SeparationResult,
    SeparatorConfig,
    run,
    wiener_fast,
    wiener_fullrank,
)
from .spatial import DiagSpatial, FullRankSpatial
from .sources import MetropolisConfig, ToyDecoder
from .stft import istft, stft

__all__ = [
    "DegenerateModelError",
    "DiagSpatial",
    "FastsepError",
    "FullRankSpatial",
    "InvalidInputError",
    "METHODS",
    "MetropolisConfig",
    "NumericalBreakdownError",
    "SeparationResult",
    "SeparatorConfig",
    "SingularMatrixError",
    "ToyDecoder",
    "istft",
    "run",
    "stft",
    "wiener_fast",
    "wiener_fullrank",
]
