"""Occlusion recovery with a spatial-LSTM encoder and a dual-channel LSTM decoder.

The package is pure numpy: ``tensor`` provides a small tape-based autodiff,
on top of which sit the recurrent cells, the encoder/decoder, the losses,
stand-in identity networks, a synthetic occluded-face generator, staged
training and verification-style evaluation.
"""

from .errors import (ConfigError, ContractError, DimensionError, DivergenceError, DomainError,
                     NonFiniteError, RlaError)
from .model import RlaConfig, RlaModel

__all__ = [
    "RlaConfig", "RlaModel", "RlaError", "DimensionError", "DomainError", "NonFiniteError",
    "ContractError", "ConfigError", "DivergenceError",
]
__version__ = "0.1.0"
