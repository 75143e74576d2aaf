"""Temporal shuffle-reconstruction pretraining for sound event detection, on numpy."""

from .errors import JitterError
from .model import ModelConfig, SEDModel
from .perturb import ShuffleSpec

__version__ = "0.1.0"

__all__ = ["JitterError", "ModelConfig", "SEDModel", "ShuffleSpec", "__version__"]
