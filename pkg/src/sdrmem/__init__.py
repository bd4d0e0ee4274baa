"""Sparse distributed coding fields (macs), leveled models built from them,
and the preprocessing, readout and experiment tooling around them."""

from .core import Code, CSAParams, InputVector, Mac, MacConfig, OpCounter
from .hierarchy import LevelConfig, Model, ModelConfig, build_model, recognition_match

__all__ = [
    "Code",
    "CSAParams",
    "InputVector",
    "Mac",
    "MacConfig",
    "OpCounter",
    "LevelConfig",
    "Model",
    "ModelConfig",
    "build_model",
    "recognition_match",
]
__version__ = "0.1.0"
