"""Decoder-only transformer pre-training lab with configurable feedforward sublayers."""

from ffnlab.model import FfnVariant, ModelConfig, init_model, model_forward
from ffnlab.budget import param_count, enumerate_count, match_width, match_depth

__all__ = [
    "FfnVariant",
    "ModelConfig",
    "init_model",
    "model_forward",
    "param_count",
    "enumerate_count",
    "match_width",
    "match_depth",
]

__version__ = "0.1.0"
