"""Sinusoidal, rotary (RoPE) and relative-time rotary (ReDRE) position encodings
in a small causal transformer for transaction-sequence fraud scoring."""

from ._kernels import BACKEND
from .encoder import EncoderConfig, encode, init_params
from .rotary import PositionMode, frequency_schedule, redre_angles, rope_angles, rotate_pairs
from .training import TrainConfig, compare_models, train

__all__ = [
    "BACKEND",
    "EncoderConfig",
    "PositionMode",
    "TrainConfig",
    "compare_models",
    "encode",
    "frequency_schedule",
    "init_params",
    "redre_angles",
    "rope_angles",
    "rotate_pairs",
    "train",
]
