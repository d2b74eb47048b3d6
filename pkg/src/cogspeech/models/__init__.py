"""Classifiers and the contrastive speech encoder."""

from .acnn import ACNNClassifier, conv_output_length
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    restore,
    save_checkpoint,
    snapshot,
)
from .common import Linear
from .encoder import (
    LATENT_STRIDE,
    ContrastiveSpeechEncoder,
    LocalEncoder,
    Quantizer,
    TransformerLayer,
    mask_time_steps,
    sinusoidal_positions,
)
from .gru import BiGRUClassifier, BiGRULayer, GRUCell
from .partition import ParameterPartition

__all__ = [
    "ACNNClassifier",
    "BiGRUClassifier",
    "BiGRULayer",
    "CheckpointError",
    "ContrastiveSpeechEncoder",
    "GRUCell",
    "LATENT_STRIDE",
    "Linear",
    "LocalEncoder",
    "ParameterPartition",
    "Quantizer",
    "TransformerLayer",
    "conv_output_length",
    "load_checkpoint",
    "mask_time_steps",
    "restore",
    "save_checkpoint",
    "sinusoidal_positions",
    "snapshot",
]
