"""Multimodal unpaired RGB-to-thermal translation with per-component styles."""

from .losses import LossWeights
from .networks import ModelConfig, StyleCodes, TranslationModel, sample_style_codes
from .ops import (
    CoadainParams,
    MaskedMoments,
    ParamHead,
    StyleCode,
    coadain,
    downsample_mask,
    masked_moments,
    style_to_params,
)
from .trainer import TrainConfig, fit, load_checkpoint, load_model, save_checkpoint

__all__ = [
    "CoadainParams",
    "LossWeights",
    "MaskedMoments",
    "ModelConfig",
    "ParamHead",
    "StyleCode",
    "StyleCodes",
    "TrainConfig",
    "TranslationModel",
    "coadain",
    "downsample_mask",
    "fit",
    "load_checkpoint",
    "load_model",
    "masked_moments",
    "sample_style_codes",
    "save_checkpoint",
    "style_to_params",
]

__version__ = "0.1.0"
