"""Hybrid image priors: a pretrained generator mixed with an untrained Deep Decoder.

The image model is ``alpha * G(z) + beta * DD(theta)``, fit to linear
measurements ``y = A x + noise`` by Adam, alongside decoder-only,
generator-only and weight-adapting generator baselines.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor
from .config import ExperimentConfig, load_config
from .datasets import ImageDistribution, load_png, sample_images, save_png
from .deep_decoder import DeepDecoderConfig, dd_choose_k, dd_forward, dd_init
from .errors import ConfigError, InversionError, WeightFileError
from .generator import GeneratorConfig, LatentSpec, generator_forward, load_weights, save_weights, train_glo
from .hybrid import hybrid_forward, hybrid_init, hybrid_param_count, mixture_report
from .inversion import (InversionConfig, invert_dd, invert_gan_as_dip, invert_generator, invert_hybrid,
                        invert_single)
from .measurement import add_noise, gaussian_operator, superres_operator, synthesize_task
from .metrics import RunRecord, aggregate, psnr

__all__ = [
    "Tape", "Tensor", "ExperimentConfig", "load_config", "ImageDistribution", "load_png", "sample_images",
    "save_png", "DeepDecoderConfig", "dd_choose_k", "dd_forward", "dd_init", "ConfigError", "InversionError",
    "WeightFileError", "GeneratorConfig", "LatentSpec", "generator_forward", "load_weights", "save_weights",
    "train_glo", "hybrid_forward", "hybrid_init", "hybrid_param_count", "mixture_report", "InversionConfig",
    "invert_dd", "invert_gan_as_dip", "invert_generator", "invert_hybrid", "invert_single", "add_noise",
    "gaussian_operator", "superres_operator", "synthesize_task", "RunRecord", "aggregate", "psnr",
]
