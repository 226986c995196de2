"""Object-centric latent diffusion on procedural sprite scenes."""

from .autoencoder import AEConfig, build_codec
from .concepts import ConceptLibrary
from .config import ConfigError, RunConfig
from .data import SceneDataset, SceneSpec, generate_scene, write_dataset
from .denoiser import DenoiserConfig, DenoiserUNet
from .encoder import EncoderConfig, ObjectEncoder
from .metrics import fg_ari, frechet_feature_distance, mbo, miou
from .sampler import ddim_sample, ddpm_sample
from .schedule import (NoiseSchedule, constant_schedule, forward_noise,
                       linear_schedule)
from .training import TrainConfig, Trainer, load_model

__version__ = "0.1.0"

__all__ = [
    "AEConfig", "ConceptLibrary", "ConfigError", "DenoiserConfig",
    "DenoiserUNet", "EncoderConfig", "NoiseSchedule", "ObjectEncoder",
    "RunConfig", "SceneDataset", "SceneSpec", "TrainConfig", "Trainer",
    "build_codec", "constant_schedule", "ddim_sample", "ddpm_sample",
    "fg_ari", "forward_noise", "frechet_feature_distance", "generate_scene",
    "linear_schedule", "load_model", "mbo", "miou", "write_dataset",
]
