"""Training-free diffusion style transfer via inversion-anchored feature
injection, split between an early content phase and a late style phase."""

from .codec import ImageAsset, LatentCodec, decode, encode, load_png, save_png
from .conditioning import ConditioningBundle, build_bundle
from .ddim import (Latent, LatentTrajectory, add_noise, cfg_combine, ddim_invert_step,
                   ddim_step, invert_trajectory)
from .injection import (FeatureBank, InjectionConfig, capture_bank, content_directive,
                        deciding_point, select_injection, style_directive)
from .pipeline import (Engine, TransferJob, TransferResult, run_edit, run_style_transfer,
                       run_translation, sweep_alpha)
from .schedule import NoiseSchedule, make_schedule
from .unet import InjectionDirective, LayerDescriptor, LayerInternals, ToyUNet, ToyUNetConfig

__all__ = [
    "ImageAsset", "LatentCodec", "decode", "encode", "load_png", "save_png",
    "ConditioningBundle", "build_bundle",
    "Latent", "LatentTrajectory", "add_noise", "cfg_combine", "ddim_invert_step",
    "ddim_step", "invert_trajectory",
    "FeatureBank", "InjectionConfig", "capture_bank", "content_directive",
    "deciding_point", "select_injection", "style_directive",
    "Engine", "TransferJob", "TransferResult", "run_edit", "run_style_transfer",
    "run_translation", "sweep_alpha",
    "NoiseSchedule", "make_schedule",
    "InjectionDirective", "LayerDescriptor", "LayerInternals", "ToyUNet", "ToyUNetConfig",
]

__version__ = "0.1.0"
