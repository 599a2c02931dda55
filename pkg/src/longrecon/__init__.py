"""Prior-informed accelerated MRI reconstruction.

Retrospective k-space undersampling with variable-density Poisson-disc
masks, an unrolled variational initial reconstruction, multi-resolution
affine registration of a prior subject-specific scan, and a
transformer-based enhancement network conditioned on the registered prior,
plus a synthetic longitudinal phantom data source and a full training and
evaluation harness.
"""

__version__ = "0.1.0"

from . import kspace
from .data import SliceSample, augment, exclude_peripheral, normalize, simulate_acquisition, split_subjects
from .enhancer import Enhancer, EnhancerConfig
from .kspace import expand, forward_transform, inverse_transform, reduce, rss_combine, undersample
from .masks import SamplingMask, generate_poisson_mask
from .metrics import nrmse, psnr, ssim, wilcoxon_signed_rank
from .phantom import LongitudinalCase, PhantomConfig, generate_phantom_pair, synthesize_coil_maps
from .registration import AffineOptions, RegistrationResult, RegistrationTransform, ncc, register, warp
from .training import TrainConfig, checkpoint_load, checkpoint_save, train
from .varnet import VarNet, VarNetConfig, zero_filled

__all__ = [
    "kspace",
    "SliceSample",
    "augment",
    "exclude_peripheral",
    "normalize",
    "simulate_acquisition",
    "split_subjects",
    "Enhancer",
    "EnhancerConfig",
    "expand",
    "forward_transform",
    "inverse_transform",
    "reduce",
    "rss_combine",
    "undersample",
    "SamplingMask",
    "generate_poisson_mask",
    "nrmse",
    "psnr",
    "ssim",
    "wilcoxon_signed_rank",
    "LongitudinalCase",
    "PhantomConfig",
    "generate_phantom_pair",
    "synthesize_coil_maps",
    "AffineOptions",
    "RegistrationResult",
    "RegistrationTransform",
    "ncc",
    "register",
    "warp",
    "TrainConfig",
    "checkpoint_load",
    "checkpoint_save",
    "train",
    "VarNet",
    "VarNetConfig",
    "zero_filled",
]
