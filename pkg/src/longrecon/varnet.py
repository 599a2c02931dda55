"""Unrolled variational reconstruction with learned sensitivity estimation.

The model runs a sensitivity-map estimator once on the autocalibration
region, then T cascades of soft data consistency plus a U-Net refinement
applied in the image domain (reduce -> U-Net -> expand, transformed back to
k-space), and finishes with an RSS magnitude image.

Every refinement U-Net's final convolution is zero-initialized, so the
untrained network is a pure data-consistency reconstructor: with a full
mask it reproduces the fully sampled reference, and on undersampled data it
equals the zero-filled reconstruction. The sensitivity estimator refines
the classical center-crop estimate residually (also zero-initialized), so
untrained maps are the autocalibration estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InvalidInputError
from .masks import SamplingMask, center_disc
from .torch_ops import (
    channels_to_complex,
    complex_to_channels,
    expand,
    fft2c,
    ifft2c,
    reduce,
    rss,
)

__all__ = ["VarNetConfig", "VarNet", "dc_block", "build_varnet"]


@dataclass(frozen=True)
class VarNetConfig:
    n_cascades: int = 6
    unet_channels: int = 16
    unet_depth: int = 3
    sme_channels: int = 8
    sme_depth: int = 2
    dc_weight_init: float = 1.0
    acs_radius: int | None = None  # None: use the mask's center_radius
    seed: int = 0

    def validate(self) -> "VarNetConfig":
        if self.n_cascades < 1:
            raise ConfigurationError("n_cascades must be >= 1")
        if min(self.unet_channels, self.unet_depth, self.sme_channels, self.sme_depth) < 1:
            raise ConfigurationError("channels and depth must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dc_block(k_current: torch.Tensor, k_measured: torch.Tensor, mask: torch.Tensor,
             eta: torch.Tensor | float) -> torch.Tensor:
    """Soft data consistency: ``k - eta * mask * (k - k_measured)``."""
    return k_current - eta * (mask * (k_current - k_measured))


class ConvBlock(nn.Module):
    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Conv2d(in_chans, out_chans, kernel_size=3, padding=1, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.GELU(),
            nn.Conv2d(out_chans, out_chans, kernel_size=3, padding=1, bias=False),
            nn.InstanceNorm2d(out_chans),
            nn.GELU(),
        )

    def forward(self, x):
        return self.layers(x)


class UpBlock(nn.Module):
    def __init__(self, in_chans: int, out_chans: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_chans, out_chans, kernel_size=2, stride=2, bias=False)
        self.conv = ConvBlock(in_chans, out_chans)

    def forward(self, x, skip):
        x = self.up(x)
        return self.conv(torch.cat([x, skip], dim=1))


class Unet(nn.Module):
    """Small U-Net with average pooling and a zero-initialized output conv."""

    def __init__(self, in_chans: int, out_chans: int, chans: int, depth: int):
        super().__init__()
        self.depth = depth
        self.down = nn.ModuleList([ConvBlock(in_chans, chans)])
        ch = chans
        for _ in range(depth - 1):
            self.down.append(ConvBlock(ch, ch * 2))
            ch *= 2
        self.bottleneck = ConvBlock(ch, ch * 2)
        self.up = nn.ModuleList()
        for _ in range(depth):
            self.up.append(UpBlock(ch * 2, ch))
            ch //= 2
        self.out = nn.Conv2d(ch * 2, out_chans, kernel_size=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x):
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = torch.nn.functional.avg_pool2d(x, 2)
        x = self.bottleneck(x)
        for block in self.up:
            x = block(x, skips.pop())
        return self.out(x)


class NormUnet(nn.Module):
    """Per-sample standardization + padding wrapper around the U-Net,
    operating on complex tensors carried as 2-channel real pairs.

    The output is rescaled by the input std only (no mean add-back), so a
    zero-initialized U-Net yields an exactly-zero correction.
    """

    def __init__(self, chans: int, depth: int):
        super().__init__()
        self.depth = depth
        self.unet = Unet(2, 2, chans, depth)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, 1, H, W) complex
        ch = complex_to_channels(x)
        mean = ch.mean(dim=(1, 2, 3), keepdim=True)
        std = ch.std(dim=(1, 2, 3), keepdim=True).clamp_min(1e-12)
        ch = (ch - mean) / std
        mult = 2**self.depth
        h, w = ch.shape[-2:]
        ph = (-h) % mult
        pw = (-w) % mult
        if ph or pw:
            ch = torch.nn.functional.pad(
                ch, (pw // 2, pw - pw // 2, ph // 2, ph - ph // 2)
            )
        ch = self.unet(ch)
        if ph or pw:
            ch = ch[..., ph // 2 : ph // 2 + h, pw // 2 : pw // 2 + w]
        ch = ch * std
        return channels_to_complex(ch)


class SensitivityEstimator(nn.Module):
    """Autocalibration maps refined by a residual U-Net, RSS-normalized."""

    def __init__(self, chans: int, depth: int):
        super().__init__()
        self.refine = NormUnet(chans, depth)

    def forward(self, masked_kspace: torch.Tensor, acs_mask: torch.Tensor) -> torch.Tensor:
        b, c, h, w = masked_kspace.shape
        coil_imgs = ifft2c(masked_kspace * acs_mask)
        flat = coil_imgs.reshape(b * c, 1, h, w)
        refined = flat + self.refine(flat)
        maps = refined.reshape(b, c, h, w)
        norm = rss(maps, dim=1).clamp_min(1e-12).unsqueeze(1)
        return maps / norm


class Cascade(nn.Module):
    def __init__(self, cfg: VarNetConfig):
        super().__init__()
        self.refine = NormUnet(cfg.unet_channels, cfg.unet_depth)
        self.dc_weight = nn.Parameter(torch.tensor(float(cfg.dc_weight_init)))

    def forward(self, k, k_measured, mask, maps):
        dc = dc_block(k, k_measured, mask, self.dc_weight)
        img = reduce(ifft2c(k), maps)
        correction = fft2c(expand(self.refine(img.unsqueeze(1)).squeeze(1), maps))
        return dc - correction


class VarNet(nn.Module):
    def __init__(self, cfg: VarNetConfig):
        super().__init__()
        self.cfg = cfg.validate()
        torch.manual_seed(cfg.seed)
        self.sme = SensitivityEstimator(cfg.sme_channels, cfg.sme_depth)
        self.cascades = nn.ModuleList(Cascade(cfg) for _ in range(cfg.n_cascades))

    def _acs_mask(self, mask: SamplingMask, like: torch.Tensor) -> torch.Tensor:
        radius = self.cfg.acs_radius if self.cfg.acs_radius is not None else mask.center_radius
        if radius <= 0:
            raise ConfigurationError(
                "sensitivity estimation needs a fully sampled center (center_radius > 0)"
            )
        disc = center_disc(mask.dims, radius)
        return torch.as_tensor(disc, device=like.device).to(like.real.dtype)

    def estimate_sensitivities(self, masked_kspace: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
        return self.sme(masked_kspace, self._acs_mask(mask, masked_kspace))

    def forward(self, masked_kspace: torch.Tensor, mask: SamplingMask) -> torch.Tensor:
        """(B, C, H, W) complex undersampled k-space -> (B, H, W) real image."""
        if masked_kspace.ndim != 4:
            raise InvalidInputError(
                f"expected (B, C, H, W) k-space, got {tuple(masked_kspace.shape)}"
            )
        if tuple(masked_kspace.shape[-2:]) != mask.dims:
            raise InvalidInputError(
                f"k-space dims {tuple(masked_kspace.shape[-2:])} != mask dims {mask.dims}"
            )
        m = torch.as_tensor(mask.mask, device=masked_kspace.device).to(masked_kspace.real.dtype)
        maps = self.sme(masked_kspace, self._acs_mask(mask, masked_kspace))
        k = masked_kspace
        for cascade in self.cascades:
            k = cascade(k, masked_kspace, m, maps)
        return rss(ifft2c(k), dim=1)


def build_varnet(cfg: VarNetConfig) -> VarNet:
    return VarNet(cfg)


def zero_filled(masked_kspace: np.ndarray) -> np.ndarray:
    """Classical lower baseline: RSS of the inverse FFT of masked k-space."""
    from . import kspace as ksp

    return ksp.rss_combine(ksp.inverse_transform(masked_kspace))
