"""Differentiable SSIM training loss.

Same recipe as :func:`longrecon.metrics.ssim` (7x7 uniform window, unbiased
local covariances, fully contained windows only) so the torch loss and the
numpy metric agree to float precision. The loss normalizes both images by
their absolute maxima and uses a unit data range.
"""

from __future__ import annotations

import torch

from .errors import DegenerateInputError, InvalidInputError
from .metrics import SSIM_K1, SSIM_K2, SSIM_WIN_SIZE

__all__ = ["ssim_torch", "ssim_loss", "normalize_torch"]


def _window_means(x: torch.Tensor, win: int) -> torch.Tensor:
    kernel = torch.full((1, 1, win, win), 1.0 / (win * win), dtype=x.dtype, device=x.device)
    return torch.nn.functional.conv2d(x.unsqueeze(1), kernel).squeeze(1)


def ssim_torch(a: torch.Tensor, b: torch.Tensor, data_range: float,
               win_size: int = SSIM_WIN_SIZE) -> torch.Tensor:
    """Mean local SSIM of batched (B, H, W) images; returns a (B,) tensor."""
    if a.shape != b.shape or a.ndim != 3:
        raise InvalidInputError(
            f"expected matching (B, H, W) images, got {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    if min(a.shape[-2:]) < win_size:
        raise InvalidInputError(f"images must be at least {win_size}x{win_size}")
    np_win = win_size * win_size
    cov_norm = np_win / (np_win - 1)
    ux = _window_means(a, win_size)
    uy = _window_means(b, win_size)
    uxx = _window_means(a * a, win_size)
    uyy = _window_means(b * b, win_size)
    uxy = _window_means(a * b, win_size)
    vx = cov_norm * (uxx - ux * ux)
    vy = cov_norm * (uyy - uy * uy)
    vxy = cov_norm * (uxy - ux * uy)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return s.mean(dim=(-2, -1))


def normalize_torch(img: torch.Tensor) -> torch.Tensor:
    """Per-sample division by the absolute maximum."""
    peak = img.abs().amax(dim=(-2, -1), keepdim=True)
    if (peak == 0).any():
        raise DegenerateInputError("cannot normalize an all-zero image")
    return img / peak


def ssim_loss(y: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """``1 - SSIM`` between max-normalized images; scalar mean over the batch."""
    if y.ndim == 2:
        y = y.unsqueeze(0)
    if reference.ndim == 2:
        reference = reference.unsqueeze(0)
    return (1.0 - ssim_torch(normalize_torch(y), normalize_torch(reference), 1.0)).mean()
