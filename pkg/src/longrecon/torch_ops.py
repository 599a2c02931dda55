"""Torch twins of the k-space algebra, for the learned models.

Same conventions as :mod:`longrecon.kspace`: centered orthonormal FFTs,
complex tensors shaped (..., H, W), coil axis ahead of the spatial axes.
Learned layers carry complex data as 2-channel real pairs; the FFT and
coil algebra stay truly complex.
"""

from __future__ import annotations

import torch

__all__ = [
    "fft2c",
    "ifft2c",
    "rss",
    "expand",
    "reduce",
    "complex_to_channels",
    "channels_to_complex",
    "to_tensor",
]

_DIMS = (-2, -1)


def fft2c(x: torch.Tensor) -> torch.Tensor:
    return torch.fft.fftshift(
        torch.fft.fft2(torch.fft.ifftshift(x, dim=_DIMS), dim=_DIMS, norm="ortho"),
        dim=_DIMS,
    )


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    return torch.fft.fftshift(
        torch.fft.ifft2(torch.fft.ifftshift(k, dim=_DIMS), dim=_DIMS, norm="ortho"),
        dim=_DIMS,
    )


def rss(coil_imgs: torch.Tensor, dim: int = -3) -> torch.Tensor:
    return torch.sqrt(torch.sum(torch.abs(coil_imgs) ** 2, dim=dim))


def expand(img: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """(B, H, W) image x (B, C, H, W) maps -> (B, C, H, W) coil images."""
    return maps * img.unsqueeze(-3)


def reduce(coil_imgs: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) coil images -> (B, H, W) image via conj(maps) sum."""
    return torch.sum(torch.conj(maps) * coil_imgs, dim=-3)


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) complex -> (B, 2C, H, W) real, [re..., im...] layout."""
    return torch.cat([x.real, x.imag], dim=1)


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    c = x.shape[1] // 2
    return torch.complex(x[:, :c], x[:, c:])


def to_tensor(arr, dtype=None, device=None) -> torch.Tensor:
    t = torch.as_tensor(arr, device=device)
    if dtype is not None:
        t = t.to(dtype)
    return t
