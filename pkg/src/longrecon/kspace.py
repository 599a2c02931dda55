"""Complex multi-coil k-space algebra.

Conventions used throughout the package:

* k-space tensors are complex ndarrays of shape ``(n_coils, n_y, n_z)``;
  coil images share that shape, single images are ``(n_y, n_z)``.
* Fourier transforms are centered (DC at ``(n_y // 2, n_z // 2)``) and
  orthonormal, so ``fft2c``/``ifft2c`` are unitary and Parseval holds
  exactly up to float rounding.
* Coil sensitivity maps are complex ``(n_coils, n_y, n_z)`` with pixelwise
  root-sum-of-squares equal to 1, except "zero-support" pixels (air) where
  every coil is exactly 0.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "fft2c",
    "ifft2c",
    "forward_transform",
    "inverse_transform",
    "rss_combine",
    "expand",
    "reduce",
    "undersample",
    "validate_kspace",
    "validate_sens_maps",
]

_SPATIAL_AXES = (-2, -1)


def validate_kspace(k: np.ndarray, name: str = "kspace") -> np.ndarray:
    """Check a (n_coils, n_y, n_z) complex array for shape and finiteness."""
    k = np.asarray(k)
    if k.ndim != 3:
        raise InvalidInputError(
            f"{name} must have shape (n_coils, n_y, n_z), got {k.shape}"
        )
    if k.shape[0] < 1:
        raise InvalidInputError(f"{name} needs at least one coil, got {k.shape}")
    if not np.all(np.isfinite(k)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    return k


def validate_sens_maps(maps: np.ndarray, *, rtol: float = 1e-5) -> np.ndarray:
    """Check sensitivity maps: pixelwise RSS == 1 or exact zero support."""
    maps = validate_kspace(maps, name="sens_maps")
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    ok = np.abs(rss - 1.0) <= rtol
    zero_support = rss == 0.0
    if not np.all(ok | zero_support):
        worst = float(np.max(np.abs(rss[~zero_support] - 1.0)))
        raise InvalidInputError(
            f"sens_maps not RSS-normalized: worst |RSS-1| = {worst:.3e}"
        )
    return maps


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D FFT over the last two axes."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=_SPATIAL_AXES), axes=_SPATIAL_AXES, norm="ortho"),
        axes=_SPATIAL_AXES,
    )


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D inverse FFT over the last two axes."""
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=_SPATIAL_AXES), axes=_SPATIAL_AXES, norm="ortho"),
        axes=_SPATIAL_AXES,
    )


def inverse_transform(k: np.ndarray) -> np.ndarray:
    """k-space -> per-coil complex images (the reconstruction direction)."""
    return ifft2c(validate_kspace(k))


def forward_transform(imgs: np.ndarray) -> np.ndarray:
    """Per-coil complex images -> k-space (simulated acquisition direction)."""
    return fft2c(validate_kspace(imgs, name="coil images"))


def rss_combine(imgs: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares coil combination, returns a real (n_y, n_z) image."""
    imgs = validate_kspace(imgs, name="coil images")
    return np.sqrt(np.sum(np.abs(imgs) ** 2, axis=0))


def expand(img: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Single image -> coil images: coil i is ``maps[i] * img``."""
    img = np.asarray(img)
    maps = np.asarray(maps)
    if img.ndim != 2 or maps.ndim != 3 or maps.shape[1:] != img.shape:
        raise InvalidInputError(
            f"expand: image {img.shape} and maps {maps.shape} do not agree"
        )
    return maps * img[None]


def reduce(imgs: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Coil images -> single image: sum over coils of ``conj(maps[i]) * imgs[i]``.

    Adjoint of :func:`expand`; for RSS-normalized maps ``reduce(expand(x))``
    is the identity (zero-support pixels annihilate).
    """
    imgs = np.asarray(imgs)
    maps = np.asarray(maps)
    if imgs.shape != maps.shape or imgs.ndim != 3:
        raise InvalidInputError(
            f"reduce: coil images {imgs.shape} and maps {maps.shape} do not agree"
        )
    return np.sum(np.conj(maps) * imgs, axis=0)


def undersample(k: np.ndarray, mask) -> np.ndarray:
    """Zero out non-acquired k-space locations: ``out[c] = mask * k[c]``.

    ``mask`` may be a :class:`~longrecon.masks.SamplingMask` or a bare
    (n_y, n_z) binary array; it is broadcast over the coil axis.
    """
    k = validate_kspace(k)
    m = np.asarray(getattr(mask, "mask", mask))
    if m.shape != k.shape[1:]:
        raise InvalidInputError(
            f"undersample: mask {m.shape} does not match k-space dims {k.shape[1:]}"
        )
    out = k * m[None].astype(k.dtype)
    # exact zeros at masked-out positions regardless of 0*inf style surprises
    out[:, m == 0] = 0
    return out
