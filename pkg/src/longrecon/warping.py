"""Backward image warping shared by registration, augmentation, and phantoms.

Transforms are 3x3 homogeneous affines in pixel units acting about the
image center: an output pixel x samples the input at
``L @ (x - c) + c + t`` (plus an optional per-pixel displacement). Warping
is bilinear with zero fill outside the field of view.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import InvalidInputError

__all__ = ["build_affine", "warp_image", "compose_affines", "invert_affine"]


def build_affine(
    rotation_deg: float = 0.0,
    scale=1.0,
    translation=(0.0, 0.0),
    shear: float = 0.0,
) -> np.ndarray:
    """Homogeneous 2D affine (rotation, isotropic or per-axis scale, shear,
    translation) in row/column pixel coordinates."""
    theta = np.deg2rad(rotation_deg)
    sy, sz = (scale, scale) if np.isscalar(scale) else scale
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    lin = rot @ np.array([[sy, shear], [0.0, sz]])
    out = np.eye(3)
    out[:2, :2] = lin
    out[:2, 2] = translation
    return out


def compose_affines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transform equivalent to applying ``b`` then ``a`` to sample coords."""
    return np.asarray(a) @ np.asarray(b)


def invert_affine(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if abs(np.linalg.det(a[:2, :2])) <= 1e-8:
        raise InvalidInputError("affine transform is singular")
    return np.linalg.inv(a)


def _is_identity(affine: np.ndarray) -> bool:
    return np.array_equal(affine, np.eye(3))


def sample_coordinates(shape, affine: np.ndarray, displacement: np.ndarray | None = None):
    """Per-pixel sample coordinates (2, n_y, n_z) for a backward warp."""
    ny, nz = shape
    cy, cz = (ny - 1) / 2.0, (nz - 1) / 2.0
    yy, zz = np.meshgrid(np.arange(ny, dtype=np.float64), np.arange(nz, dtype=np.float64), indexing="ij")
    lin = affine[:2, :2]
    t = affine[:2, 2]
    sy = lin[0, 0] * (yy - cy) + lin[0, 1] * (zz - cz) + cy + t[0]
    sz = lin[1, 0] * (yy - cy) + lin[1, 1] * (zz - cz) + cz + t[1]
    if displacement is not None:
        if displacement.shape != (ny, nz, 2):
            raise InvalidInputError(
                f"displacement field shape {displacement.shape} != {(ny, nz, 2)}"
            )
        sy = sy + displacement[..., 0]
        sz = sz + displacement[..., 1]
    return np.stack([sy, sz])


def warp_image(
    img: np.ndarray,
    affine: np.ndarray | None = None,
    displacement: np.ndarray | None = None,
) -> np.ndarray:
    """Backward-warp ``img``; exact copy for the identity transform."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidInputError(f"warp expects a 2D image, got {img.shape}")
    affine = np.eye(3) if affine is None else np.asarray(affine, dtype=np.float64)
    if abs(np.linalg.det(affine[:2, :2])) <= 1e-8:
        raise InvalidInputError("affine transform is singular")
    if _is_identity(affine) and displacement is None:
        return img.copy()
    coords = sample_coordinates(img.shape, affine, displacement)
    return map_coordinates(img, coords, order=1, mode="constant", cval=0.0)
