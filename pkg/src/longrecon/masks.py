"""Variable-density Poisson-disc undersampling masks.

Masks live on the (n_y, n_z) phase/slice-encode grid with a fully sampled
disc at the grid center (the autocalibration region) and Poisson-disc
samples elsewhere. The minimum point spacing grows linearly with distance
from the center, so density falls off radially. A bisection search on the
base spacing hits the requested acceleration within +-5%.

Generation is a pure function of ``(dims, target_R, center_radius, seed)``:
the candidate-site permutation is drawn once per seed and reused for every
bisection evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigurationError, InvalidInputError

__all__ = ["SamplingMask", "generate_poisson_mask", "center_disc", "achieved_acceleration"]

ACCELERATION_TOLERANCE = 0.05
# radius multiplier at the far corner relative to the center
_DENSITY_SLOPE = 2.0


@dataclass(frozen=True)
class SamplingMask:
    """Binary undersampling mask plus the parameters that produced it."""

    mask: np.ndarray  # uint8 (n_y, n_z), entries in {0, 1}
    target_R: float
    center_radius: int
    seed: int

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise InvalidInputError(f"mask must be 2D, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise InvalidInputError("mask entries must be 0 or 1")
        object.__setattr__(self, "mask", np.ascontiguousarray(m, dtype=np.uint8))

    @property
    def dims(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def n_sampled(self) -> int:
        return int(self.mask.sum())

    @property
    def acceleration(self) -> float:
        return self.mask.size / self.n_sampled


def center_disc(dims: tuple[int, int], radius: int) -> np.ndarray:
    """Boolean grid of lattice points within ``radius`` of the grid center."""
    ny, nz = dims
    yy = np.arange(ny)[:, None] - ny // 2
    zz = np.arange(nz)[None, :] - nz // 2
    return yy * yy + zz * zz <= radius * radius


def achieved_acceleration(mask: np.ndarray) -> float:
    ones = int(np.asarray(mask).sum())
    if ones == 0:
        raise InvalidInputError("mask has no sampled locations")
    return np.asarray(mask).size / ones


@njit(cache=True)
def _dart_throw(order_y, order_z, radii, ny, nz):  # pragma: no cover - jitted
    """Sequential dart throwing: accept a site if no accepted site lies
    within its local radius. ``radii`` is the per-site minimum spacing."""
    mask = np.zeros((ny, nz), dtype=np.uint8)
    for i in range(order_y.shape[0]):
        y = order_y[i]
        z = order_z[i]
        r = radii[y, z]
        ri = int(np.ceil(r))
        y0 = max(y - ri, 0)
        y1 = min(y + ri, ny - 1)
        z0 = max(z - ri, 0)
        z1 = min(z + ri, nz - 1)
        ok = True
        r2 = r * r
        for yy in range(y0, y1 + 1):
            dy = yy - y
            for zz in range(z0, z1 + 1):
                if mask[yy, zz] == 1:
                    dz = zz - z
                    if dy * dy + dz * dz < r2:
                        ok = False
                        break
            if not ok:
                break
        if ok:
            mask[y, z] = 1
    return mask


def _radial_distance(dims: tuple[int, int]) -> np.ndarray:
    ny, nz = dims
    yy = np.arange(ny)[:, None] - ny // 2
    zz = np.arange(nz)[None, :] - nz // 2
    return np.sqrt((yy * yy + zz * zz).astype(np.float64))


def generate_poisson_mask(
    dims: tuple[int, int],
    target_R: float,
    center_radius: int,
    seed: int,
) -> SamplingMask:
    """Generate a variable-density Poisson-disc mask.

    The fully sampled center disc is always included; the achieved
    acceleration ``n_y * n_z / ones`` lands within +-5% of ``target_R``.
    Deterministic per ``(dims, target_R, center_radius, seed)``.
    """
    ny, nz = int(dims[0]), int(dims[1])
    if ny < 1 or nz < 1:
        raise ConfigurationError(f"mask dims must be positive, got {dims}")
    if target_R < 1:
        raise ConfigurationError(f"target_R must be >= 1, got {target_R}")
    if center_radius < 0:
        raise ConfigurationError(f"center_radius must be >= 0, got {center_radius}")

    total = ny * nz
    disc = center_disc((ny, nz), center_radius)
    n_center = int(disc.sum())
    budget = total / target_R
    if n_center > budget:
        raise ConfigurationError(
            f"center disc ({n_center} points) exceeds the sampling budget "
            f"({budget:.0f} points) for target_R={target_R}"
        )

    if target_R == 1.0:
        mask = np.ones((ny, nz), dtype=np.uint8)
        return SamplingMask(mask, target_R, center_radius, seed)

    lo = total / (target_R * (1 + ACCELERATION_TOLERANCE))
    hi = total / (target_R * (1 - ACCELERATION_TOLERANCE))

    rng = np.random.default_rng(seed)
    order = rng.permutation(total)
    order_y = (order // nz).astype(np.int64)
    order_z = (order % nz).astype(np.int64)

    dist = _radial_distance((ny, nz))
    shape = 1.0 + _DENSITY_SLOPE * dist / dist.max()

    def ones_for(base: float) -> tuple[int, np.ndarray]:
        radii = np.maximum(base * shape, 1e-6)
        m = _dart_throw(order_y, order_z, radii, ny, nz)
        m[disc] = 1
        return int(m.sum()), m

    # ones_for is nonincreasing in base; bracket then bisect
    base_lo, base_hi = 0.25, 2.0
    while ones_for(base_hi)[0] > hi and base_hi < max(ny, nz):
        base_hi *= 2.0
    best_mask = None
    best_err = np.inf
    for _ in range(48):
        base = 0.5 * (base_lo + base_hi)
        ones, m = ones_for(base)
        err = abs(total / ones - target_R)
        if err < best_err:
            best_err, best_mask = err, m
        if lo <= ones <= hi:
            break
        if ones > hi:
            base_lo = base
        else:
            base_hi = base
    assert best_mask is not None
    if not (lo <= best_mask.sum() <= hi):
        raise ConfigurationError(
            f"could not reach acceleration {target_R}+-5% for dims {dims} "
            f"(closest: {total / best_mask.sum():.2f})"
        )
    return SamplingMask(best_mask, target_R, center_radius, seed)
