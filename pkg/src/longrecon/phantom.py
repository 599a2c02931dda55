"""Synthetic longitudinal brain-like phantoms.

Each subject is a stack of 2D slices cut from randomized smooth 3D
ellipsoids: an outer brain shell (gray-like), a white-like interior, and
CSF-like ventricles, modulated by a smooth per-subject texture field. The
"prior" exam is the same anatomy seen earlier: smoothly deformed, with
per-class contrast drift, a ventricle intensity factor, and optional
image-domain noise. Everything is a pure function of the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .errors import ConfigurationError

__all__ = [
    "PhantomConfig",
    "LongitudinalCase",
    "generate_phantom_pair",
    "synthesize_coil_maps",
]


@dataclass(frozen=True)
class PhantomConfig:
    n_tissue_classes: int = 4
    n_coils: int = 4
    deformation_magnitude: float = 3.0  # max displacement, pixels
    contrast_shift: float = 0.1  # per-class intensity drift fraction
    atrophy_factor: float = 0.95  # ventricle-class intensity factor in the prior
    noise_std: float = 0.0  # image-domain noise on the prior
    seed: int = 0
    dims: tuple[int, int] = (128, 128)
    n_slices: int = 8
    texture_amp: float = 0.08

    def validate(self) -> "PhantomConfig":
        if self.n_tissue_classes < 2:
            raise ConfigurationError("need at least background + one tissue class")
        if self.n_coils < 1:
            raise ConfigurationError("n_coils must be >= 1")
        for name in ("deformation_magnitude", "contrast_shift", "noise_std",
                     "atrophy_factor", "texture_amp"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.n_slices < 1 or min(self.dims) < 16:
            raise ConfigurationError(f"bad phantom geometry: dims={self.dims}, n_slices={self.n_slices}")
        return self


@dataclass
class LongitudinalCase:
    subject_id: str
    current_volume: np.ndarray  # (n_slices, n_y, n_z), nonnegative
    prior_volume: np.ndarray | None
    voxel_info: tuple[float, float, float] = (1.0, 1.0, 1.0)
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.current_volume.ndim != 3:
            raise ConfigurationError(
                f"current volume must be 3D, got {self.current_volume.shape}"
            )
        if self.prior_volume is not None and self.prior_volume.shape != self.current_volume.shape:
            raise ConfigurationError(
                "prior and current volumes must have identical shapes, got "
                f"{self.prior_volume.shape} vs {self.current_volume.shape}"
            )


def _soft_ellipsoid(coords, center, axes, edge=0.05):
    """Smooth indicator of an axis-aligned ellipsoid in normalized coords."""
    s, y, z = coords
    rho = np.sqrt(
        ((s - center[0]) / axes[0]) ** 2
        + ((y - center[1]) / axes[1]) ** 2
        + ((z - center[2]) / axes[2]) ** 2
    )
    return 1.0 / (1.0 + np.exp((rho - 1.0) / edge))


def _class_maps(cfg: PhantomConfig, rng: np.random.Generator):
    """Per-class soft weight maps (csf, gray, white, extras...), summing <= 1."""
    ns, (ny, nz) = cfg.n_slices, cfg.dims
    s = np.linspace(-0.6, 0.6, ns)[:, None, None] if ns > 1 else np.zeros((1, 1, 1))
    y0 = np.linspace(-1.0, 1.0, ny)[None, :, None]
    z0 = np.linspace(-1.0, 1.0, nz)[None, None, :]
    jit = lambda lo, hi: rng.uniform(lo, hi)
    # per-subject in-plane head rotation (positioning variability)
    theta = np.deg2rad(jit(-12.0, 12.0))
    y = np.cos(theta) * y0 - np.sin(theta) * z0
    z = np.sin(theta) * y0 + np.cos(theta) * z0
    coords = (s, y, z)

    brain = _soft_ellipsoid(
        coords,
        center=(jit(-0.06, 0.06), jit(-0.06, 0.06), jit(-0.06, 0.06)),
        axes=(jit(0.85, 1.15), jit(0.68, 0.86), jit(0.56, 0.74)),
    )
    white = _soft_ellipsoid(
        coords,
        center=(jit(-0.06, 0.06), jit(-0.05, 0.05), jit(-0.05, 0.05)),
        axes=(jit(0.58, 0.82), jit(0.46, 0.64), jit(0.36, 0.54)),
    )
    vent = np.zeros_like(brain)
    for side in (-1.0, 1.0):
        vent += _soft_ellipsoid(
            coords,
            center=(jit(-0.08, 0.08), side * jit(0.06, 0.22), jit(-0.12, 0.06)),
            axes=(jit(0.24, 0.52), jit(0.05, 0.14), jit(0.14, 0.36)),
            edge=0.04,
        )
    vent = np.clip(vent, 0.0, 1.0)

    maps = {}
    if cfg.n_tissue_classes >= 4:
        maps["csf"] = brain * vent
        maps["white"] = brain * (1 - vent) * white
        maps["gray"] = brain * (1 - vent) * (1 - white)
    elif cfg.n_tissue_classes == 3:
        maps["white"] = brain * white
        maps["gray"] = brain * (1 - white)
    else:
        maps["gray"] = brain
    # additional classes beyond 4: small random lesion-like inclusions
    for i in range(cfg.n_tissue_classes - 4):
        blob = _soft_ellipsoid(
            coords,
            center=(jit(-0.2, 0.2), jit(-0.3, 0.3), jit(-0.3, 0.3)),
            axes=(jit(0.08, 0.2),) * 3,
            edge=0.04,
        )
        blob = np.clip(blob * brain, 0.0, 1.0)
        for w in maps.values():
            w *= 1 - blob
        maps[f"extra{i}"] = blob
    return maps


_BASE_INTENSITY = {"csf": 0.22, "gray": 0.62, "white": 0.9}


def _smooth_field(shape, rng, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma=sigma)
    peak = np.max(np.abs(f))
    return f / peak if peak > 0 else f


def _warp_volume(vol: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Backward-warp every slice by the 2D displacement field (pixels)."""
    ny, nz = vol.shape[1:]
    yy, zz = np.meshgrid(np.arange(ny), np.arange(nz), indexing="ij")
    cy = yy + disp[..., 0]
    cz = zz + disp[..., 1]
    out = np.empty_like(vol)
    for i in range(vol.shape[0]):
        out[i] = map_coordinates(vol[i], [cy, cz], order=1, mode="constant", cval=0.0)
    return out


def generate_phantom_pair(cfg: PhantomConfig, return_class_maps: bool = False):
    """Generate one longitudinal (current, prior) case, deterministic per seed."""
    cfg = cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    maps = _class_maps(cfg, rng)

    intensities = {}
    for name in maps:
        base = _BASE_INTENSITY.get(name, rng.uniform(0.3, 1.0))
        intensities[name] = base * (1.0 + rng.uniform(-0.05, 0.05))

    # two-scale texture: the coarse part survives undersampling; the fine
    # part is the subject signature that only the prior carries (it averages
    # away in any cross-subject atlas and is destroyed by undersampling)
    texture = cfg.texture_amp * (
        0.6 * _smooth_field((cfg.n_slices, *cfg.dims), rng, sigma=(1.0, 6.0, 6.0))
        + _smooth_field((cfg.n_slices, *cfg.dims), rng, sigma=(0.5, 3.0, 3.0))
    )
    current = sum(intensities[n] * maps[n] for n in maps) * (1.0 + texture)
    current = np.clip(current, 0.0, None)

    # prior = deformed current anatomy with per-class contrast drift
    if cfg.deformation_magnitude > 0:
        disp = np.stack(
            [_smooth_field(cfg.dims, rng, sigma=min(cfg.dims) / 8) for _ in range(2)],
            axis=-1,
        )
        peak = np.max(np.linalg.norm(disp, axis=-1))
        disp *= cfg.deformation_magnitude / peak
        prior_maps = {n: _warp_volume(w, disp) for n, w in maps.items()}
        prior_texture = _warp_volume(texture, disp)
    else:
        prior_maps = maps
        prior_texture = texture

    factors = {}
    for name in maps:
        f = 1.0 + (cfg.contrast_shift * rng.uniform(-1.0, 1.0) if cfg.contrast_shift > 0 else 0.0)
        if name == "csf":
            f *= cfg.atrophy_factor
        factors[name] = f
    prior = sum(intensities[n] * factors[n] * prior_maps[n] for n in maps) * (1.0 + prior_texture)
    if cfg.noise_std > 0:
        prior = prior + rng.normal(0.0, cfg.noise_std, size=prior.shape)
    prior = np.clip(prior, 0.0, None)

    case = LongitudinalCase(
        subject_id=f"phantom-{cfg.seed:05d}",
        current_volume=current,
        prior_volume=prior,
    )
    if return_class_maps:
        return case, {"current": maps, "prior": prior_maps}
    return case


def synthesize_coil_maps(dims: tuple[int, int], n_coils: int, seed: int) -> np.ndarray:
    """Smooth complex coil sensitivities with pixelwise RSS exactly 1.

    Gaussian magnitude profiles centered on a ring outside the FOV plus a
    low-order per-coil phase ramp, normalized pixelwise.
    """
    if n_coils < 1:
        raise ConfigurationError(f"n_coils must be >= 1, got {n_coils}")
    ny, nz = dims
    rng = np.random.default_rng((seed, n_coils, 0xC011))
    y = np.linspace(-1.0, 1.0, ny)[:, None]
    z = np.linspace(-1.0, 1.0, nz)[None, :]
    maps = np.empty((n_coils, ny, nz), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils + rng.uniform(-0.15, 0.15)
        py, pz = 1.3 * np.sin(ang), 1.3 * np.cos(ang)
        sigma = rng.uniform(0.85, 1.1)
        mag = np.exp(-((y - py) ** 2 + (z - pz) ** 2) / (2 * sigma**2))
        phase = rng.uniform(-np.pi, np.pi) + rng.uniform(-1.2, 1.2) * y + rng.uniform(-1.2, 1.2) * z
        maps[c] = mag * np.exp(1j * phase)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss[None]
