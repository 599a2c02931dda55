"""Turning longitudinal cases into training/evaluation slice samples.

Covers retrospective acquisition simulation (coil expansion, forward FFT,
per-volume Poisson-disc undersampling, optional complex k-space noise),
max-normalization, paired augmentation, peripheral-slice exclusion,
subject-disjoint splitting, and JSON manifests with NIfTI volumes on disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kspace as ksp
from .errors import ConfigurationError, DataError, DegenerateInputError, InvalidInputError
from .masks import SamplingMask, generate_poisson_mask
from .phantom import LongitudinalCase, PhantomConfig, generate_phantom_pair, synthesize_coil_maps
from .nifti import read_nifti, write_nifti
from .warping import build_affine, warp_image

__all__ = [
    "SliceSample",
    "AugmentParams",
    "simulate_acquisition",
    "normalize",
    "augment",
    "draw_augment_params",
    "apply_augmentation",
    "exclude_peripheral",
    "split_subjects",
    "audit_slice_sample",
    "save_dataset",
    "load_dataset",
    "generate_phantom_dataset",
]


@dataclass
class SliceSample:
    reference: np.ndarray  # (n_y, n_z) real, the fully sampled RSS image
    kspace_full: np.ndarray  # (n_c, n_y, n_z) complex
    mask: SamplingMask
    kspace_under: np.ndarray  # (n_c, n_y, n_z) complex
    prior: np.ndarray | None
    subject_id: str
    slice_index: int


def audit_slice_sample(sample: SliceSample, rtol: float = 1e-5) -> None:
    """Assert the two SliceSample consistency invariants."""
    expected_under = ksp.undersample(sample.kspace_full, sample.mask)
    if not np.array_equal(expected_under, sample.kspace_under):
        raise InvalidInputError(
            f"{sample.subject_id}[{sample.slice_index}]: kspace_under is not "
            "the masked full k-space"
        )
    ref = ksp.rss_combine(ksp.inverse_transform(sample.kspace_full))
    err = np.linalg.norm(ref - sample.reference) / max(np.linalg.norm(ref), 1e-30)
    if err > rtol:
        raise InvalidInputError(
            f"{sample.subject_id}[{sample.slice_index}]: reference deviates "
            f"from RSS reconstruction by {err:.2e} relative"
        )


def simulate_acquisition(
    case: LongitudinalCase,
    n_coils: int,
    R: float,
    seed: int,
    center_radius: int = 16,
    noise_std: float = 0.0,
) -> list[SliceSample]:
    """Retrospectively acquire a volume: one mask per volume, per-slice
    multi-coil k-space, reference recomputed from the (noisy) full k-space."""
    if n_coils < 1:
        raise ConfigurationError(f"n_coils must be >= 1, got {n_coils}")
    if case.current_volume is None:
        raise ConfigurationError("case has no current volume")
    vol = case.current_volume
    dims = vol.shape[1:]
    ss = np.random.SeedSequence([seed, 0xAC9])
    mask_seed, maps_seed, noise_seed = (int(s) for s in ss.generate_state(3))
    mask = generate_poisson_mask(dims, R, center_radius, mask_seed)
    maps = synthesize_coil_maps(dims, n_coils, maps_seed)
    noise_rng = np.random.default_rng(noise_seed)

    samples = []
    for idx in range(vol.shape[0]):
        coil_imgs = ksp.expand(vol[idx].astype(np.complex128), maps)
        k_full = ksp.forward_transform(coil_imgs)
        if noise_std > 0:
            k_full = k_full + noise_rng.normal(0.0, noise_std, k_full.shape) \
                + 1j * noise_rng.normal(0.0, noise_std, k_full.shape)
        reference = ksp.rss_combine(ksp.inverse_transform(k_full))
        samples.append(
            SliceSample(
                reference=reference,
                kspace_full=k_full,
                mask=mask,
                kspace_under=ksp.undersample(k_full, mask),
                prior=None if case.prior_volume is None else case.prior_volume[idx],
                subject_id=case.subject_id,
                slice_index=idx,
            )
        )
    return samples


def normalize(img: np.ndarray) -> np.ndarray:
    """Divide by the absolute maximum; the output's max magnitude is 1."""
    img = np.asarray(img)
    peak = np.max(np.abs(img))
    if peak == 0:
        raise DegenerateInputError("cannot normalize an all-zero image")
    return img / peak


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    translation_frac: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def is_identity(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.translation_frac == (0.0, 0.0)
            and self.scale == 1.0
        )


MAX_AUG_ROTATION_DEG = 15.0
MAX_AUG_TRANSLATION_FRAC = 0.10
MAX_AUG_SCALE_FRAC = 0.10


def draw_augment_params(seed) -> AugmentParams:
    rng = np.random.default_rng(seed)
    return AugmentParams(
        rotation_deg=rng.uniform(-MAX_AUG_ROTATION_DEG, MAX_AUG_ROTATION_DEG),
        translation_frac=tuple(rng.uniform(-MAX_AUG_TRANSLATION_FRAC, MAX_AUG_TRANSLATION_FRAC, 2)),
        scale=1.0 + rng.uniform(-MAX_AUG_SCALE_FRAC, MAX_AUG_SCALE_FRAC),
    )


def apply_augmentation(images: list[np.ndarray], params: AugmentParams) -> list[np.ndarray]:
    """Apply one spatial transform identically to every image in the list."""
    if params.is_identity():
        return [np.asarray(im).copy() for im in images]
    dims = np.asarray(images[0]).shape
    translation = (
        params.translation_frac[0] * dims[0],
        params.translation_frac[1] * dims[1],
    )
    affine = build_affine(
        rotation_deg=params.rotation_deg, scale=params.scale, translation=translation
    )
    out = []
    for im in images:
        if np.asarray(im).shape != dims:
            raise InvalidInputError("augmented images must share dims")
        out.append(warp_image(im, affine))
    return out


def augment(current: np.ndarray, prior: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
    """Identical random rotation/translation/scale for a (current, prior) pair."""
    params = draw_augment_params(seed)
    cur, pri = apply_augmentation([current, prior], params)
    return cur, pri


def exclude_peripheral(volume: np.ndarray, n: int = 50) -> np.ndarray:
    """Drop the first and last ``n`` slices of a (slices, n_y, n_z) volume."""
    volume = np.asarray(volume)
    if n < 0:
        raise InvalidInputError(f"n must be >= 0, got {n}")
    if volume.shape[0] <= 2 * n:
        raise InvalidInputError(
            f"volume has {volume.shape[0]} slices, need more than {2 * n}"
        )
    return volume[n : volume.shape[0] - n]


def split_subjects(cases, fractions, seed):
    """Partition cases by subject into (train, val, test); no subject leaks."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigurationError(f"expected 3 split fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigurationError(f"fractions must be nonnegative and sum to 1: {fractions}")
    cases = list(cases)
    ids = [c.subject_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate subject_id in dataset")
    n = len(cases)
    n_splits = sum(1 for f in fractions if f > 0)
    if n < n_splits:
        raise ConfigurationError(f"{n} subjects cannot fill {n_splits} splits")

    # largest-remainder allocation, then seeded shuffle
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainders = np.array(raw) - np.array(counts)
    for i in np.argsort(-remainders)[: n - sum(counts)]:
        counts[int(i)] += 1
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [cases[i] for i in order]
    train = shuffled[: counts[0]]
    val = shuffled[counts[0] : counts[0] + counts[1]]
    test = shuffled[counts[0] + counts[1] :]
    return train, val, test


def generate_phantom_dataset(n_subjects: int, base_config: PhantomConfig, seed: int):
    """N longitudinal phantom cases with distinct per-subject seeds."""
    if n_subjects < 1:
        raise ConfigurationError(f"n_subjects must be >= 1, got {n_subjects}")
    cases = []
    for i in range(n_subjects):
        sub_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        cfg = PhantomConfig(**{**base_config.__dict__, "seed": sub_seed})
        cases.append(generate_phantom_pair(cfg))
    return cases


def save_dataset(cases, out_dir, splits: dict | None = None, extra: dict | None = None) -> Path:
    """Write NIfTI volumes plus a JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    entries = []
    for case in cases:
        cur_path = out_dir / "volumes" / f"{case.subject_id}_current.nii.gz"
        write_nifti(cur_path, case.current_volume.astype(np.float32), case.voxel_info)
        entry = {
            "subject_id": case.subject_id,
            "current": str(cur_path.relative_to(out_dir)),
            "prior": None,
            "provenance": case.provenance,
            "split": (splits or {}).get(case.subject_id),
        }
        if case.prior_volume is not None:
            pri_path = out_dir / "volumes" / f"{case.subject_id}_prior.nii.gz"
            write_nifti(pri_path, case.prior_volume.astype(np.float32), case.voxel_info)
            entry["prior"] = str(pri_path.relative_to(out_dir))
        entries.append(entry)
    manifest = {"subjects": entries}
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(manifest_path) -> tuple[list[LongitudinalCase], dict]:
    """Read a manifest back into cases plus the subject->split mapping."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if "subjects" not in manifest:
        raise DataError(f"manifest {manifest_path} has no 'subjects' list")
    root = manifest_path.parent
    cases, splits = [], {}
    for entry in manifest["subjects"]:
        try:
            current, spacing = read_nifti(root / entry["current"])
            prior = None
            if entry.get("prior"):
                prior, _ = read_nifti(root / entry["prior"])
            case = LongitudinalCase(
                subject_id=entry["subject_id"],
                current_volume=np.asarray(current, dtype=np.float64),
                prior_volume=None if prior is None else np.asarray(prior, dtype=np.float64),
                voxel_info=tuple(spacing),
                provenance=entry.get("provenance", "ingested"),
            )
        except KeyError as exc:
            raise DataError(f"manifest entry missing field {exc}") from exc
        cases.append(case)
        if entry.get("split"):
            splits[entry["subject_id"]] = entry["split"]
    return cases, splits
