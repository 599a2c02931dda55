"""HDF5 acquisition containers.

Canonical single-slice schema (root level): datasets ``kspace``
(complex64, C-order, [coil, ky, kz]), ``mask`` (uint8, [ky, kz]),
``sens_maps`` (complex64, [coil, ky, kz]); attributes ``target_R``,
``center_radius``, ``seed``. Multi-slice volumes store one group per slice
under ``slices/<index>``, each group following the same schema.
"""

from __future__ import annotations

from pathlib import Path

import h5py
import numpy as np

from .errors import DataError
from .masks import SamplingMask

__all__ = [
    "save_acquisition",
    "load_acquisition",
    "save_acquisition_volume",
    "load_acquisition_volume",
]


def _write_group(g, kspace, mask: SamplingMask, sens_maps):
    g.create_dataset("kspace", data=np.ascontiguousarray(kspace, dtype=np.complex64))
    g.create_dataset("mask", data=np.ascontiguousarray(mask.mask, dtype=np.uint8))
    if sens_maps is not None:
        g.create_dataset(
            "sens_maps", data=np.ascontiguousarray(sens_maps, dtype=np.complex64)
        )
    g.attrs["target_R"] = float(mask.target_R)
    g.attrs["center_radius"] = int(mask.center_radius)
    g.attrs["seed"] = int(mask.seed)


def _read_group(g, where: str):
    for name in ("kspace", "mask"):
        if name not in g:
            raise DataError(f"{where}: missing required dataset '{name}'")
    kspace = np.asarray(g["kspace"])
    mask_arr = np.asarray(g["mask"])
    if kspace.ndim != 3:
        raise DataError(f"{where}: kspace must be [coil, ky, kz], got {kspace.shape}")
    if mask_arr.shape != kspace.shape[1:]:
        raise DataError(
            f"{where}: mask shape {mask_arr.shape} does not match k-space dims "
            f"{kspace.shape[1:]}"
        )
    missing = [a for a in ("target_R", "center_radius", "seed") if a not in g.attrs]
    if missing:
        raise DataError(f"{where}: missing attributes {missing}")
    mask = SamplingMask(
        mask_arr,
        target_R=float(g.attrs["target_R"]),
        center_radius=int(g.attrs["center_radius"]),
        seed=int(g.attrs["seed"]),
    )
    sens_maps = np.asarray(g["sens_maps"]) if "sens_maps" in g else None
    if sens_maps is not None and sens_maps.shape != kspace.shape:
        raise DataError(
            f"{where}: sens_maps shape {sens_maps.shape} != kspace shape {kspace.shape}"
        )
    return kspace, mask, sens_maps


def save_acquisition(path, kspace, mask: SamplingMask, sens_maps=None) -> None:
    """Write one slice at the file root (the canonical schema)."""
    with h5py.File(Path(path), "w") as f:
        _write_group(f, kspace, mask, sens_maps)


def load_acquisition(path):
    path = Path(path)
    try:
        with h5py.File(path, "r") as f:
            return _read_group(f, str(path))
    except OSError as exc:
        raise DataError(f"cannot open HDF5 container {path}: {exc}") from exc


def save_acquisition_volume(path, slices, mask: SamplingMask, sens_maps=None) -> None:
    """Write a stack of k-space slices as ``slices/<index>`` groups."""
    with h5py.File(Path(path), "w") as f:
        root = f.create_group("slices")
        for idx, kspace in enumerate(slices):
            _write_group(root.create_group(f"{idx:04d}"), kspace, mask, sens_maps)


def load_acquisition_volume(path):
    """Read either a volume container or a single root-level slice.

    Returns (list of k-space arrays, mask, sens_maps or None).
    """
    path = Path(path)
    try:
        with h5py.File(path, "r") as f:
            if "slices" in f:
                names = sorted(f["slices"].keys())
                if not names:
                    raise DataError(f"{path}: empty 'slices' group")
                out, mask, sens = [], None, None
                for name in names:
                    k, m, s = _read_group(f["slices"][name], f"{path}:slices/{name}")
                    if mask is not None and not np.array_equal(m.mask, mask.mask):
                        raise DataError(f"{path}: slices carry inconsistent masks")
                    out.append(k)
                    mask, sens = m, s
                return out, mask, sens
            k, m, s = _read_group(f, str(path))
            return [k], m, s
    except OSError as exc:
        raise DataError(f"cannot open HDF5 container {path}: {exc}") from exc
