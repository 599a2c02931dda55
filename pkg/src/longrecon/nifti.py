"""Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Covers exactly what this package needs: 3D magnitude volumes with voxel
spacing, float32/float64/int16/uint8 payloads, optional gzip. Volumes are
held in memory as ``(n_slices, n_y, n_z)`` C-order arrays; on disk the
NIfTI (i, j, k) axes map to (slice, y, z) with i fastest, per the format's
Fortran data layout.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["write_nifti", "read_nifti"]

_HEADER_SIZE = 348
_VOX_OFFSET = 352.0
_MAGIC = b"n+1\x00"

_DTYPE_CODES = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.int32): 8,
    np.dtype(np.float32): 16,
    np.dtype(np.float64): 64,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _open(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def write_nifti(path, volume: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a 3D volume; dtype preserved if supported, else cast to float32."""
    path = Path(path)
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise DataError(f"expected a 3D volume, got shape {vol.shape}")
    if vol.dtype not in _DTYPE_CODES:
        vol = vol.astype(np.float32)

    header = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", header, 0, _HEADER_SIZE)  # sizeof_hdr
    dims = (3, vol.shape[0], vol.shape[1], vol.shape[2], 1, 1, 1, 1)
    struct.pack_into("<8h", header, 40, *dims)
    struct.pack_into("<h", header, 70, _DTYPE_CODES[vol.dtype])  # datatype
    struct.pack_into("<h", header, 72, vol.dtype.itemsize * 8)  # bitpix
    pixdim = (1.0, float(spacing[0]), float(spacing[1]), float(spacing[2]), 0, 0, 0, 0)
    struct.pack_into("<8f", header, 76, *pixdim)
    struct.pack_into("<f", header, 108, _VOX_OFFSET)  # vox_offset
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("<f", header, 116, 0.0)  # scl_inter
    struct.pack_into("<h", header, 252, 1)  # qform_code: scanner
    # identity quaternion (b=c=d=0) with offsets 0 -> qform is spacing-scaled identity
    struct.pack_into("<6f", header, 256, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    header[344:348] = _MAGIC

    with _open(path, "wb") as f:
        f.write(bytes(header))
        f.write(b"\x00\x00\x00\x00")  # no extensions
        # NIfTI data is Fortran-ordered over (i, j, k) = our (slice, y, z)
        f.write(np.asfortranarray(vol).tobytes(order="F"))


def read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a 3D volume; returns (volume, spacing)."""
    path = Path(path)
    with _open(path, "rb") as f:
        header = f.read(_HEADER_SIZE)
        if len(header) < _HEADER_SIZE:
            raise DataError(f"{path}: truncated NIfTI header")
        (size,) = struct.unpack_from("<i", header, 0)
        if size != _HEADER_SIZE or header[344:347] != _MAGIC[:3]:
            raise DataError(f"{path}: not a NIfTI-1 single file")
        dims = struct.unpack_from("<8h", header, 40)
        if dims[0] != 3 and not (dims[0] == 4 and dims[4] == 1):
            raise DataError(f"{path}: expected a 3D volume, got dim {dims}")
        shape = tuple(int(d) for d in dims[1:4])
        (dtype_code,) = struct.unpack_from("<h", header, 70)
        if dtype_code not in _CODE_DTYPES:
            raise DataError(f"{path}: unsupported NIfTI datatype code {dtype_code}")
        dtype = _CODE_DTYPES[dtype_code]
        pixdim = struct.unpack_from("<8f", header, 76)
        (vox_offset,) = struct.unpack_from("<f", header, 108)
        slope, inter = struct.unpack_from("<2f", header, 112)
        f.seek(int(vox_offset))
        n_bytes = int(np.prod(shape)) * dtype.itemsize
        raw = f.read(n_bytes)
        if len(raw) < n_bytes:
            raise DataError(f"{path}: truncated NIfTI data section")
    vol = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).reshape(shape, order="F")
    vol = np.ascontiguousarray(vol)
    if slope not in (0.0, 1.0) or inter != 0.0:
        vol = vol.astype(np.float64) * (slope or 1.0) + inter
    spacing = (float(pixdim[1]), float(pixdim[2]), float(pixdim[3]))
    return vol, spacing
