"""Slicewise registration of the prior scan to the current reconstruction.

Three pluggable backends:

* ``identity`` — returns the prior unchanged.
* ``affine`` — built-in multi-resolution (x4, x2, x1) maximization of
  normalized cross-correlation over a 6-parameter affine, by fixed-step
  gradient ascent with step halving on non-improvement. NCC is used rather
  than MSE because longitudinal scans drift in contrast.
* ``external`` — file-based adapter around a registration command
  (stands in for tools like EasyReg): write moving/fixed NIfTI, run the
  command, read the warped output.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates, zoom

from .errors import InvalidInputError, RegistrationAdapterError
from .nifti import read_nifti, write_nifti
from .warping import sample_coordinates, warp_image

__all__ = [
    "RegistrationTransform",
    "RegistrationResult",
    "AffineOptions",
    "ExternalToolConfig",
    "ncc",
    "register",
    "warp",
]


@dataclass
class RegistrationTransform:
    affine: np.ndarray  # 3x3 homogeneous, pixel units, center-relative action
    displacement_field: np.ndarray | None = None  # (n_y, n_z, 2), pixels
    backend: str = "identity"

    def __post_init__(self):
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (3, 3):
            raise InvalidInputError(f"affine must be 3x3, got {self.affine.shape}")
        if abs(np.linalg.det(self.affine[:2, :2])) <= 1e-8:
            raise InvalidInputError("affine linear part is singular")
        if self.displacement_field is not None and not np.isfinite(self.displacement_field).all():
            raise InvalidInputError("displacement field contains NaN or Inf")

    @classmethod
    def identity(cls, backend: str = "identity") -> "RegistrationTransform":
        return cls(np.eye(3), backend=backend)

    @property
    def linear(self) -> np.ndarray:
        return self.affine[:2, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.affine[:2, 2]


@dataclass
class RegistrationResult:
    registered: np.ndarray
    transform: RegistrationTransform
    similarity_before: float
    similarity_after: float
    elapsed_seconds: float
    converged: bool = True
    message: str = ""
    per_level_similarity: list = field(default_factory=list)


@dataclass(frozen=True)
class AffineOptions:
    levels: tuple[int, ...] = (4, 2, 1)  # downsampling factors, coarse to fine
    max_iterations: int = 200
    initial_step: float = 1.0  # pixels at the current level
    min_step: float = 1e-3
    tolerance: float = 1e-7  # NCC improvement below this counts as converged


@dataclass(frozen=True)
class ExternalToolConfig:
    """Command template with ``{moving}``, ``{fixed}``, ``{out}`` placeholders."""

    command_template: str
    timeout_seconds: float = 120.0
    workdir: str | None = None


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation of two images, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.dot(a, b) / denom)


def warp(img: np.ndarray, transform: RegistrationTransform) -> np.ndarray:
    """Apply a registration transform to an image (bilinear, zero fill)."""
    return warp_image(img, transform.affine, transform.displacement_field)


def _params_to_affine(p: np.ndarray) -> np.ndarray:
    out = np.eye(3)
    out[0, 0] += p[0]
    out[0, 1] += p[1]
    out[1, 0] += p[2]
    out[1, 1] += p[3]
    out[0, 2] = p[4]
    out[1, 2] = p[5]
    return out


def _ncc_and_gradient(prior, grad_y, grad_z, target_hat, target_norm, p):
    """NCC of warp(prior, p) against target plus its gradient w.r.t. p."""
    ny, nz = prior.shape
    coords = sample_coordinates((ny, nz), _params_to_affine(p))
    w = map_coordinates(prior, coords, order=1, mode="constant", cval=0.0)
    gy = map_coordinates(grad_y, coords, order=1, mode="constant", cval=0.0)
    gz = map_coordinates(grad_z, coords, order=1, mode="constant", cval=0.0)

    w_hat = w - w.mean()
    w_norm = np.linalg.norm(w_hat)
    if w_norm == 0 or target_norm == 0:
        return 0.0, np.zeros(6)
    a = float(np.sum(w_hat * target_hat))
    value = a / (w_norm * target_norm)
    # d NCC / d w  (mean-removal projection is a no-op on zero-mean fields)
    dw = (target_hat - (a / w_norm**2) * w_hat) / (w_norm * target_norm)

    cy, cz = (ny - 1) / 2.0, (nz - 1) / 2.0
    yy, zz = np.meshgrid(np.arange(ny) - cy, np.arange(nz) - cz, indexing="ij")
    dgy = dw * gy
    dgz = dw * gz
    grad = np.array(
        [
            np.sum(dgy * yy),
            np.sum(dgy * zz),
            np.sum(dgz * yy),
            np.sum(dgz * zz),
            np.sum(dgy),
            np.sum(dgz),
        ]
    )
    return value, grad


def _affine_ascent(prior, target, p0, opts: AffineOptions):
    """Single-level gradient ascent on NCC; returns (params, ncc, converged)."""
    ny, nz = prior.shape
    cy, cz = (ny - 1) / 2.0, (nz - 1) / 2.0
    yy, zz = np.meshgrid(np.arange(ny) - cy, np.arange(nz) - cz, indexing="ij")
    # linear-part gradients scale with |x - c|; precondition to pixel units
    precond = np.array(
        [np.mean(yy**2), np.mean(zz**2), np.mean(yy**2), np.mean(zz**2), 1.0, 1.0]
    )
    grad_y, grad_z = np.gradient(prior)
    target_hat = target - target.mean()
    target_norm = np.linalg.norm(target_hat)

    p = p0.copy()
    value, grad = _ncc_and_gradient(prior, grad_y, grad_z, target_hat, target_norm, p)
    step = opts.initial_step
    converged = False
    for _ in range(opts.max_iterations):
        g = grad / precond
        scale = np.max(np.abs(g))
        if scale == 0:
            converged = True
            break
        cand = p + step * g / scale
        cand_value, cand_grad = _ncc_and_gradient(
            prior, grad_y, grad_z, target_hat, target_norm, cand
        )
        if cand_value > value:
            if cand_value - value < opts.tolerance:
                p, value, grad = cand, cand_value, cand_grad
                converged = True
                break
            p, value, grad = cand, cand_value, cand_grad
        else:
            step *= 0.5
            if step < opts.min_step:
                converged = True
                break
    return p, value, converged


def _downsample(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    return zoom(img, 1.0 / factor, order=1)


def _register_affine(prior, target, opts: AffineOptions, t0: float):
    best_p = np.zeros(6)
    best_ncc = ncc(warp_image(prior, _params_to_affine(best_p)), target)
    per_level = []
    converged = True
    for factor in opts.levels:
        prior_l = _downsample(prior, factor)
        target_l = _downsample(target, factor)
        p_init = best_p.copy()
        p_init[4:] /= factor
        p_l, _, conv_l = _affine_ascent(prior_l, target_l, p_init, opts)
        converged = converged and conv_l
        cand = p_l.copy()
        cand[4:] *= factor
        cand_ncc = ncc(warp_image(prior, _params_to_affine(cand)), target)
        if cand_ncc >= best_ncc:
            best_p, best_ncc = cand, cand_ncc
        per_level.append(best_ncc)

    transform = RegistrationTransform(_params_to_affine(best_p), backend="affine")
    registered = warp_image(prior, transform.affine)
    return RegistrationResult(
        registered=registered,
        transform=transform,
        similarity_before=ncc(prior, target),
        similarity_after=best_ncc,
        elapsed_seconds=time.perf_counter() - t0,
        converged=converged,
        message="" if converged else "max iterations reached without convergence",
        per_level_similarity=per_level,
    )


_WORKDIR_LOCKS: dict[str, threading.Lock] = {}
_WORKDIR_LOCKS_GUARD = threading.Lock()


def _workdir_lock(workdir: str) -> threading.Lock:
    with _WORKDIR_LOCKS_GUARD:
        return _WORKDIR_LOCKS.setdefault(workdir, threading.Lock())


def _register_external(prior, target, config: ExternalToolConfig, t0: float):
    workdir = config.workdir or tempfile.mkdtemp(prefix="longrecon-reg-")
    Path(workdir).mkdir(parents=True, exist_ok=True)
    with _workdir_lock(str(workdir)):
        moving = Path(workdir) / "moving.nii"
        fixed = Path(workdir) / "fixed.nii"
        out = Path(workdir) / "registered.nii"
        write_nifti(moving, prior[None].astype(np.float32))
        write_nifti(fixed, target[None].astype(np.float32))
        if out.exists():
            out.unlink()
        cmd = config.command_template.format(moving=moving, fixed=fixed, out=out)
        try:
            proc = subprocess.run(
                shlex.split(cmd),
                capture_output=True,
                text=True,
                timeout=config.timeout_seconds,
            )
        except subprocess.TimeoutExpired as exc:
            err = RegistrationAdapterError(
                f"registration command timed out after {config.timeout_seconds}s",
                command=cmd, stdout=exc.stdout, stderr=exc.stderr,
            )
            err.timed_out = True
            raise err from exc
        if proc.returncode != 0:
            raise RegistrationAdapterError(
                f"registration command failed with exit code {proc.returncode}",
                command=cmd, stdout=proc.stdout, stderr=proc.stderr,
            )
        if not out.exists():
            raise RegistrationAdapterError(
                "registration command produced no output file",
                command=cmd, stdout=proc.stdout, stderr=proc.stderr,
            )
        vol, _ = read_nifti(out)
    registered = np.asarray(vol[0], dtype=np.float64)
    if registered.shape != target.shape:
        raise RegistrationAdapterError(
            f"registered output shape {registered.shape} != target {target.shape}",
            command=cmd,
        )
    return RegistrationResult(
        registered=registered,
        transform=RegistrationTransform.identity(backend="external"),
        similarity_before=ncc(prior, target),
        similarity_after=ncc(registered, target),
        elapsed_seconds=time.perf_counter() - t0,
    )


def register(
    prior: np.ndarray,
    target: np.ndarray,
    backend: str = "affine",
    options=None,
) -> RegistrationResult:
    """Align ``prior`` to ``target``; images must share dims.

    ``options`` is an :class:`AffineOptions` for the affine backend or an
    :class:`ExternalToolConfig` for the external backend.
    """
    prior = np.asarray(prior, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prior.shape != target.shape or prior.ndim != 2:
        raise InvalidInputError(
            f"prior {prior.shape} and target {target.shape} must be equal 2D shapes"
        )
    t0 = time.perf_counter()
    if backend == "identity":
        s = ncc(prior, target)
        return RegistrationResult(
            registered=prior.copy(),
            transform=RegistrationTransform.identity(),
            similarity_before=s,
            similarity_after=s,
            elapsed_seconds=time.perf_counter() - t0,
        )
    if backend == "affine":
        return _register_affine(prior, target, options or AffineOptions(), t0)
    if backend == "external":
        if not isinstance(options, ExternalToolConfig):
            raise InvalidInputError("external backend needs an ExternalToolConfig")
        return _register_external(prior, target, options, t0)
    raise InvalidInputError(f"unknown registration backend: {backend!r}")
