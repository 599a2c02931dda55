"""Data-side adapters binding slice samples to the training loop.

A task exposes ``n_train``, ``batch_loss(model, indices, epoch)``, and
``validation_ssim(model)``. The reconstruction task feeds undersampled
k-space through the varnet; the enhancement task feeds precomputed initial
reconstructions plus registered priors through the enhancer, with the
paper-style paired augmentation applied on the fly.
"""

from __future__ import annotations

import numpy as np
import torch

from .data import SliceSample, apply_augmentation, draw_augment_params
from .errors import ConfigurationError
from .losses import normalize_torch, ssim_loss
from .masks import SamplingMask
from .metrics import ssim

__all__ = ["ReconTask", "EnhanceTask", "evaluate_mean_ssim"]


def evaluate_mean_ssim(references, outputs) -> float:
    """Mean SSIM against per-slice references at the reference data range."""
    vals = []
    for ref, out in zip(references, outputs):
        vals.append(ssim(ref, out, data_range=float(np.max(ref))))
    return float(np.mean(vals))


def _group_by_mask(indices: np.ndarray, masks: list[SamplingMask]):
    """Split a batch into runs sharing the same mask object (per-volume masks)."""
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(id(masks[int(i)]), []).append(int(i))
    return groups.values()


class ReconTask:
    def __init__(self, train: list[SliceSample], val: list[SliceSample],
                 dtype=torch.complex64):
        if not train:
            raise ConfigurationError("reconstruction task needs training samples")
        self.n_train = len(train)
        self._masks = [s.mask for s in train]
        self._k_under = [torch.as_tensor(s.kspace_under).to(dtype) for s in train]
        self._refs = [torch.as_tensor(s.reference, dtype=torch.float32) for s in train]
        self._val = val

    def batch_loss(self, model, indices, epoch):
        total = 0.0
        count = 0
        for group in _group_by_mask(np.asarray(indices), self._masks):
            k = torch.stack([self._k_under[i] for i in group])
            ref = torch.stack([self._refs[i] for i in group])
            out = model(k, self._masks[group[0]])
            total = total + ssim_loss(out, ref) * len(group)
            count += len(group)
        return total / count

    def validation_ssim(self, model) -> float:
        outs, refs = [], []
        for s in self._val:
            k = torch.as_tensor(s.kspace_under).to(torch.complex64).unsqueeze(0)
            out = model(k, s.mask)[0].numpy()
            outs.append(out)
            refs.append(s.reference)
        return evaluate_mean_ssim(refs, outs)


class EnhanceTask:
    """Holds (y_hat, registered prior, reference) triples in image space.

    Augmentation (rotation <= 15 deg, translation <= 10%, scale <= 10%)
    applies one transform per sample per epoch, identically to all three
    images, with the draw derived from (seed, epoch, index).
    """

    def __init__(self, train_triples, val_triples, augment: bool = True, seed: int = 0):
        if not train_triples:
            raise ConfigurationError("enhancement task needs training samples")
        self._train = [tuple(np.asarray(a, dtype=np.float64) for a in t) for t in train_triples]
        self._val = [tuple(np.asarray(a, dtype=np.float64) for a in t) for t in val_triples]
        self.augment = augment
        self.seed = seed
        self.n_train = len(self._train)

    def _materialize(self, idx: int, epoch: int):
        y_hat, prior, ref = self._train[idx]
        if self.augment:
            params = draw_augment_params([self.seed, epoch, idx, 0xA46])
            images = [y_hat, ref] if prior is None else [y_hat, prior, ref]
            warped = apply_augmentation(images, params)
            if prior is None:
                y_hat, ref = warped
            else:
                y_hat, prior, ref = warped
        return y_hat, prior, ref

    def batch_loss(self, model, indices, epoch):
        ys, priors, refs = [], [], []
        has_prior = self._train[0][1] is not None
        for i in np.asarray(indices):
            y_hat, prior, ref = self._materialize(int(i), epoch)
            ys.append(y_hat)
            refs.append(ref)
            if has_prior:
                priors.append(prior)
        y = normalize_torch(torch.as_tensor(np.stack(ys), dtype=torch.float32))
        p = (
            normalize_torch(torch.as_tensor(np.stack(priors), dtype=torch.float32))
            if has_prior
            else None
        )
        ref = torch.as_tensor(np.stack(refs), dtype=torch.float32)
        out = model(y, p)
        return ssim_loss(out, ref)

    def validation_ssim(self, model) -> float:
        outs, refs = [], []
        for y_hat, prior, ref in self._val:
            peak = float(np.max(np.abs(y_hat)))
            y = torch.as_tensor(y_hat[None] / peak, dtype=torch.float32)
            p = None
            if prior is not None:
                p = normalize_torch(torch.as_tensor(prior[None], dtype=torch.float32))
            out = model(y, p)[0].numpy() * peak
            outs.append(out)
            refs.append(ref)
        return evaluate_mean_ssim(refs, outs)
