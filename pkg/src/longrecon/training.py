"""Optimization harness for the reconstruction and enhancement stages.

Adam on the SSIM loss, plateau-based learning-rate reduction, early
stopping on mean validation SSIM, JSON-lines epoch logs, and checkpoints
that round-trip bit-identically. Batch order and augmentation draw their
randomness statelessly from ``(seed, epoch[, index])``, so resuming from an
epoch-boundary checkpoint reproduces an uninterrupted run exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .enhancer import Enhancer, EnhancerConfig
from .errors import CheckpointError, ConfigurationError, TrainingError
from .varnet import VarNet, VarNetConfig

__all__ = [
    "TrainConfig",
    "TrainState",
    "train",
    "checkpoint_save",
    "checkpoint_load",
]

STAGE_DEFAULTS = {"recon": {"epochs": 200, "batch_size": 64},
                  "enhance": {"epochs": 100, "batch_size": 32}}
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    stage: str = "recon"
    epochs: int | None = None  # None: stage default (200 recon / 100 enhance)
    batch_size: int | None = None  # None: stage default (64 / 32)
    lr_init: float = 1e-3
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-6
    early_stop_patience: int = 10
    improvement_tol: float = 1e-6
    seed: int = 0

    def resolved(self) -> "TrainConfig":
        if self.stage not in STAGE_DEFAULTS:
            raise ConfigurationError(f"stage must be one of {list(STAGE_DEFAULTS)}")
        out = copy.copy(self)
        if out.epochs is None:
            out.epochs = STAGE_DEFAULTS[self.stage]["epochs"]
        if out.batch_size is None:
            out.batch_size = STAGE_DEFAULTS[self.stage]["batch_size"]
        if out.epochs < 1 or out.batch_size < 1 or out.lr_init <= 0:
            raise ConfigurationError("epochs, batch_size, lr_init must be positive")
        if not (0.0 < out.plateau_factor < 1.0):
            raise ConfigurationError("plateau_factor must be in (0, 1)")
        if out.plateau_patience < 1 or out.early_stop_patience < 1:
            raise ConfigurationError("patience values must be >= 1")
        return out


@dataclass
class TrainState:
    epoch: int = 0
    best_val_ssim: float = -math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    plateau_counter: int = 0
    lr: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(**d)


def _epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0x0E9]).permutation(n)


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def train(model, task, cfg: TrainConfig, out_dir=None, resume_from=None):
    """Run the training loop; returns (model-with-best-params, state, log).

    ``task`` supplies the data side: ``n_train``, ``batch_loss(model,
    indices, epoch)`` returning a scalar loss tensor, and
    ``validation_ssim(model)`` returning the mean validation SSIM. If
    ``out_dir`` is set, checkpoints (``best/``, ``last/``) and a
    ``log.jsonl`` are written there.
    """
    cfg = cfg.resolved()
    out_dir = Path(out_dir) if out_dir is not None else None
    if task.n_train == 0:
        raise ConfigurationError("training dataset is empty")

    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr_init, betas=ADAM_BETAS, eps=ADAM_EPS
    )
    state = TrainState(lr=cfg.lr_init)
    best_params = copy.deepcopy(model.state_dict())
    log: list[dict] = []

    if resume_from is not None:
        _, aux = checkpoint_load(resume_from, model=model, optimizer=optimizer)
        state = TrainState.from_dict(aux["train_state"])
        best_params = aux["best_params"] or best_params
        _set_lr(optimizer, state.lr)
        log = list(aux.get("log", []))

    log_path = out_dir / "log.jsonl" if out_dir else None
    if log_path:
        out_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = state.epoch
    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        order = _epoch_permutation(task.n_train, cfg.seed, epoch)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            optimizer.zero_grad()
            loss = task.batch_loss(model, idx, epoch)
            if not torch.isfinite(loss):
                if out_dir:
                    checkpoint_save(out_dir / "diagnostic", model, cfg_model=_model_config(model),
                                    train_state=state, optimizer=optimizer, train_cfg=cfg,
                                    best_params=best_params, log=log)
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}"
                    + (f"; diagnostic snapshot in {out_dir / 'diagnostic'}" if out_dir else "")
                )
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        model.eval()
        with torch.no_grad():
            val_ssim = float(task.validation_ssim(model))

        state.epoch = epoch + 1
        if val_ssim > state.best_val_ssim + cfg.improvement_tol:
            state.best_val_ssim = val_ssim
            state.best_epoch = epoch
            state.epochs_since_improvement = 0
            state.plateau_counter = 0
            best_params = copy.deepcopy(model.state_dict())
        else:
            state.epochs_since_improvement += 1
            state.plateau_counter += 1
            if state.plateau_counter >= cfg.plateau_patience:
                state.lr = max(state.lr * cfg.plateau_factor, cfg.min_lr)
                _set_lr(optimizer, state.lr)
                state.plateau_counter = 0

        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_ssim": val_ssim,
            "lr": state.lr,
            "wall_seconds": time.perf_counter() - t0,
        }
        log.append(record)
        if log_path:
            with log_path.open("a") as f:
                f.write(json.dumps(record) + "\n")
        if out_dir:
            checkpoint_save(out_dir / "last", model, cfg_model=_model_config(model),
                            train_state=state, optimizer=optimizer, train_cfg=cfg,
                            best_params=best_params, log=log)

        if state.epochs_since_improvement >= cfg.early_stop_patience:
            break

    model.load_state_dict(best_params)
    if out_dir:
        checkpoint_save(out_dir / "best", model, cfg_model=_model_config(model),
                        train_state=state, train_cfg=cfg, log=log)
    return model, state, log


_MODEL_CLASSES = {"varnet": (VarNet, VarNetConfig), "enhancer": (Enhancer, EnhancerConfig)}


def _model_config(model) -> tuple[str, dict]:
    for name, (cls, _) in _MODEL_CLASSES.items():
        if isinstance(model, cls):
            return name, model.cfg.to_dict()
    raise ConfigurationError(f"unknown model type {type(model).__name__}")


def _state_to_arrays(state_dict, prefix: str) -> dict:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in state_dict.items()}


def checkpoint_save(path, model, cfg_model=None, train_state: TrainState | None = None,
                    optimizer=None, train_cfg: TrainConfig | None = None,
                    best_params=None, log=None) -> Path:
    """Write a checkpoint directory: config.json + params.npz (checksummed).

    The tensor archive is flat, keyed by canonical parameter names
    (``model/<name>``, optional ``best/<name>`` and ``optim/<i>/<slot>``).
    Writes are atomic (temp file + rename).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model_name, model_cfg = cfg_model or _model_config(model)

    arrays = _state_to_arrays(model.state_dict(), "model")
    if best_params is not None:
        arrays.update(_state_to_arrays(best_params, "best"))
    if optimizer is not None:
        for i, p in enumerate(optimizer.param_groups[0]["params"]):
            opt_state = optimizer.state.get(p, {})
            for slot, value in opt_state.items():
                arrays[f"optim/{i}/{slot}"] = (
                    value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
                )

    tmp = path / "params.npz.tmp"
    final = path / "params.npz"
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, final)
    digest = hashlib.sha256(final.read_bytes()).hexdigest()

    config = {
        "model_class": model_name,
        "model_config": model_cfg,
        "tensors_sha256": digest,
        "train_state": train_state.to_dict() if train_state else None,
        "train_config": asdict(train_cfg) if train_cfg else None,
        "log": log or [],
    }
    tmp_cfg = path / "config.json.tmp"
    tmp_cfg.write_text(json.dumps(config, indent=2))
    os.replace(tmp_cfg, path / "config.json")
    return path


def checkpoint_load(path, model=None, optimizer=None):
    """Load a checkpoint directory; returns (model, aux).

    Verifies the tensor-archive checksum, rebuilds the model from its config
    snapshot when ``model`` is None, and validates tensor shapes against the
    model. ``aux`` carries train_state/train_config/log/best_params.
    """
    path = Path(path)
    cfg_path = path / "config.json"
    npz_path = path / "params.npz"
    if not cfg_path.exists() or not npz_path.exists():
        raise CheckpointError(f"{path} is not a checkpoint directory")
    config = json.loads(cfg_path.read_text())
    digest = hashlib.sha256(npz_path.read_bytes()).hexdigest()
    if digest != config.get("tensors_sha256"):
        raise CheckpointError(f"{path}: tensor archive checksum mismatch (tampered or corrupt)")

    with np.load(npz_path) as archive:
        arrays = {k: archive[k] for k in archive.files}
    if model is None:
        model_class = config.get("model_class")
        if model_class not in _MODEL_CLASSES:
            raise CheckpointError(f"{path}: unknown model class {model_class!r}")
        cls, cfg_cls = _MODEL_CLASSES[model_class]
        model = cls(cfg_cls(**config["model_config"]))

    def collect(prefix):
        out = {}
        for key, value in arrays.items():
            if key.startswith(prefix + "/"):
                out[key[len(prefix) + 1 :]] = torch.as_tensor(value)
        return out

    model_params = collect("model")
    expected = model.state_dict()
    if set(model_params) != set(expected):
        raise CheckpointError(
            f"{path}: parameter names do not match the config-built model"
        )
    for name, tensor in model_params.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: archive {tuple(tensor.shape)} "
                f"vs model {tuple(expected[name].shape)}"
            )
    model.load_state_dict(model_params)

    if optimizer is not None:
        for i, p in enumerate(optimizer.param_groups[0]["params"]):
            slots = {}
            for key, value in arrays.items():
                parts = key.split("/")
                if len(parts) == 3 and parts[0] == "optim" and int(parts[1]) == i:
                    slots[parts[2]] = torch.as_tensor(value)
            if slots:
                optimizer.state[p] = slots

    best = collect("best") or None
    aux = {
        "train_state": config.get("train_state"),
        "train_config": config.get("train_config"),
        "log": config.get("log", []),
        "best_params": best,
        "model_class": config.get("model_class"),
        "model_config": config.get("model_config"),
    }
    return model, aux
