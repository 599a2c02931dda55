"""Transformer enhancement conditioned on a registered prior scan.

The initial reconstruction is split into non-overlapping patches (ViT
style), positionally encoded, and run through attention blocks whose
attention and MLP sub-block outputs are scaled, shifted, and gated by
per-token vectors derived from the embedded prior:

    x = x + alpha1 * ((1 + dgamma1) * Attn(LN(x)) + beta1)
    x = x + alpha2 * ((1 + dgamma2) * MLP(LN(x)) + beta2)

The conditioning head is zero-initialized (effective gamma = 1, beta = 0,
gate alpha = 0), so every block is an exact no-op before training and the
network is the identity. The output residual is decoded from the token
delta (tokens_out - tokens_in) with a bias-free-at-init projection, which
keeps the identity exact while leaving gradients alive on the conditioning
pathway from the first step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, InvalidInputError

__all__ = [
    "EnhancerConfig",
    "Enhancer",
    "patchify_pixels",
    "unpatchify_pixels",
    "sinusoidal_position_encoding",
]

PRIOR_SOURCES = ("subject_prior", "atlas", "none")


@dataclass(frozen=True)
class EnhancerConfig:
    patch_size: int = 8
    embed_dim: int = 64
    n_heads: int = 4
    n_blocks: int = 6
    mlp_ratio: float = 4.0
    prior_source: str = "subject_prior"
    seed: int = 0

    def validate(self) -> "EnhancerConfig":
        if self.patch_size < 1:
            raise ConfigurationError("patch_size must be >= 1")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.n_blocks < 1 or self.mlp_ratio <= 0:
            raise ConfigurationError("n_blocks must be >= 1 and mlp_ratio > 0")
        if self.prior_source not in PRIOR_SOURCES:
            raise ConfigurationError(
                f"prior_source must be one of {PRIOR_SOURCES}, got {self.prior_source!r}"
            )
        return self

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _pad_to_multiple(img: torch.Tensor, p: int):
    h, w = img.shape[-2:]
    ph = (-h) % p
    pw = (-w) % p
    pads = (pw // 2, pw - pw // 2, ph // 2, ph - ph // 2)
    if ph or pw:
        img = torch.nn.functional.pad(img, pads)
    return img, pads


def patchify_pixels(img: torch.Tensor, patch_size: int):
    """(B, H, W) -> (B, n_tokens, P*P) raw patches, row-major within a patch.

    Pads symmetrically with zeros to a patch multiple; returns the token
    grid shape and applied padding for the inverse.
    """
    if patch_size <= 0:
        raise ConfigurationError(f"patch_size must be positive, got {patch_size}")
    img, pads = _pad_to_multiple(img, patch_size)
    b, h, w = img.shape
    rows, cols = h // patch_size, w // patch_size
    x = img.reshape(b, rows, patch_size, cols, patch_size)
    x = x.permute(0, 1, 3, 2, 4).reshape(b, rows * cols, patch_size * patch_size)
    return x, (rows, cols), pads


def unpatchify_pixels(tokens: torch.Tensor, grid: tuple[int, int], patch_size: int,
                      pads=(0, 0, 0, 0)) -> torch.Tensor:
    """Inverse of :func:`patchify_pixels`, cropping the padding back off."""
    b = tokens.shape[0]
    rows, cols = grid
    x = tokens.reshape(b, rows, cols, patch_size, patch_size)
    x = x.permute(0, 1, 3, 2, 4).reshape(b, rows * patch_size, cols * patch_size)
    left, right, top, bottom = pads
    h = rows * patch_size - top - bottom
    w = cols * patch_size - left - right
    return x[:, top : top + h, left : left + w]


def sinusoidal_position_encoding(grid: tuple[int, int], dim: int,
                                 dtype=torch.float32, device=None) -> torch.Tensor:
    """Fixed 2D sinusoidal encodings: half the channels encode the row
    index, half the column index. Returns (rows*cols, dim)."""
    if dim % 4 != 0:
        raise ConfigurationError(f"embed_dim must be a multiple of 4, got {dim}")
    rows, cols = grid
    half = dim // 2

    def encode(n, d):
        pos = torch.arange(n, dtype=torch.float64)[:, None]
        i = torch.arange(0, d, 2, dtype=torch.float64)[None, :]
        angles = pos / torch.pow(10000.0, i / d)
        enc = torch.zeros(n, d, dtype=torch.float64)
        enc[:, 0::2] = torch.sin(angles)
        enc[:, 1::2] = torch.cos(angles)
        return enc

    row_enc = encode(rows, half)  # (rows, half)
    col_enc = encode(cols, half)  # (cols, half)
    out = torch.cat(
        [
            row_enc[:, None, :].expand(rows, cols, half),
            col_enc[None, :, :].expand(rows, cols, half),
        ],
        dim=-1,
    ).reshape(rows * cols, dim)
    return out.to(dtype=dtype, device=device)


class Attention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax((q * self.scale) @ k.transpose(-2, -1), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class ConditionedBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        # learned per-block gate on top of the per-token one; both start at
        # zero so the block is an exact no-op, but the direct parameter opens
        # the gate much faster than the zero-initialized conditioning head
        self.gate_attn = nn.Parameter(torch.zeros(dim))
        self.gate_mlp = nn.Parameter(torch.zeros(dim))

    def forward(self, x, cond):
        # cond: (B, N, 6, D) -> per-token modulation of both sub-blocks
        dg1, b1, a1, dg2, b2, a2 = cond.unbind(dim=2)
        x = x + (a1 + self.gate_attn) * ((1.0 + dg1) * self.attn(self.norm1(x)) + b1)
        x = x + (a2 + self.gate_mlp) * ((1.0 + dg2) * self.mlp(self.norm2(x)) + b2)
        return x


class PriorConditioner(nn.Module):
    """Embedded prior patches -> per-block scale/shift/gate vectors.

    The content projection is randomly initialized and multiplied by
    zero-initialized per-(block, slot, channel) gate vectors. All
    conditioning values are exactly zero at init (effective gamma = 1,
    beta = 0, alpha = 0), while the gates are direct parameters with
    well-fed gradients, so prior content starts flowing after very little
    training instead of having to grow a dense zero matrix.
    """

    def __init__(self, cfg: EnhancerConfig):
        super().__init__()
        d, p = cfg.embed_dim, cfg.patch_size
        self.cfg = cfg
        # wide enough to carry the raw patch content losslessly; positional
        # encodings are concatenated so they cannot mask content channels
        width = max(2 * d, p * p)
        self.width = width
        self.embed = nn.Linear(p * p, width)
        self.null_embedding = nn.Parameter(torch.zeros(width))
        self.fuse = nn.Sequential(
            nn.Linear(2 * width, width), nn.GELU(), nn.Linear(width, width)
        )
        self.proj = nn.Linear(width, cfg.n_blocks * 6 * d)
        self.gates = nn.Parameter(torch.zeros(cfg.n_blocks, 6, d))

    def forward(self, prior_patches: torch.Tensor | None, grid: tuple[int, int]):
        n = grid[0] * grid[1]
        if self.cfg.prior_source == "none" or prior_patches is None:
            # learned null set: no positional part, identical at every position
            tokens = self.null_embedding.expand(1, n, -1)
            pos = torch.zeros_like(tokens)
        else:
            tokens = self.embed(prior_patches)
            pos = sinusoidal_position_encoding(
                grid, self.width, dtype=tokens.dtype, device=tokens.device
            ).expand(tokens.shape[0], n, -1)
        h = self.fuse(torch.cat([tokens, pos], dim=-1))
        raw = self.proj(h)
        b = raw.shape[0]
        raw = raw.reshape(b, n, self.cfg.n_blocks, 6, -1)
        return raw * self.gates


class Enhancer(nn.Module):
    def __init__(self, cfg: EnhancerConfig):
        super().__init__()
        self.cfg = cfg.validate()
        torch.manual_seed(cfg.seed)
        d, p = cfg.embed_dim, cfg.patch_size
        self.patch_embed = nn.Linear(p * p, d)
        self.conditioner = PriorConditioner(cfg)
        self.blocks = nn.ModuleList(
            ConditionedBlock(d, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.n_blocks)
        )
        self.decode = nn.Linear(d, p * p)
        nn.init.zeros_(self.decode.bias)

    def embed_prior(self, prior: torch.Tensor | None, grid: tuple[int, int],
                    pads=(0, 0, 0, 0)) -> torch.Tensor:
        """Conditioning tensor (B, n_tokens, n_blocks, 6, D) for a prior image."""
        if self.cfg.prior_source == "none" or prior is None:
            return self.conditioner(None, grid)
        patches, pgrid, _ = patchify_pixels(prior, self.cfg.patch_size)
        if pgrid != grid:
            raise InvalidInputError(
                f"prior token grid {pgrid} does not match image grid {grid}"
            )
        return self.conditioner(patches, grid)

    def forward(self, y_hat: torch.Tensor, prior: torch.Tensor | None) -> torch.Tensor:
        """(B, H, W) initial reconstruction (+ registered prior) -> (B, H, W).

        Inputs are expected max-normalized (the training-loss convention).
        """
        if y_hat.ndim != 3:
            raise InvalidInputError(f"expected (B, H, W) image, got {tuple(y_hat.shape)}")
        if prior is not None and prior.shape != y_hat.shape:
            raise InvalidInputError(
                f"prior shape {tuple(prior.shape)} != image shape {tuple(y_hat.shape)}"
            )
        if prior is None and self.cfg.prior_source != "none":
            raise InvalidInputError(
                f"prior_source={self.cfg.prior_source!r} requires a prior image"
            )
        patches, grid, pads = patchify_pixels(y_hat, self.cfg.patch_size)
        tokens_in = self.patch_embed(patches)
        tokens_in = tokens_in + sinusoidal_position_encoding(
            grid, tokens_in.shape[-1], dtype=tokens_in.dtype, device=tokens_in.device
        )
        cond = self.embed_prior(prior, grid, pads)
        x = tokens_in
        for i, block in enumerate(self.blocks):
            x = block(x, cond[:, :, i])
        residual = self.decode(x - tokens_in)
        padded, _ = _pad_to_multiple(y_hat, self.cfg.patch_size)
        out = padded + unpatchify_pixels(residual, grid, self.cfg.patch_size)
        left, right, top, bottom = pads
        h, w = y_hat.shape[-2:]
        return out[:, top : top + h, left : left + w]
