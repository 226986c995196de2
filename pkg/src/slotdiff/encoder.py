"""Object encoder: a patchifying UNet backbone feeding slot attention.

The backbone turns an image into a flattened feature grid with an additive
learned positional embedding. Slot attention then competes N slot vectors
over the grid cells; the softmax is taken across slots so cells are claimed,
and each slot's readout renormalizes its row to a weighted mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import Downsample, ResBlock, SelfAttention2d, Upsample, flatten_hw
from .nn import (Conv2d, GRUCell, LayerNorm, Linear, Module, ModuleList,
                 Parameter, normal_init)
from .tensor import Tensor, concat, matmul, reshape, silu, softmax, transpose


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    in_channels: int = 3
    patch_size: int = 4
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    d_input: int = 64
    heads: int = 4
    mid_attention: bool = True
    positional: bool = True
    n_slots: int = 4
    slot_dim: int = 64
    iterations: int = 3
    mlp_hidden: int = 128
    learned_slot_init: bool = True
    slot_mlp: bool = True

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("patch_size must divide image_size")
        grid = self.image_size // self.patch_size
        if grid % (1 << (len(self.channel_mults) - 1)):
            raise ValueError("feature grid too small for the channel ladder")
        if self.iterations < 1 or self.n_slots < 1:
            raise ValueError("need at least one slot and one iteration")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size


@dataclass
class FeatureGrid:
    features: Tensor  # [B, M, d_input]
    grid: tuple[int, int]

    @property
    def cells(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class EncodeResult:
    slots: Tensor        # [B, N, slot_dim], final iteration
    attention: Tensor    # [B, N, M] softmax over slots (columns sum to 1)
    renormalized: Tensor  # [B, N, M] rows sum to 1, the readout weights
    grid: tuple[int, int]


class BackboneUNet(Module):
    """Patchify then run a small symmetric UNet at the feature-grid scale."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mults]
        self.stem = Conv2d(cfg.in_channels, chans[0], cfg.patch_size, rng,
                           stride=cfg.patch_size, dtype=dtype)
        self.down_blocks = ModuleList()
        self.downs = ModuleList()
        for i, ch in enumerate(chans):
            self.down_blocks.append(ResBlock(ch, ch, rng, dtype=dtype))
            if i + 1 < len(chans):
                self.downs.append(Downsample(ch, chans[i + 1], rng, dtype=dtype))
        self.mid1 = ResBlock(chans[-1], chans[-1], rng, dtype=dtype)
        self.mid_attn = (SelfAttention2d(chans[-1], cfg.heads, rng, dtype=dtype)
                         if cfg.mid_attention else None)
        self.mid2 = ResBlock(chans[-1], chans[-1], rng, dtype=dtype)
        self.ups = ModuleList()
        self.up_blocks = ModuleList()
        for i in range(len(chans) - 1, 0, -1):
            self.ups.append(Upsample(chans[i], chans[i - 1], rng, dtype=dtype))
            self.up_blocks.append(
                ResBlock(2 * chans[i - 1], chans[i - 1], rng, dtype=dtype))
        self.head = Conv2d(chans[0], cfg.d_input, 1, rng, dtype=dtype)
        g = cfg.grid_size
        self.pos = Parameter(normal_init(rng, (1, cfg.d_input, g, g), dtype)) \
            if cfg.positional else None

    def forward(self, images: Tensor) -> FeatureGrid:
        if images.ndim != 4 or images.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected [B, {self.cfg.in_channels}, H, W] input, "
                             f"got {images.shape}")
        h = self.stem(images)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h)
            if i < len(self.downs):
                skips.append(h)
                h = self.downs[i](h)
        h = self.mid1(h)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        h = self.mid2(h)
        for up, block in zip(self.ups, self.up_blocks):
            h = up(h)
            h = block(concat([h, skips.pop()], axis=1))
        h = self.head(h)
        if self.pos is not None:
            h = h + self.pos.tensor
        B, C, H, W = h.shape
        return FeatureGrid(flatten_hw(h), (H, W))


class SlotAttention(Module):
    """Iterative slot refinement with a GRU update and residual MLP."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float32, eps: float = 1e-8):
        super().__init__()
        self.cfg = cfg
        self.eps = eps
        d = cfg.slot_dim
        self.mu = Parameter(normal_init(rng, (1, 1, d), dtype))
        self.log_sigma = Parameter(np.zeros((1, 1, d), dtype=dtype))
        self.norm_input = LayerNorm(cfg.d_input, dtype=dtype)
        self.norm_slots = LayerNorm(d, dtype=dtype)
        self.norm_mlp = LayerNorm(d, dtype=dtype)
        self.to_q = Linear(d, d, rng, bias=False, dtype=dtype)
        self.to_k = Linear(cfg.d_input, d, rng, bias=False, dtype=dtype)
        self.to_v = Linear(cfg.d_input, d, rng, bias=False, dtype=dtype)
        self.gru = GRUCell(d, d, rng, dtype=dtype)
        self.mlp_fc1 = Linear(d, cfg.mlp_hidden, rng, dtype=dtype)
        self.mlp_fc2 = Linear(cfg.mlp_hidden, d, rng, dtype=dtype)

    def initial_slots(self, batch: int, rng: np.random.Generator,
                      n_slots: int | None = None) -> np.ndarray:
        n = self.cfg.n_slots if n_slots is None else n_slots
        d = self.cfg.slot_dim
        dtype = self.mu.tensor.dtype
        noise = rng.standard_normal((batch, n, d)).astype(dtype)
        if not self.cfg.learned_slot_init:
            return noise
        return self.mu.data + np.exp(self.log_sigma.data) * noise

    def forward(self, grid: FeatureGrid, slots_init: np.ndarray | Tensor,
                iterations: int | None = None) -> EncodeResult:
        iterations = self.cfg.iterations if iterations is None else iterations
        if grid.features.shape[-1] != self.cfg.d_input:
            raise ValueError(f"feature dim {grid.features.shape[-1]} does not "
                             f"match configured d_input {self.cfg.d_input}")
        feats = self.norm_input(grid.features)
        k = self.to_k(feats)
        v = self.to_v(feats)
        slots = slots_init if isinstance(slots_init, Tensor) else Tensor(slots_init)
        B, N, D = slots.shape
        scale = 1.0 / math.sqrt(D)
        attn = renorm = None
        for _ in range(iterations):
            q = self.to_q(self.norm_slots(slots))
            logits = matmul(q, transpose(k, (0, 2, 1))) * scale  # [B, N, M]
            attn = softmax(logits, axis=1)  # slots compete per cell
            renorm = attn / (attn.sum(axis=2, keepdims=True) + self.eps)
            updates = matmul(renorm, v)
            flat = self.gru(reshape(slots, (B * N, D)),
                            reshape(updates, (B * N, D)))
            slots = reshape(flat, (B, N, D))
            if self.cfg.slot_mlp:
                slots = slots + self.mlp_fc2(silu(self.mlp_fc1(self.norm_mlp(slots))))
        return EncodeResult(slots, attn, renorm, grid.grid)


class ObjectEncoder(Module):
    """Backbone plus slot attention, the full image-to-slots path."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.backbone = BackboneUNet(cfg, rng, dtype=dtype)
        self.slot_attention = SlotAttention(cfg, rng, dtype=dtype)

    def features(self, images: np.ndarray | Tensor) -> FeatureGrid:
        x = images if isinstance(images, Tensor) else Tensor(images)
        return self.backbone(x)

    def encode(self, images: np.ndarray | Tensor, rng: np.random.Generator,
               n_slots: int | None = None) -> EncodeResult:
        grid = self.features(images)
        init = self.slot_attention.initial_slots(grid.features.shape[0], rng,
                                                 n_slots=n_slots)
        return self.slot_attention(grid, init)


def attention_masks(attention: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Per-cell slot assignment: argmax over slots, ties to the lowest index.

    attention is [B, N, M] (or [N, M]); returns [B, h, w] (or [h, w]) int32.
    """
    attention = np.asarray(attention)
    squeeze = attention.ndim == 2
    if squeeze:
        attention = attention[None]
    h, w = grid
    if attention.shape[2] != h * w:
        raise ValueError(f"attention has {attention.shape[2]} cells, grid wants {h * w}")
    labels = np.argmax(attention, axis=1).reshape(-1, h, w).astype(np.int32)
    return labels[0] if squeeze else labels


def upsample_label_map(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upsample of [..., h, w] label maps."""
    return np.repeat(np.repeat(labels, factor, axis=-2), factor, axis=-1)


def attention_label_map(attention: np.ndarray, grid: tuple[int, int],
                        factor: int) -> np.ndarray:
    """Image-resolution slot assignment from grid-resolution attention.

    Each slot's [h, w] attention map is bilinearly upsampled by factor
    before the argmax, so mask boundaries land between cell centers
    instead of snapping to cell edges. attention is [B, N, M] (or
    [N, M]); returns [B, h*factor, w*factor] (or unbatched) int32.
    """
    from scipy.ndimage import zoom

    attention = np.asarray(attention)
    squeeze = attention.ndim == 2
    if squeeze:
        attention = attention[None]
    h, w = grid
    if attention.shape[2] != h * w:
        raise ValueError(f"attention has {attention.shape[2]} cells, "
                         f"grid wants {h * w}")
    if factor == 1:
        return attention_masks(attention[0] if squeeze else attention, grid)
    maps = attention.reshape(len(attention), -1, h, w)
    labels = np.stack([
        np.argmax(zoom(m, (1, factor, factor), order=1, grid_mode=True,
                       mode="nearest"), axis=0)
        for m in maps]).astype(np.int32)
    return labels[0] if squeeze else labels
