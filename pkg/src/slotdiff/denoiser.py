"""Slot-conditioned UNet that predicts the noise added to a latent grid.

Each resolution site runs a two-block transformer after its conv block:
self-attention plus feed-forward, then cross-attention (queries from grid
cells, keys/values from the slots) plus feed-forward. A learned positional
embedding is added to the flattened cells at every site; slots carry no
positional information, so predictions are invariant to slot order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import Downsample, ResBlock, Upsample, flatten_hw, unflatten_hw
from .nn import (Conv2d, FeedForward, GroupNorm, LayerNorm, Linear, Module,
                 ModuleList, MultiheadAttention, Parameter, normal_init,
                 sinusoidal_embedding)
from .tensor import Tensor, concat, silu, where


@dataclass(frozen=True)
class DenoiserConfig:
    in_channels: int = 4
    base_channels: int = 64
    channel_mults: tuple[int, ...] = (1, 2, 4)
    attention_factors: tuple[int, ...] = (1, 2, 4)  # downsample factors with transformers
    heads: int = 4
    res_blocks: int = 1
    time_dim: int = 256
    slot_dim: int = 64
    ff_mult: int = 4
    mid_attention: bool = True
    latent_size: int = 16

    def __post_init__(self):
        for m in self.channel_mults:
            ch = self.base_channels * m
            if ch % self.heads:
                raise ValueError(f"channels {ch} not divisible by heads {self.heads}")
        if self.latent_size % (1 << (len(self.channel_mults) - 1)):
            raise ValueError("latent grid too small for the channel ladder")


class TimeEmbedding(Module):
    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.dtype = dtype
        self.fc1 = Linear(dim, dim, rng, dtype=dtype)
        self.fc2 = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, t: np.ndarray) -> Tensor:
        emb = Tensor(sinusoidal_embedding(t, self.dim, dtype=self.dtype))
        return self.fc2(silu(self.fc1(emb)))


class SlotTransformer(Module):
    """Self-attention block then slot cross-attention block, pre-norm residual."""

    def __init__(self, channels: int, slot_dim: int, heads: int, cells: int,
                 rng: np.random.Generator, ff_mult: int = 4, dtype=np.float32):
        super().__init__()
        self.pos = Parameter(normal_init(rng, (1, cells, channels), dtype))
        self.ln_self = LayerNorm(channels, dtype=dtype)
        self.self_attn = MultiheadAttention(channels, heads, rng, dtype=dtype)
        self.ln_ff1 = LayerNorm(channels, dtype=dtype)
        self.ff1 = FeedForward(channels, ff_mult * channels, rng, dtype=dtype)
        self.ln_cross = LayerNorm(channels, dtype=dtype)
        self.cross_attn = MultiheadAttention(channels, heads, rng,
                                             kv_dim=slot_dim, dtype=dtype)
        self.ln_ff2 = LayerNorm(channels, dtype=dtype)
        self.ff2 = FeedForward(channels, ff_mult * channels, rng, dtype=dtype)

    def forward(self, x: Tensor, slots: Tensor) -> Tensor:
        B, C, H, W = x.shape
        if H * W != self.pos.tensor.shape[1]:
            raise ValueError(f"transformer built for {self.pos.tensor.shape[1]} "
                             f"cells, got {H * W}")
        seq = flatten_hw(x) + self.pos.tensor
        seq = seq + self.self_attn(self.ln_self(seq))
        seq = seq + self.ff1(self.ln_ff1(seq))
        seq = seq + self.cross_attn(self.ln_cross(seq), slots)
        seq = seq + self.ff2(self.ln_ff2(seq))
        return unflatten_hw(seq, H, W)


class DenoiserUNet(Module):
    def __init__(self, cfg: DenoiserConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mults]
        levels = len(chans)
        sizes = [cfg.latent_size >> i for i in range(levels)]
        self.time = TimeEmbedding(cfg.time_dim, rng, dtype=dtype)
        self.null_slots = Parameter(normal_init(rng, (1, 1, cfg.slot_dim), dtype))
        self.conv_in = Conv2d(cfg.in_channels, chans[0], 3, rng, padding=1,
                              dtype=dtype)

        def transformer(level: int) -> SlotTransformer:
            return SlotTransformer(chans[level], cfg.slot_dim, cfg.heads,
                                   sizes[level] ** 2, rng, cfg.ff_mult, dtype=dtype)

        def wants_attn(level: int) -> bool:
            return (1 << level) in cfg.attention_factors

        self.down_res = ModuleList()
        self.down_attn = ModuleList()
        self.downs = ModuleList()
        skip_chans = [chans[0]]
        ch = chans[0]
        for i in range(levels):
            for _ in range(cfg.res_blocks):
                self.down_res.append(ResBlock(ch, chans[i], rng,
                                              time_dim=cfg.time_dim, dtype=dtype))
                self.down_attn.append(transformer(i) if wants_attn(i) else None)
                ch = chans[i]
                skip_chans.append(ch)
            if i + 1 < levels:
                self.downs.append(Downsample(ch, chans[i + 1], rng, dtype=dtype))
                ch = chans[i + 1]
                skip_chans.append(ch)

        self.mid1 = ResBlock(ch, ch, rng, time_dim=cfg.time_dim, dtype=dtype)
        self.mid_attn = transformer(levels - 1) if cfg.mid_attention else None
        self.mid2 = ResBlock(ch, ch, rng, time_dim=cfg.time_dim, dtype=dtype)

        self.up_res = ModuleList()
        self.up_attn = ModuleList()
        self.ups = ModuleList()
        for i in range(levels - 1, -1, -1):
            for _ in range(cfg.res_blocks + 1):
                self.up_res.append(ResBlock(ch + skip_chans.pop(), chans[i], rng,
                                            time_dim=cfg.time_dim, dtype=dtype))
                self.up_attn.append(transformer(i) if wants_attn(i) else None)
                ch = chans[i]
            if i:
                self.ups.append(Upsample(ch, chans[i - 1], rng, dtype=dtype))
                ch = chans[i - 1]

        self.out_norm = GroupNorm(8, ch, dtype=dtype)
        self.out_conv = Conv2d(ch, cfg.in_channels, 3, rng, padding=1, dtype=dtype)
        # zero-init the head so the untrained net predicts zero noise
        self.out_conv.w.tensor.data = np.zeros_like(self.out_conv.w.data)

    def forward(self, z_t: Tensor, t: np.ndarray, slots: Tensor) -> Tensor:
        cfg = self.cfg
        B = z_t.shape[0]
        if z_t.shape[1] != cfg.in_channels:
            raise ValueError(f"expected {cfg.in_channels} latent channels, "
                             f"got {z_t.shape[1]}")
        if slots.ndim != 3 or slots.shape[0] != B or slots.shape[2] != cfg.slot_dim:
            raise ValueError(f"slots must be [B, N, {cfg.slot_dim}], got {slots.shape}")
        t = np.broadcast_to(np.asarray(t).reshape(-1), (B,)) \
            if np.asarray(t).size in (1, B) else None
        if t is None:
            raise ValueError("t must be a scalar or one value per batch entry")
        temb = self.time(t)

        h = self.conv_in(z_t)
        skips = [h]
        res_idx = 0
        down_idx = 0
        levels = len(cfg.channel_mults)
        for i in range(levels):
            for _ in range(cfg.res_blocks):
                h = self.down_res[res_idx](h, temb)
                if self.down_attn[res_idx] is not None:
                    h = self.down_attn[res_idx](h, slots)
                res_idx += 1
                skips.append(h)
            if i + 1 < levels:
                h = self.downs[down_idx](h)
                down_idx += 1
                skips.append(h)

        h = self.mid1(h, temb)
        if self.mid_attn is not None:
            h = self.mid_attn(h, slots)
        h = self.mid2(h, temb)

        res_idx = 0
        up_idx = 0
        for i in range(levels - 1, -1, -1):
            for _ in range(cfg.res_blocks + 1):
                h = self.up_res[res_idx](concat([h, skips.pop()], axis=1), temb)
                if self.up_attn[res_idx] is not None:
                    h = self.up_attn[res_idx](h, slots)
                res_idx += 1
            if i:
                h = self.ups[up_idx](h)
                up_idx += 1

        return self.out_conv(silu(self.out_norm(h)))

    def predict_noise(self, z_t: np.ndarray | Tensor, t,
                      slots: np.ndarray | Tensor) -> Tensor:
        z = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        s = slots if isinstance(slots, Tensor) else Tensor(slots)
        return self(z, t, s)

    def null_prompt(self, batch: int, n_slots: int) -> Tensor:
        """The learned unconditional prompt, tiled to [batch, n_slots, D]."""
        null = self.null_slots.tensor
        tile = concat([null] * n_slots, axis=1) if n_slots > 1 else null
        return concat([tile] * batch, axis=0) if batch > 1 else tile

    def mix_null(self, slots: Tensor, drop: np.ndarray) -> Tensor:
        """Replace slots of masked batch entries with the null prompt."""
        B, N, _ = slots.shape
        mask = np.asarray(drop, dtype=bool).reshape(B, 1, 1)
        return where(mask, self.null_prompt(B, N), slots)

    def cfg_predict(self, z_t: np.ndarray | Tensor, t,
                    slots: np.ndarray | Tensor, weight: float = 1.3) -> Tensor:
        """Classifier-free guidance on the slot prompt.

        weight 1 is exactly the conditional prediction (the null branch is
        skipped); weight 0 is the unconditional one; negative weights are
        rejected.
        """
        if weight < 0.0:
            raise ValueError(f"guidance weight must be non-negative, got {weight}")
        s = slots if isinstance(slots, Tensor) else Tensor(slots)
        if weight == 1.0:
            return self.predict_noise(z_t, t, s)
        null = self.null_prompt(s.shape[0], s.shape[1])
        uncond = self.predict_noise(z_t, t, null)
        if weight == 0.0:
            return uncond
        cond = self.predict_noise(z_t, t, s)
        return uncond + float(weight) * (cond - uncond)
