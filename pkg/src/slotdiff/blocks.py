"""Convolutional building blocks shared by the backbone and the denoiser."""

from __future__ import annotations

import numpy as np

from .nn import Conv2d, GroupNorm, Linear, Module, MultiheadAttention
from .tensor import Tensor, reshape, silu, transpose, upsample_nearest2d

_NORM_GROUPS = 8


def flatten_hw(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, H*W, C] token layout."""
    B, C, H, W = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (B, H * W, C))


def unflatten_hw(x: Tensor, h: int, w: int) -> Tensor:
    B, M, C = x.shape
    return transpose(reshape(x, (B, h, w, C)), (0, 3, 1, 2))


class ResBlock(Module):
    """Two 3x3 convs with pre-norm SiLU; optional additive time conditioning."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 time_dim: int | None = None, dtype=np.float32):
        super().__init__()
        self.norm1 = GroupNorm(_NORM_GROUPS, in_ch, dtype=dtype)
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, padding=1, dtype=dtype)
        self.temb_proj = (Linear(time_dim, out_ch, rng, dtype=dtype)
                          if time_dim else None)
        self.norm2 = GroupNorm(_NORM_GROUPS, out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1, dtype=dtype)
        self.skip = Conv2d(in_ch, out_ch, 1, rng, dtype=dtype) if in_ch != out_ch \
            else None

    def forward(self, x: Tensor, temb: Tensor | None = None) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        if temb is not None:
            if self.temb_proj is None:
                raise ValueError("ResBlock built without time conditioning")
            t = self.temb_proj(silu(temb))
            h = h + reshape(t, (t.shape[0], t.shape[1], 1, 1))
        h = self.conv2(silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class SelfAttention2d(Module):
    """Residual self-attention over flattened grid cells."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.norm = GroupNorm(_NORM_GROUPS, channels, dtype=dtype)
        self.attn = MultiheadAttention(channels, heads, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        h = flatten_hw(self.norm(x))
        return x + unflatten_hw(self.attn(h), H, W)


class Downsample(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, rng, stride=2, padding=1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


class Upsample(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, rng, padding=1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(upsample_nearest2d(x, 2))
