"""Modules, parameters, and layers built on the tensor tape."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import (Tensor, concat, conv2d, group_norm, gru_cell, layer_norm,
                     matmul, reshape, silu, softmax, transpose)


class Parameter:
    """A trainable tensor plus the optimizer moment buffers that ride along."""

    __slots__ = ("tensor", "moment1", "moment2", "steps")

    def __init__(self, data: np.ndarray, requires_grad: bool = True):
        self.tensor = Tensor(data, requires_grad=requires_grad)
        self.moment1: np.ndarray | None = None
        self.moment2: np.ndarray | None = None
        self.steps = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter(shape={self.tensor.shape}, dtype={self.tensor.dtype.name})"


class Module:
    """Container tracking parameters and submodules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.tensor.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.parameters():
            p.tensor.requires_grad = False
            p.tensor.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.tensor.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.tensor.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.tensor.shape}")
            p.tensor.data = arr.astype(p.tensor.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Sequential(Module):
    def __init__(self, *modules):
        super().__init__()
        self.items = ModuleList(modules)

    def forward(self, x):
        for m in self.items:
            x = m(x)
        return x


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    """Fan-in scaled uniform, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def normal_init(rng: np.random.Generator, shape, dtype, scale: float = 0.02) -> np.ndarray:
    return (rng.standard_normal(shape) * scale).astype(dtype)


class Linear(Module):
    """y = x @ w + b with weight layout [in_features, out_features]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.w = Parameter(uniform_init(rng, in_features, (in_features, out_features), dtype))
        self.b = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w.tensor)
        if self.b is not None:
            out = out + self.b.tensor
        return out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.w = Parameter(uniform_init(
            rng, fan_in, (out_channels, in_channels, kernel_size, kernel_size), dtype))
        self.b = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w.tensor, None if self.b is None else self.b.tensor,
                      stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain.tensor, self.bias.tensor, eps=self.eps)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.groups = groups
        self.eps = eps
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return group_norm(x, self.gain.tensor, self.bias.tensor, self.groups, eps=self.eps)


class GRUCell(Module):
    """Fused-weight GRU; see tensor.gru_cell for the gate convention."""

    def __init__(self, input_dim: int, state_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.w_ih = Parameter(uniform_init(rng, input_dim, (input_dim, 3 * state_dim), dtype))
        self.w_hh = Parameter(uniform_init(rng, state_dim, (state_dim, 3 * state_dim), dtype))
        self.b_ih = Parameter(np.zeros(3 * state_dim, dtype=dtype))
        self.b_hh = Parameter(np.zeros(3 * state_dim, dtype=dtype))

    def forward(self, state: Tensor, update: Tensor) -> Tensor:
        return gru_cell(state, update, self.w_ih.tensor, self.w_hh.tensor,
                        self.b_ih.tensor, self.b_hh.tensor)


class MultiheadAttention(Module):
    """Scaled dot-product attention; queries from x, keys/values from ctx."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 kv_dim: int | None = None, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.k = Linear(kv_dim, dim, rng, bias=False, dtype=dtype)
        self.v = Linear(kv_dim, dim, rng, bias=False, dtype=dtype)
        self.out = Linear(dim, dim, rng, dtype=dtype)

    def forward(self, x: Tensor, ctx: Tensor | None = None) -> Tensor:
        ctx = x if ctx is None else ctx
        B, T, C = x.shape
        S = ctx.shape[1]
        h, d = self.heads, self.head_dim

        def split(t: Tensor, L: int) -> Tensor:
            return transpose(reshape(t, (B, L, h, d)), (0, 2, 1, 3))

        q = split(self.q(x), T)
        k = split(self.k(ctx), S)
        v = split(self.v(ctx), S)
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
        attn = softmax(scores, axis=-1)
        mixed = matmul(attn, v)
        merged = reshape(transpose(mixed, (0, 2, 1, 3)), (B, T, C))
        return self.out(merged)


class FeedForward(Module):
    """Two-layer MLP with SiLU, the transformer block workhorse."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(silu(self.fc1(x)))


def sinusoidal_embedding(t: np.ndarray, dim: int, dtype=np.float32,
                         max_period: float = 10000.0) -> np.ndarray:
    """Classic sin/cos timestep features, shape [len(t), dim]."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb.astype(dtype)
