"""Dense float tensors with reverse-mode automatic differentiation on numpy."""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True
_CHECKED = False


def set_checked(enabled: bool) -> None:
    """Toggle finite-value checking on every op output."""
    global _CHECKED
    _CHECKED = bool(enabled)


def checked() -> bool:
    return _CHECKED


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (sampling, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A numpy array plus the tape bookkeeping needed for backward().

    Only floating dtypes are allowed; integer input is cast to float32.
    Gradients accumulate into .grad on every requires_grad tensor reached
    by backward() and stay until cleared by the caller.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same storage, no tape."""
        return Tensor(self.data)

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"{what}: non-finite values")
        return self

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad over the recorded tape.

        self must be a scalar (size 1). Repeated calls keep accumulating;
        clear grads between steps.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor with no recorded tape")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._bw is None:
                continue
            for p, pg in zip(node._parents, node._bw(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg

    # operators
    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], bw, op: str) -> Tensor:
    if _CHECKED and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite output")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to shape, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _from_op(a.data * b.data, (a, b), bw, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _from_op(a.data / b.data, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _from_op(a.data**p, (a,), bw, "power")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs tensors with ndim >= 2")

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _from_op(np.matmul(a.data, b.data), (a, b), bw, "matmul")


# unary

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _from_op(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def silu(a: Tensor) -> Tensor:
    s = expit(a.data)
    out = a.data * s

    def bw(g):
        return (g * (s + out * (1.0 - s)),)

    return _from_op(out, (a,), bw, "silu")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select with a constant boolean condition."""
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        ga = _unbroadcast(np.where(cond, g, 0.0), a.shape)
        gb = _unbroadcast(np.where(cond, 0.0, g), b.shape)
        return ga, gb

    return _from_op(np.where(cond, a.data, b.data), (a, b), bw, "where")


# reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    if axis is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[i] for i in axis]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return _from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw, "mean")


# shape

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        return (g.reshape(a.shape),)

    return _from_op(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _from_op(a.data.transpose(axes), (a,), bw, "transpose")


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing with scatter-style backward."""

    def bw(g):
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _from_op(a.data[key], (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _from_op(data, tuple(tensors), bw, "concat")


# neural-net kernels

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _from_op(out, (a,), bw, "softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature affine."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        red = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=red)
        dbias = g.sum(axis=red)
        return dx, dgain, dbias

    return _from_op(out, (a, gain, bias), bw, "layer_norm")


def group_norm(a: Tensor, gain: Tensor, bias: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize NCHW activations within channel groups, affine per channel."""
    B, C, H, W = a.shape
    if C % groups:
        raise ValueError(f"channels {C} not divisible by groups {groups}")
    xg = a.data.reshape(B, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = xg.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    gq = gain.data.reshape(1, C, 1, 1)
    out = xhat * gq + bias.data.reshape(1, C, 1, 1)

    def bw(g):
        dxhat = (g * gq).reshape(B, groups, -1)
        xh = xhat.reshape(B, groups, -1)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xh).mean(axis=-1, keepdims=True)
        dx = ((dxhat - m1 - xh * m2) * inv).reshape(B, C, H, W)
        dgain = (g * xhat).sum(axis=(0, 2, 3))
        dbias = g.sum(axis=(0, 2, 3))
        return dx, dgain, dbias

    return _from_op(out, (a, gain, bias), bw, "group_norm")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """NCHW convolution via im2col; weight layout [out, in, kh, kw]."""
    B, C, H, W = x.shape
    O, C2, kh, kw = w.shape
    if C != C2:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight {C2}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"conv2d output would be empty for input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                                  j:j + stride * (Wo - 1) + 1:stride]
    cols2 = cols.reshape(B, C * kh * kw, Ho * Wo)
    w2 = w.data.reshape(O, -1)
    out = np.matmul(w2, cols2).reshape(B, O, Ho, Wo)
    if b is not None:
        out += b.data.reshape(1, O, 1, 1)

    def bw(g):
        g2 = g.reshape(B, O, -1)
        dw = np.tensordot(g2, cols2, axes=([0, 2], [0, 2])).reshape(w.shape)
        dcols = np.matmul(w2.T, g2).reshape(B, C, kh, kw, Ho, Wo)
        pH, pW = H + 2 * padding, W + 2 * padding
        dxp = np.zeros((B, C, pH, pW), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                    j:j + stride * (Wo - 1) + 1:stride] += dcols[:, :, i, j]
        dx = dxp[:, :, padding:pH - padding, padding:pW - padding] if padding else dxp
        db = None if b is None else g.sum(axis=(0, 2, 3))
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(out, parents, bw, "conv2d")


def upsample_nearest2d(x: Tensor, scale: int = 2) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, scale, axis=2), scale, axis=3)

    def bw(g):
        return (g.reshape(B, C, H, scale, W, scale).sum(axis=(3, 5)),)

    return _from_op(out, (x,), bw, "upsample_nearest2d")


def gru_cell(state: Tensor, update: Tensor, w_ih: Tensor, w_hh: Tensor,
             b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """Single GRU step; gates ordered (reset, update, candidate) in the fused
    weight layout. Update gate z=0 keeps the previous state as-is."""
    D = state.shape[-1]
    if w_ih.shape[-1] != 3 * D or w_hh.shape[-1] != 3 * D:
        raise ValueError("gru_cell fused weights must have 3*state_dim columns")
    gi = matmul(update, w_ih) + b_ih
    gh = matmul(state, w_hh) + b_hh
    r = sigmoid(gi[..., :D] + gh[..., :D])
    z = sigmoid(gi[..., D:2 * D] + gh[..., D:2 * D])
    n = tanh(gi[..., 2 * D:] + r * gh[..., 2 * D:])
    return (1.0 - z) * state + z * n


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    N, C = logits.shape
    if labels.shape != (N,):
        raise ValueError(f"labels shape {labels.shape} does not match logits rows {N}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    probs = e / e.sum(axis=1, keepdims=True)
    nll = -np.log(probs[np.arange(N), labels])

    def bw(g):
        d = probs.copy()
        d[np.arange(N), labels] -= 1.0
        return (g * d / N,)

    return _from_op(np.asarray(nll.mean(), dtype=z.dtype), (logits,), bw, "cross_entropy")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    d = a - b
    return tmean(d * d)
