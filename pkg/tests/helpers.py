"""Shared numeric oracles: finite-difference gradients and loop-based kernels."""

from __future__ import annotations

import numpy as np

from slotdiff.tensor import Tensor


def numerical_grad(f, arrays: list[np.ndarray], wrt: int, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f with respect to arrays[wrt]."""
    work = [a.copy() for a in arrays]
    x = work[wrt]
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(*work)
        flat[i] = orig - h
        fm = f(*work)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def gradcheck(fn, arrays: list[np.ndarray], h: float = 1e-5, rtol: float = 1e-4,
              floor: float = 1e-6) -> None:
    """Compare tape gradients of a scalar-valued fn against finite differences.

    fn takes one Tensor per input array and returns a scalar Tensor. All
    arrays must be float64 for the stated tolerance to be meaningful.
    """
    for a in arrays:
        assert a.dtype == np.float64, "gradcheck needs float64 inputs"
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    assert loss.size == 1, "gradcheck fn must return a scalar"
    loss.backward()

    def scalar(*work):
        return float(fn(*[Tensor(w) for w in work]).data)

    for i, t in enumerate(tensors):
        assert t.grad is not None, f"input {i} received no gradient"
        num = numerical_grad(scalar, arrays, i, h=h)
        err = np.max(np.abs(t.grad - num))
        scale = max(np.max(np.abs(num)), floor)
        assert err / scale <= rtol, (
            f"input {i}: rel grad error {err / scale:.3e} exceeds {rtol:.1e}")


def conv2d_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                 stride: int, padding: int) -> np.ndarray:
    """Direct quadruple-loop convolution, the slow reference."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo), dtype=x.dtype)
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    patch = x[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * w[o])
    if b is not None:
        out += b.reshape(1, O, 1, 1)
    return out


def random_projection_loss(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Project an op output to a scalar with fixed random weights so sign
    errors cannot cancel the way a plain sum would allow."""
    w = rng.standard_normal(out.shape).astype(out.dtype)
    return (out * Tensor(w)).sum()
