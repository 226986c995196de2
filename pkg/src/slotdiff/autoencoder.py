"""Image-to-latent codecs: a small conv autoencoder and an identity bypass.

The conv codec compresses 64x64 RGB to a 4-channel latent grid at 1/4
resolution and is frozen after pretraining; downstream diffusion sees
latents multiplied by a fixed scaling constant. The identity codec keeps
pixels as the "latent" (scale 1.0) so diffusion-layer tests can run without
any trained weights and round trips stay bit-exact.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Module, ModuleList
from .optim import Adam
from .tensor import Tensor, mse, no_grad, sigmoid, silu, upsample_nearest2d

LATENT_SCALE = 0.18215


@dataclass(frozen=True)
class AEConfig:
    mode: str = "conv"  # "conv" or "identity"
    in_channels: int = 3
    latent_channels: int = 4
    base_channels: int = 32
    downsample_factor: int = 4
    scale: float = LATENT_SCALE
    kl_weight: float = 0.0

    def __post_init__(self):
        if self.mode not in ("conv", "identity"):
            raise ValueError(f"unknown autoencoder mode {self.mode!r}")
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)):
            raise ValueError(f"downsample_factor must be a power of two, got {f}")


@dataclass
class LatentImage:
    """Latent grid [B, C, h, w] with the diffusion scaling already applied."""
    values: np.ndarray
    scale: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


class IdentityCodec(Module):
    """Pixels pass through untouched; latent channels equal image channels."""

    def __init__(self, cfg: AEConfig):
        super().__init__()
        self.cfg = cfg
        self.latent_channels = cfg.in_channels
        self.downsample_factor = 1
        self.scale = 1.0
        self.frozen = True

    def encode(self, images: np.ndarray) -> LatentImage:
        return LatentImage(np.asarray(images).copy(), self.scale)

    def decode(self, latents: LatentImage) -> np.ndarray:
        values = np.asarray(latents.values)
        if values.shape[1] != self.latent_channels:
            raise ValueError(f"expected {self.latent_channels} latent channels, "
                             f"got {values.shape[1]}")
        return values.copy()


class ConvCodec(Module):
    """Strided-conv encoder with a mean/logvar head and a mirrored decoder."""

    def __init__(self, cfg: AEConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.latent_channels = cfg.latent_channels
        self.downsample_factor = cfg.downsample_factor
        self.scale = cfg.scale
        self.frozen = False
        base = cfg.base_channels
        n_down = int(math.log2(cfg.downsample_factor))
        self.enc_in = Conv2d(cfg.in_channels, base, 3, rng, padding=1, dtype=dtype)
        self.enc_downs = ModuleList()
        ch = base
        for _ in range(n_down):
            nxt = min(ch * 2, 2 * base)
            self.enc_downs.append(Conv2d(ch, nxt, 3, rng, stride=2, padding=1,
                                         dtype=dtype))
            ch = nxt
        self.enc_out = Conv2d(ch, 2 * cfg.latent_channels, 3, rng, padding=1,
                              dtype=dtype)
        self.dec_in = Conv2d(cfg.latent_channels, ch, 3, rng, padding=1, dtype=dtype)
        self.dec_ups = ModuleList()
        for i in range(n_down):
            nxt = base if i == n_down - 1 else ch
            self.dec_ups.append(Conv2d(ch, nxt, 3, rng, padding=1, dtype=dtype))
            ch = nxt
        self.dec_out = Conv2d(ch, cfg.in_channels, 3, rng, padding=1, dtype=dtype)

    def encode_stats(self, images: Tensor) -> tuple[Tensor, Tensor]:
        h = silu(self.enc_in(images))
        for down in self.enc_downs:
            h = silu(down(h))
        stats = self.enc_out(h)
        c = self.cfg.latent_channels
        return stats[:, :c], stats[:, c:]

    def decode_tensor(self, z: Tensor) -> Tensor:
        h = silu(self.dec_in(z))
        for up in self.dec_ups:
            h = silu(up(upsample_nearest2d(h, 2)))
        return sigmoid(self.dec_out(h))

    def encode(self, images: np.ndarray) -> LatentImage:
        """Deterministic latents: posterior mean times the scaling constant."""
        with no_grad():
            mean, _ = self.encode_stats(Tensor(np.asarray(images)))
        return LatentImage(mean.data * np.asarray(self.scale, mean.dtype),
                           self.scale)

    def decode(self, latents: LatentImage) -> np.ndarray:
        values = np.asarray(latents.values)
        if values.shape[1] != self.latent_channels:
            raise ValueError(f"expected {self.latent_channels} latent channels, "
                             f"got {values.shape[1]}")
        z = values / np.asarray(latents.scale, values.dtype)
        with no_grad():
            return self.decode_tensor(Tensor(z)).data


def build_codec(cfg: AEConfig, rng: np.random.Generator | None = None,
                dtype=np.float32):
    if cfg.mode == "identity":
        return IdentityCodec(cfg)
    if rng is None:
        raise ValueError("conv codec needs an rng for weight init")
    return ConvCodec(cfg, rng, dtype=dtype)


def reconstruction_loss(codec: ConvCodec, images: Tensor) -> Tensor:
    """MSE plus (optionally) a tiny KL pull toward a unit Gaussian posterior."""
    mean, logvar = codec.encode_stats(images)
    recon = codec.decode_tensor(mean)
    loss = mse(recon, images)
    kl_w = codec.cfg.kl_weight
    if kl_w > 0.0:
        kl = 0.5 * (mean * mean + logvar.exp() - 1.0 - logvar).mean()
        loss = loss + kl_w * kl
    return loss


def pretrain(codec: ConvCodec, images_u8: np.ndarray, rng: np.random.Generator,
             steps: int = 600, batch: int = 16, lr: float = 1e-3,
             crop: int = 32, calibrate: bool = True) -> dict:
    """Train on random crops (conv weights are resolution-agnostic), then
    freeze. Returns a report with the full-image PSNR.

    With calibrate on, the latent scaling is reset to 1/std of the raw
    latents so downstream diffusion sees unit-variance signal; the config
    constant is only right for the codec it was measured on, and an
    undersized scale buries the signal in the forward noise.
    """
    if codec.frozen:
        raise RuntimeError("codec is already frozen")
    N, H, W, _ = images_u8.shape
    crop = min(crop, H)
    opt = Adam(codec.parameters(), lr=lr)
    last = float("nan")
    for _ in range(steps):
        idx = rng.integers(0, N, size=batch)
        ys = rng.integers(0, H - crop + 1, size=batch)
        xs = rng.integers(0, W - crop + 1, size=batch)
        patch = np.stack([images_u8[i, y:y + crop, x:x + crop]
                          for i, y, x in zip(idx, ys, xs)])
        x = Tensor(patch.astype(np.float32).transpose(0, 3, 1, 2) / 255.0)
        opt.zero_grad()
        loss = reconstruction_loss(codec, x)
        loss.backward()
        opt.step()
        last = loss.item()
    codec.freeze()
    codec.frozen = True
    if calibrate:
        sample = images_u8[: min(256, N)]
        chunks = []
        with no_grad():
            for lo in range(0, len(sample), 64):
                x = Tensor(sample[lo:lo + 64].astype(np.float32)
                           .transpose(0, 3, 1, 2) / 255.0)
                chunks.append(codec.encode_stats(x)[0].data)
        codec.scale = float(1.0 / np.concatenate(chunks).std())
    eval_n = min(64, N)
    full = images_u8[:eval_n].astype(np.float32).transpose(0, 3, 1, 2) / 255.0
    recon = codec.decode(codec.encode(full))
    err = float(np.mean((recon - full) ** 2))
    psnr = float("inf") if err == 0 else -10.0 * math.log10(err)
    return {"steps": steps, "final_loss": last, "psnr": psnr, "mse": err,
            "scale": float(codec.scale)}


def param_fingerprint(module: Module) -> str:
    """Order-stable sha256 over all parameter payloads.

    A codec's latent scaling changes every latent the module emits, so it
    is part of the identity even though it is not a trained parameter.
    """
    h = hashlib.sha256()
    scale = getattr(module, "scale", None)
    if scale is not None:
        h.update(np.float64(scale).tobytes())
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.tensor.data).tobytes())
    return h.hexdigest()
