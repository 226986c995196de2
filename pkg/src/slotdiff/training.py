"""Joint training of the object encoder and the slot-conditioned denoiser.

The codec stays frozen; its fingerprint is stored with every checkpoint and
re-verified on resume. One RNG drives the whole loop in a fixed draw order
(batch indices, timesteps, noise, slot init, slot drop), and its full state
rides along in checkpoints, so a resumed 64-bit run is bitwise identical to
an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autoencoder import param_fingerprint
from .checkpoint import (load_checkpoint, pack_module, rng_from_meta, rng_meta,
                         save_checkpoint, unpack_module)
from .data import images_to_input
from .denoiser import DenoiserConfig, DenoiserUNet
from .encoder import EncoderConfig, ObjectEncoder
from .optim import Adam, clip_grad_norm
from .schedule import NoiseSchedule, forward_noise, linear_schedule
from .tensor import Tensor, mse, no_grad


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 16
    lr_encoder: float = 1e-4
    lr_denoiser: float = 1e-4
    grad_clip: float = 1.0
    p_drop: float = 0.0
    checkpoint_every: int = 1000
    precision: str = "f32"

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must be in [0, 1), got {self.p_drop}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def training_loss(images: np.ndarray, encoder: ObjectEncoder, codec,
                  denoiser: DenoiserUNet, schedule: NoiseSchedule,
                  rng: np.random.Generator, p_drop: float = 0.0,
                  z0: np.ndarray | None = None,
                  dtype=np.float32) -> tuple[Tensor, dict]:
    """Noise-prediction MSE on one batch; draw order is part of the contract."""
    if z0 is None:
        z0 = codec.encode(images).values.astype(dtype)
    B = images.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(z0.shape, dtype=dtype)
    z_t = forward_noise(z0, t, eps, schedule)
    result = encoder.encode(images.astype(dtype), rng)
    slots = result.slots
    if p_drop > 0.0:
        drop = rng.random(B) < p_drop
        if drop.any():
            slots = denoiser.mix_null(slots, drop)
    eps_hat = denoiser(Tensor(z_t), t, slots)
    loss = mse(eps_hat, Tensor(eps))
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"training loss diverged (got {loss.item()})")
    return loss, {"t": t, "slots": result.slots, "attention": result.attention}


class Trainer:
    def __init__(self, encoder: ObjectEncoder, denoiser: DenoiserUNet, codec,
                 schedule: NoiseSchedule, images_u8: np.ndarray, cfg: TrainConfig,
                 rng: np.random.Generator):
        if not getattr(codec, "frozen", False):
            raise RuntimeError("codec must be pretrained and frozen before training")
        self.encoder = encoder
        self.denoiser = denoiser
        self.codec = codec
        self.schedule = schedule
        self.images_u8 = images_u8
        self.cfg = cfg
        self.rng = rng
        self.step_count = 0
        self.loss_history: list[float] = []
        self.codec_fingerprint = param_fingerprint(codec)
        self.opt_encoder = Adam(encoder.parameters(), lr=cfg.lr_encoder)
        self.opt_denoiser = Adam(denoiser.parameters(), lr=cfg.lr_denoiser)
        self._latents = self._encode_all(images_u8)

    def _encode_all(self, images_u8: np.ndarray) -> np.ndarray:
        chunks = []
        for lo in range(0, len(images_u8), 64):
            x = images_to_input(images_u8[lo:lo + 64], dtype=self.cfg.dtype)
            chunks.append(self.codec.encode(x).values.astype(self.cfg.dtype))
        return np.concatenate(chunks)

    def step(self) -> dict:
        cfg = self.cfg
        idx = self.rng.integers(0, len(self.images_u8), size=cfg.batch_size)
        images = images_to_input(self.images_u8[idx], dtype=cfg.dtype)
        loss, _ = training_loss(images, self.encoder, self.codec, self.denoiser,
                                self.schedule, self.rng, p_drop=cfg.p_drop,
                                z0=self._latents[idx], dtype=cfg.dtype)
        self.opt_encoder.zero_grad()
        self.opt_denoiser.zero_grad()
        loss.backward()
        params = self.opt_encoder.params + self.opt_denoiser.params
        norm = clip_grad_norm(params, cfg.grad_clip)
        self.opt_encoder.step()
        self.opt_denoiser.step()
        self.step_count += 1
        value = loss.item()
        self.loss_history.append(value)
        return {"step": self.step_count, "loss": value, "grad_norm": norm}

    def save(self, path, extra_meta: dict | None = None) -> None:
        tensors = {}
        tensors.update(pack_module(self.encoder, "encoder."))
        tensors.update(pack_module(self.denoiser, "denoiser."))
        meta = {
            "step": self.step_count,
            "rng": rng_meta(self.rng),
            "train_config": asdict(self.cfg),
            "encoder_config": asdict(self.encoder.cfg),
            "denoiser_config": asdict(self.denoiser.cfg),
            "schedule": {"T": self.schedule.T,
                         "beta_start": float(self.schedule.beta[0]),
                         "beta_end": float(self.schedule.beta[-1])},
            "codec_fingerprint": self.codec_fingerprint,
            "codec_frozen": True,
            "recent_loss": self.loss_history[-100:],
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, tensors, meta)

    def restore(self, path) -> dict:
        tensors, meta = load_checkpoint(path)
        if meta["codec_fingerprint"] != param_fingerprint(self.codec):
            raise RuntimeError("checkpoint was trained against a different codec")
        unpack_module(self.encoder, tensors, "encoder.")
        unpack_module(self.denoiser, tensors, "denoiser.")
        self.rng = rng_from_meta(meta["rng"])
        self.step_count = meta["step"]
        self.loss_history = list(meta.get("recent_loss", []))
        return meta

    def run(self, steps: int, checkpoint_path=None, log_every: int = 100,
            on_step=None) -> None:
        while self.step_count < steps:
            info = self.step()
            if on_step is not None:
                on_step(info)
            if checkpoint_path and self.step_count % self.cfg.checkpoint_every == 0:
                self.save(checkpoint_path)
        if checkpoint_path:
            self.save(checkpoint_path)


def modules_from_meta(meta: dict, rng: np.random.Generator, dtype=np.float32):
    """Rebuild encoder/denoiser/schedule with the exact configs in a checkpoint."""
    enc_cfg = EncoderConfig(**{**meta["encoder_config"],
                               "channel_mults": tuple(meta["encoder_config"]["channel_mults"])})
    den_cfg = DenoiserConfig(**{
        **meta["denoiser_config"],
        "channel_mults": tuple(meta["denoiser_config"]["channel_mults"]),
        "attention_factors": tuple(meta["denoiser_config"]["attention_factors"])})
    encoder = ObjectEncoder(enc_cfg, rng, dtype=dtype)
    denoiser = DenoiserUNet(den_cfg, rng, dtype=dtype)
    s = meta["schedule"]
    schedule = linear_schedule(s["T"], s["beta_start"], s["beta_end"])
    return encoder, denoiser, schedule


def load_model(path, dtype=np.float32):
    """Encoder + denoiser + schedule, weights restored, ready for sampling."""
    tensors, meta = load_checkpoint(path)
    encoder, denoiser, schedule = modules_from_meta(
        meta, np.random.default_rng(0), dtype=dtype)
    unpack_module(encoder, tensors, "encoder.")
    unpack_module(denoiser, tensors, "denoiser.")
    return encoder, denoiser, schedule, meta
