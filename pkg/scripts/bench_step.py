"""Time one desk-scale training step to size the end-to-end run."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from slotdiff.autoencoder import AEConfig, build_codec
from slotdiff.data import SceneSpec, generate_scene
from slotdiff.denoiser import DenoiserConfig, DenoiserUNet
from slotdiff.encoder import EncoderConfig, ObjectEncoder
from slotdiff.schedule import linear_schedule
from slotdiff.training import TrainConfig, Trainer


def bench(base_channels, ff_mult, res_blocks, batch, iters=6):
    rng = np.random.default_rng(0)
    enc_cfg = EncoderConfig(image_size=64, patch_size=4, base_channels=32,
                            channel_mults=(1, 2, 4), d_input=64, heads=4,
                            n_slots=4, slot_dim=64, iterations=3,
                            mlp_hidden=128)
    den_cfg = DenoiserConfig(in_channels=4, base_channels=base_channels,
                             channel_mults=(1, 2, 4), attention_factors=(1, 2, 4),
                             heads=4, res_blocks=res_blocks, time_dim=256,
                             slot_dim=64, ff_mult=ff_mult, latent_size=16)
    encoder = ObjectEncoder(enc_cfg, rng)
    denoiser = DenoiserUNet(den_cfg, rng)
    codec = build_codec(AEConfig(mode="conv", latent_channels=4,
                                 downsample_factor=4), rng)
    codec.frozen = True
    spec = SceneSpec(seed=1, image_size=64, max_objects=3)
    images = np.round(np.stack([generate_scene(spec, i).image
                                for i in range(batch * 2)]) * 255).astype(np.uint8)
    cfg = TrainConfig(batch_size=batch)
    trainer = Trainer(encoder, denoiser, codec, schedule=linear_schedule(),
                      images_u8=images, cfg=cfg, rng=np.random.default_rng(0))
    n_enc = sum(p.tensor.data.size for p in encoder.parameters())
    n_den = sum(p.tensor.data.size for p in denoiser.parameters())
    trainer.step()  # warm up caches
    t0 = time.perf_counter()
    for _ in range(iters):
        trainer.step()
    dt = (time.perf_counter() - t0) / iters
    print(f"base={base_channels} ff={ff_mult} rb={res_blocks} batch={batch}: "
          f"{dt:.3f}s/step  enc={n_enc/1e6:.2f}M den={n_den/1e6:.2f}M")
    return dt


if __name__ == "__main__":
    bench(64, 4, 1, 16)
    bench(64, 2, 1, 16)
    bench(48, 2, 1, 16)
    bench(48, 2, 1, 8)
