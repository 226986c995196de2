"""End-to-end desk run: dataset, codec pretraining, joint training.

Produces runs/desk/{model.ckpt,codec.ckpt,train.log} plus the two dataset
splits under runs/desk/data. Safe to re-run: finished stages are skipped,
and an interrupted training stage resumes from its checkpoint.
"""

import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from slotdiff.autoencoder import AEConfig, build_codec, pretrain
from slotdiff.checkpoint import (load_checkpoint, pack_module, save_checkpoint,
                                 unpack_module)
from slotdiff.data import SceneDataset, SceneSpec, write_dataset
from slotdiff.denoiser import DenoiserConfig, DenoiserUNet
from slotdiff.encoder import EncoderConfig, ObjectEncoder
from slotdiff.schedule import linear_schedule
from slotdiff.training import TrainConfig, Trainer

ROOT = Path(__file__).resolve().parents[1] / "runs" / "desk"
TRAIN_STEPS = 24000

ENC_CFG = EncoderConfig(image_size=64, patch_size=4, base_channels=32,
                        channel_mults=(1, 2, 4), d_input=64, heads=4,
                        n_slots=4, slot_dim=64, iterations=3, mlp_hidden=128)
DEN_CFG = DenoiserConfig(in_channels=4, base_channels=32,
                         channel_mults=(1, 2, 4), attention_factors=(1, 2, 4),
                         heads=4, res_blocks=1, time_dim=256, slot_dim=64,
                         ff_mult=2, latent_size=16)
AE_CFG = AEConfig(mode="conv", in_channels=3, latent_channels=4,
                  base_channels=32, downsample_factor=4)
TRAIN_CFG = TrainConfig(steps=TRAIN_STEPS, batch_size=16, lr_encoder=2e-4,
                        lr_denoiser=2e-4, grad_clip=1.0, p_drop=0.1,
                        checkpoint_every=1000)


def stage_data():
    for name, seed, count in (("train", 0, 5000), ("heldout", 1, 500)):
        out = ROOT / "data" / name
        if (out / "manifest.json").exists():
            print(f"[data] {name}: exists", flush=True)
            continue
        spec = SceneSpec(seed=seed, image_size=64, max_objects=3,
                         background_mode="mixed")
        t0 = time.perf_counter()
        write_dataset(spec, count, out)
        print(f"[data] {name}: wrote {count} in {time.perf_counter()-t0:.0f}s",
              flush=True)


def stage_codec(images_u8):
    path = ROOT / "codec.ckpt"
    rng = np.random.default_rng(100)
    codec = build_codec(AE_CFG, rng)
    if path.exists():
        tensors, meta = load_checkpoint(path)
        unpack_module(codec, tensors, "codec.")
        codec.scale = meta["ae_config"]["scale"]
        codec.frozen = True
        print(f"[codec] restored (psnr {meta.get('psnr', '?')}, "
              f"scale {codec.scale:.4f})", flush=True)
        return codec
    t0 = time.perf_counter()
    report = pretrain(codec, images_u8, rng, steps=1500, batch=16, lr=1e-3)
    meta = {"psnr": report["psnr"], "mse": report["mse"],
            "ae_config": {**asdict(AE_CFG), "scale": report["scale"]}}
    save_checkpoint(path, pack_module(codec, "codec."), meta)
    print(f"[codec] pretrained in {time.perf_counter()-t0:.0f}s "
          f"psnr={report['psnr']:.2f} scale={report['scale']:.4f}", flush=True)
    return codec


def stage_train(codec, images_u8):
    rng = np.random.default_rng(200)
    encoder = ObjectEncoder(ENC_CFG, rng)
    denoiser = DenoiserUNet(DEN_CFG, rng)
    trainer = Trainer(encoder, denoiser, codec, linear_schedule(), images_u8,
                      TRAIN_CFG, rng)
    ckpt = ROOT / "model.ckpt"
    if ckpt.exists():
        meta = trainer.restore(ckpt)
        print(f"[train] resuming at step {meta['step']}", flush=True)
    log = open(ROOT / "train.log", "a", buffering=1)
    t0 = time.perf_counter()
    window = []

    def on_step(info):
        window.append(info["loss"])
        step = info["step"]
        if step % 100 == 0:
            rate = (time.perf_counter() - t0) / max(step - start, 1)
            log.write(f"{step} {np.mean(window):.4f} {info['grad_norm']:.3f} "
                      f"{rate:.2f}s\n")
            window.clear()
        if step % 4000 == 0:
            trainer.save(ROOT / f"snap_{step:06d}.ckpt")

    start = trainer.step_count
    trainer.run(TRAIN_CFG.steps, checkpoint_path=ckpt, on_step=on_step)
    log.close()
    print(f"[train] done at step {trainer.step_count}", flush=True)


def main():
    ROOT.mkdir(parents=True, exist_ok=True)
    stage_data()
    train_ds = SceneDataset.load(ROOT / "data" / "train")
    images_u8 = train_ds.load_images_u8()
    codec = stage_codec(images_u8)
    stage_train(codec, images_u8)
    (ROOT / "DONE").write_text(json.dumps({"steps": TRAIN_CFG.steps}))


if __name__ == "__main__":
    main()
