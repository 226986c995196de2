"""Command-line pipeline driver.

One subcommand per stage: gen-data, pretrain-ae, train, cluster, sample,
compose, edit, eval. Every command prints the resolved configuration and
seed, writes its artifacts under `run.out`, and drops a JSON sidecar
(config hash + content hash) next to each artifact. `LSD_THREADS` caps
BLAS worker threads for the whole process.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from PIL import Image

from . import concepts
from .artifacts import write_sidecar
from .autoencoder import AEConfig, build_codec, pretrain
from .checkpoint import (load_checkpoint, pack_module, save_checkpoint,
                         unpack_module)
from .config import ConfigError, RunConfig, default_config_text
from .data import SceneDataset, images_to_input, write_dataset
from .denoiser import DenoiserUNet
from .encoder import ObjectEncoder, attention_label_map
from .metrics import (backbone_embedder, fg_ari, frechet_feature_distance,
                      mbo, miou, shuffled_scores)
from .probes import probe_suite
from .sampler import ddim_sample
from .tensor import no_grad
from .training import Trainer, load_model

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFLICT = 4
EXIT_INTERRUPTED = 130

_THREAD_LIMIT = None  # keeps the threadpoolctl controller alive


class MissingArtifact(Exception):
    """An upstream artifact is absent; names the file and its producer."""

    def __init__(self, what: str, path: Path, producer: str):
        super().__init__(f"missing {what}: {path}\n"
                         f"produce it with: slotdiff {producer}")
        self.path = path
        self.producer = producer


class ArtifactConflict(Exception):
    """An existing artifact was built from a different configuration."""


def stage_seed(base: int, stage: str) -> int:
    """Per-stage seed derived from the master seed; stable across runs."""
    digest = hashlib.sha256(f"{base}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def stage_rng(cfg: RunConfig, stage: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(cfg["run.seed"], stage))


def apply_thread_cap() -> int | None:
    """Honor LSD_THREADS by capping BLAS pools process-wide."""
    global _THREAD_LIMIT
    raw = os.environ.get("LSD_THREADS")
    if not raw:
        return None
    try:
        limit = int(raw)
        if limit < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"LSD_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    _THREAD_LIMIT = threadpool_limits(limits=limit)
    return limit


def _print_resolved(cfg: RunConfig, command: str) -> None:
    print(f"# slotdiff {command}")
    print(f"# config hash {cfg.hash}, seed {cfg['run.seed']}")
    print(cfg.dump(), end="")
    print("#")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["run.out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: Path, what: str, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(what, path, producer)
    return path


def _load_dataset(cfg: RunConfig, split: str) -> SceneDataset:
    root = Path(cfg["run.out"]) / "data" / split
    _require(root / "manifest.json", f"{split} dataset", "gen-data")
    return SceneDataset.load(root)


def _save_images_png(images_nchw: np.ndarray, out_dir: Path, prefix: str,
                     command: str, cfg: RunConfig) -> list[Path]:
    """Clip to [0,1], quantize, write one PNG per image plus sidecars."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    arr = np.clip(images_nchw, 0.0, 1.0).transpose(0, 2, 3, 1)
    arr = np.round(arr * 255.0).astype(np.uint8)
    for i, frame in enumerate(arr):
        path = out_dir / f"{prefix}_{i:03d}.png"
        Image.fromarray(frame, mode="RGB").save(path, format="PNG")
        write_sidecar(path, command, cfg["run.seed"], config_hash=cfg.hash)
        paths.append(path)
    return paths


# Stage commands. Each takes the resolved config and parsed args and
# returns an exit code.

def _data_hash(cfg: RunConfig) -> str:
    """Hash of only the keys that determine dataset content."""
    lines = [line for line in cfg.dump().splitlines()
             if line.startswith(("data.", "run.seed"))]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    for split, count in (("train", cfg["data.train_count"]),
                         ("heldout", cfg["data.heldout_count"])):
        target = out / "data" / split
        manifest = target / "manifest.json"
        sidecar = target / "manifest.json.json"
        if manifest.exists():
            if sidecar.exists():
                recorded = json.loads(sidecar.read_text()).get("data_hash")
                if recorded == _data_hash(cfg):
                    print(f"{split}: up to date at {target}, skipping")
                    continue
            raise ArtifactConflict(
                f"{manifest} exists but was built from different data "
                f"settings; remove {target} to regenerate")
        spec = cfg.scene_spec(seed=stage_seed(cfg["run.seed"], f"data-{split}"))
        t0 = time.perf_counter()
        write_dataset(spec, count, target)
        write_sidecar(manifest, f"gen-data ({split})", cfg["run.seed"],
                      config_hash=cfg.hash,
                      extra={"count": count, "data_hash": _data_hash(cfg)})
        print(f"{split}: wrote {count} scenes to {target} "
              f"in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_pretrain_ae(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    path = out / "codec.ckpt"
    ae_cfg = cfg.autoencoder_config()
    rng = stage_rng(cfg, "codec")
    codec = build_codec(ae_cfg, rng)
    meta = {"ae_config": asdict(ae_cfg)}
    if ae_cfg.mode == "conv":
        dataset = _load_dataset(cfg, "train")
        images = dataset.load_images_u8()
        steps = cfg["autoencoder.pretrain_steps"]
        report = pretrain(codec, images, rng, steps=steps,
                          lr=cfg["autoencoder.pretrain_lr"],
                          calibrate=cfg["autoencoder.calibrate_scale"])
        meta["ae_config"]["scale"] = report["scale"]
        meta.update(psnr=report["psnr"], mse=report["mse"], steps=steps,
                    scale=report["scale"])
        print(f"codec: psnr {report['psnr']:.2f} dB after {steps} steps, "
              f"latent scale {report['scale']:.4f}")
    else:
        print("codec: identity mode, nothing to train")
    save_checkpoint(path, pack_module(codec, "codec."), meta)
    write_sidecar(path, "pretrain-ae", cfg["run.seed"], config_hash=cfg.hash,
                  extra={k: v for k, v in meta.items() if k != "ae_config"})
    print(f"codec: saved {path}")
    return EXIT_OK


def _load_codec(cfg: RunConfig):
    path = _require(Path(cfg["run.out"]) / "codec.ckpt", "frozen autoencoder",
                    "pretrain-ae")
    tensors, meta = load_checkpoint(path)
    ae_cfg = AEConfig(**meta["ae_config"])
    codec = build_codec(ae_cfg, np.random.default_rng(0))
    unpack_module(codec, tensors, "codec.")
    codec.frozen = True
    return codec


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    dataset = _load_dataset(cfg, "train")
    codec = _load_codec(cfg)
    rng = stage_rng(cfg, "train")
    train_cfg = cfg.train_config()
    encoder = ObjectEncoder(cfg.encoder_config(), rng, dtype=train_cfg.dtype)
    denoiser = DenoiserUNet(cfg.denoiser_config(), rng, dtype=train_cfg.dtype)
    images = dataset.load_images_u8()
    trainer = Trainer(encoder, denoiser, codec, cfg.noise_schedule(), images,
                      train_cfg, rng)
    ckpt = out / "model.ckpt"
    if ckpt.exists():
        meta = trainer.restore(ckpt)
        print(f"train: resuming from step {meta['step']}")
    if trainer.step_count >= train_cfg.steps:
        print(f"train: checkpoint already at step {trainer.step_count}, "
              f"target {train_cfg.steps} reached")
        return EXIT_OK

    log = open(out / "train.log", "a", buffering=1)
    window: list[float] = []

    def on_step(info):
        window.append(info["loss"])
        if info["step"] % 100 == 0 or info["step"] == train_cfg.steps:
            log.write(f"{info['step']} {np.mean(window):.4f} "
                      f"{info['grad_norm']:.3f}\n")
            window.clear()

    try:
        trainer.run(train_cfg.steps, checkpoint_path=ckpt, on_step=on_step)
    except KeyboardInterrupt:
        trainer.save(ckpt)
        write_sidecar(ckpt, "train", cfg["run.seed"], config_hash=cfg.hash,
                      extra={"step": trainer.step_count, "interrupted": True})
        print(f"\ntrain: interrupted, checkpoint saved at step "
              f"{trainer.step_count}")
        return EXIT_INTERRUPTED
    finally:
        log.close()
    write_sidecar(ckpt, "train", cfg["run.seed"], config_hash=cfg.hash,
                  extra={"step": trainer.step_count})
    print(f"train: finished at step {trainer.step_count}, saved {ckpt}")
    return EXIT_OK


def _load_trained(cfg: RunConfig):
    path = _require(Path(cfg["run.out"]) / "model.ckpt", "trained model",
                    "train")
    return load_model(path)


def cmd_cluster(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    encoder, _, _, _ = _load_trained(cfg)
    dataset = _load_dataset(cfg, "train")
    k = cfg["cluster.k"]
    library = concepts.ConceptLibrary.build(
        encoder, dataset.load_images_u8(), k, stage_rng(cfg, "cluster"))
    path = out / "library.ckpt"
    library.save(path)
    counts = library.counts().tolist()
    write_sidecar(path, "cluster", cfg["run.seed"], config_hash=cfg.hash,
                  extra={"k": k, "counts": counts,
                         "inertia": float(library.inertia)})
    print(f"cluster: k={k} sizes={counts} inertia={library.inertia:.1f}")
    print(f"cluster: saved {path}")
    return EXIT_OK


def _sample_latents(cfg: RunConfig, denoiser, schedule, slots,
                    rng: np.random.Generator) -> np.ndarray:
    channels, side = cfg.latent_shape()
    shape = (slots.shape[0], channels, side, side)
    cfg_weight = cfg["sample.cfg"]
    return ddim_sample(denoiser, slots, schedule, shape, rng,
                       steps=min(cfg["sample.steps"], schedule.T),
                       eta=cfg["sample.eta"],
                       cfg_weight=None if cfg_weight == 1.0 else cfg_weight)


def cmd_sample(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    encoder, denoiser, schedule, _ = _load_trained(cfg)
    codec = _load_codec(cfg)
    dataset = _load_dataset(cfg, "heldout")
    rng = stage_rng(cfg, "sample")
    count = min(cfg["sample.count"], len(dataset))
    indices = rng.choice(len(dataset), size=count, replace=False)
    images = dataset.load_images_u8(indices)
    with no_grad():
        slots = encoder.encode(images_to_input(images), rng).slots.data
    latents = _sample_latents(cfg, denoiser, schedule, slots, rng)
    decoded = codec.decode(_latent_image(latents, codec))
    paths = _save_images_png(decoded, out / "samples", "sample", "sample", cfg)
    print(f"sample: wrote {len(paths)} images to {out / 'samples'} "
          f"(eta {cfg['sample.eta']}, cfg {cfg['sample.cfg']}, "
          f"conditioned on held-out scenes {sorted(indices.tolist())})")
    return EXIT_OK


def _latent_image(latents: np.ndarray, codec):
    from .autoencoder import LatentImage
    return LatentImage(latents, codec.scale)


def cmd_compose(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    _, denoiser, schedule, _ = _load_trained(cfg)
    codec = _load_codec(cfg)
    lib_path = _require(out / "library.ckpt", "concept library", "cluster")
    library = concepts.ConceptLibrary.load(lib_path)
    rng = stage_rng(cfg, "compose")
    prompts = library.sample_prompts(cfg["sample.count"], rng)
    latents = _sample_latents(cfg, denoiser, schedule, prompts, rng)
    decoded = codec.decode(_latent_image(latents, codec))
    paths = _save_images_png(decoded, out / "compose", "compose", "compose",
                             cfg)
    print(f"compose: wrote {len(paths)} images from {library.k}-concept "
          f"prompts to {out / 'compose'}")
    return EXIT_OK


def _parse_indices(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"--indices expects comma-separated ints, got {text!r}")


def _background_slot(attention: np.ndarray) -> int:
    """Slot claiming the most cells; sprite scenes leave that to background."""
    return int(np.bincount(np.argmax(attention, axis=0),
                           minlength=attention.shape[0]).argmax())


def cmd_edit(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    encoder, denoiser, schedule, _ = _load_trained(cfg)
    codec = _load_codec(cfg)
    dataset = _load_dataset(cfg, "heldout")
    rng = stage_rng(cfg, "edit")
    if args.index >= len(dataset):
        raise ConfigError(f"--index {args.index} out of range "
                          f"(heldout has {len(dataset)})")

    def encode_one(i: int):
        image = dataset.load_images_u8([i])
        with no_grad():
            result = encoder.encode(images_to_input(image), rng)
        return result.slots.data[0], result.attention.data[0]

    slots, attention = encode_one(args.index)
    if args.op in ("remove", "keep"):
        if not args.indices:
            raise ConfigError(f"--op {args.op} requires --indices")
        indices = _parse_indices(args.indices)
        if args.op == "keep":
            edited = concepts.keep_only(slots, indices)
        else:
            edited = slots
            for i in sorted(indices, reverse=True):
                edited = concepts.remove(edited, i)
        prompts = {"after": edited}
    elif args.op == "swap-bg":
        if args.ref_index is None:
            raise ConfigError("--op swap-bg requires --ref-index")
        ref_slots, ref_attention = encode_one(args.ref_index)
        a, b = concepts.swap(slots, ref_slots,
                             _background_slot(attention),
                             _background_slot(ref_attention))
        prompts = {"after": a, "ref_after": b, "ref_before": ref_slots}
    else:
        raise ConfigError(f"unknown --op {args.op!r}")

    prompts["before"] = slots
    edit_dir = out / "edits" / args.op
    for name, prompt in sorted(prompts.items()):
        latents = _sample_latents(cfg, denoiser, schedule, prompt[None], rng)
        decoded = codec.decode(_latent_image(latents, codec))
        _save_images_png(decoded, edit_dir, name, f"edit --op {args.op}", cfg)
    print(f"edit: {args.op} on heldout[{args.index}] wrote "
          f"{sorted(prompts)} to {edit_dir}")
    return EXIT_OK


def _summary(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"per_sample": [float(v) for v in arr],
            "mean": float(arr.mean()), "std": float(arr.std())}


def _predicted_labels(cfg: RunConfig, dataset: SceneDataset,
                      pred_arg: str | None) -> tuple[np.ndarray, str]:
    n = len(dataset)
    if pred_arg:
        path = Path(pred_arg)
        if path.is_dir():
            if not (path / "manifest.json").exists():
                raise ConfigError(f"--pred dir {path} has no manifest.json")
            other = SceneDataset.load(path)
            labels = np.stack([other.label_map(i) for i in range(len(other))])
            source = f"dataset masks at {path}"
        elif path.suffix == ".npz":
            if not path.exists():
                raise ConfigError(f"--pred file not found: {path}")
            with np.load(path) as bundle:
                if "labels" not in bundle:
                    raise ConfigError(f"{path} has no 'labels' array")
                labels = bundle["labels"]
            source = f"npz at {path}"
        else:
            raise ConfigError(f"--pred expects a dataset dir or .npz, got {path}")
        if labels.shape[0] != n:
            raise ConfigError(f"predictions cover {labels.shape[0]} images, "
                              f"heldout has {n}")
        return labels, source

    encoder, _, _, _ = _load_trained(cfg)
    rng = stage_rng(cfg, "eval")
    images = dataset.load_images_u8()
    factor = encoder.cfg.patch_size
    chunks = []
    for lo in range(0, n, 64):
        batch = images_to_input(images[lo:lo + 64])
        with no_grad():
            result = encoder.encode(batch, rng)
        chunks.append(attention_label_map(result.attention.data, result.grid,
                                          factor))
    return np.concatenate(chunks), "model attention masks"


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    dataset = _load_dataset(cfg, "heldout")
    n = len(dataset)
    true_labels = np.stack([dataset.label_map(i) for i in range(n)])
    pred_labels, source = _predicted_labels(cfg, dataset, args.pred)

    report: dict = {}
    per = {"fg_ari": [], "miou": [], "mbo": []}
    for p, t in zip(pred_labels, true_labels):
        per["fg_ari"].append(fg_ari(p, t))
        per["miou"].append(miou(p, t))
        per["mbo"].append(mbo(p, t))
    for name, values in per.items():
        report[name] = _summary(values)

    if args.shuffled_baseline:
        rng = stage_rng(cfg, "eval-shuffle")
        base = {"fg_ari": [], "miou": [], "mbo": []}
        for p, t in zip(pred_labels, true_labels):
            scores = shuffled_scores(p, t, rng)
            for name in base:
                base[name].append(scores[name])
        for name, values in base.items():
            report[f"{name}_shuffled"] = _summary(values)

    if args.samples:
        sample_dir = Path(args.samples)
        files = sorted(sample_dir.glob("*.png"))
        if not files:
            raise MissingArtifact("generated images", sample_dir / "*.png",
                                  "sample (or compose)")
        generated = np.stack([np.asarray(Image.open(f).convert("RGB"))
                              for f in files])
        rng = stage_rng(cfg, "eval-frechet")
        indices = rng.choice(n, size=min(len(files), n), replace=False)
        reals = dataset.load_images_u8(indices)
        encoder, _, _, _ = _load_trained(cfg)
        value = frechet_feature_distance(generated, reals,
                                         extractor=backbone_embedder(encoder))
        report["frechet"] = {"value": float(value), "features": "backbone",
                             "generated": len(files), "real": len(indices)}

    if args.probes:
        encoder, _, _, _ = _load_trained(cfg)
        samples = [SimpleNamespace(label_map=dataset.label_map(i),
                                   objects=dataset.objects(i))
                   for i in range(n)]
        reports = probe_suite(encoder, dataset.load_images_u8(), samples,
                              stage_rng(cfg, "eval-probes"))
        for name, probe in reports.items():
            report[f"probe_{name}"] = probe.to_dict()

    report["meta"] = {"config_hash": cfg.hash, "seed": cfg["run.seed"],
                      "heldout": n, "predictions": source}
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    path = eval_dir / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_sidecar(path, "eval", cfg["run.seed"], config_hash=cfg.hash)
    for name in ("fg_ari", "miou", "mbo"):
        entry = report[name]
        print(f"eval: {name} mean {entry['mean']:.4f} std {entry['std']:.4f}")
    if "frechet" in report:
        print(f"eval: frechet {report['frechet']['value']:.4f}")
    print(f"eval: report written to {path}")
    return EXIT_OK


def cmd_init_config(cfg: RunConfig, args) -> int:
    print(default_config_text(), end="")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-ae": cmd_pretrain_ae,
    "train": cmd_train,
    "cluster": cmd_cluster,
    "sample": cmd_sample,
    "compose": cmd_compose,
    "edit": cmd_edit,
    "eval": cmd_eval,
    "init-config": cmd_init_config,
}

# Flags that override config keys when given; per-command --steps targets.
_STEPS_KEY = {"train": "train.steps", "pretrain-ae": "autoencoder.pretrain_steps",
              "sample": "sample.steps", "compose": "sample.steps",
              "edit": "sample.steps"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slotdiff",
        description="Object-centric latent diffusion pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       help="flat key-value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (run.seed)")
        p.add_argument("--out", type=str, default=None,
                       help="artifact root (run.out)")
        return p

    add("init-config", "print a config template with every key and default")
    add("gen-data", "generate the train and held-out sprite datasets")
    p = add("pretrain-ae", "pretrain and freeze the pixel autoencoder")
    p.add_argument("--steps", type=int, default=None)
    p = add("train", "jointly train the slot encoder and latent denoiser")
    p.add_argument("--steps", type=int, default=None,
                   help="total optimizer steps (overrides train.steps)")
    p.add_argument("--slots", type=int, default=None,
                   help="number of slots (overrides slots.count)")
    p = add("cluster", "harvest slots and build the concept library")
    p.add_argument("--k", type=int, default=None,
                   help="clusters (overrides cluster.k)")
    for name, help_text in (("sample", "regenerate held-out scenes from their slots"),
                            ("compose", "novel scenes from concept-library prompts")):
        p = add(name, help_text)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--eta", type=float, default=None)
        p.add_argument("--cfg", type=float, default=None)
        p.add_argument("--count", type=int, default=None)
    p = add("edit", "slot-level edits on an encoded held-out scene")
    p.add_argument("--op", required=True, choices=("remove", "keep", "swap-bg"))
    p.add_argument("--index", type=int, default=0,
                   help="held-out image to edit")
    p.add_argument("--ref-index", type=int, default=None,
                   help="second image for swap-bg")
    p.add_argument("--indices", type=str, default=None,
                   help="comma-separated slot indices for remove/keep")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--cfg", type=float, default=None)
    p = add("eval", "segmentation metrics (and optional probes/frechet)")
    p.add_argument("--pred", type=str, default=None,
                   help="label maps to score instead of the model's "
                            "(dataset dir or .npz with 'labels')")
    p.add_argument("--samples", type=str, default=None,
                   help="directory of generated PNGs for frechet")
    p.add_argument("--probes", action="store_true",
                   help="train property probes on the slots")
    p.add_argument("--shuffled-baseline", action="store_true",
                   help="include label-shuffle baseline scores")
    return parser


def resolve_config(args) -> RunConfig:
    overrides: dict[str, str] = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        overrides["run.out"] = args.out
    if getattr(args, "eta", None) is not None:
        overrides["sample.eta"] = str(args.eta)
    if getattr(args, "cfg", None) is not None:
        overrides["sample.cfg"] = str(args.cfg)
    if getattr(args, "count", None) is not None:
        overrides["sample.count"] = str(args.count)
    if getattr(args, "slots", None) is not None:
        overrides["slots.count"] = str(args.slots)
    if getattr(args, "k", None) is not None:
        overrides["cluster.k"] = str(args.k)
    steps_key = _STEPS_KEY.get(args.command)
    if steps_key and getattr(args, "steps", None) is not None:
        overrides[steps_key] = str(args.steps)
    if args.config:
        return RunConfig.from_file(args.config, overrides=overrides)
    return RunConfig.from_text("", source="<defaults>", overrides=overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        limit = apply_thread_cap()
        cfg = resolve_config(args)
        if args.command != "init-config":
            _print_resolved(cfg, args.command)
            if limit:
                print(f"# threads capped at {limit} (LSD_THREADS)")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifact as exc:
        print(f"error [missing-artifact]: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ArtifactConflict as exc:
        print(f"error [artifact-conflict]: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    except (ValueError, OSError) as exc:
        print(f"error [runtime]: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
