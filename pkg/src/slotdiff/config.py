"""Flat run configuration: one key-value line per hyperparameter.

Format is deliberately flat for diff-friendliness: `section.key = value`,
`#` comments, blank lines ignored. Unknown or duplicate keys are errors so
typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import difflib
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .autoencoder import LATENT_SCALE, AEConfig
from .data import SceneSpec
from .denoiser import DenoiserConfig
from .encoder import EncoderConfig
from .schedule import NoiseSchedule, constant_schedule, linear_schedule
from .training import TrainConfig


class ConfigError(ValueError):
    """Malformed config text, unknown key, or unparseable value."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.strip("[]() ").split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"expected a comma list of ints, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_str_tuple(text: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    if not parts:
        raise ConfigError(f"expected a comma list of names, got {text!r}")
    return parts


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Option:
    default: object
    parse: Callable[[str], object]
    help: str

    def coerce(self, raw: str):
        try:
            return self.parse(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _opt(default, help_text: str, parse=None) -> Option:
    if parse is None:
        kind = type(default)
        parse = _parse_bool if kind is bool else kind
    return Option(default, parse, help_text)


# Registry of every run key. Section prefixes group the pipeline stages;
# order here is the canonical dump order.
OPTIONS: dict[str, Option] = {
    "run.seed": _opt(0, "master seed; stage seeds derive from it"),
    "run.out": _opt("runs/out", "root directory for all artifacts"),

    "data.image_size": _opt(64, "square image side in pixels"),
    "data.max_objects": _opt(3, "sprites per scene drawn from 1..max"),
    "data.shapes": _opt(("circle", "square", "triangle"),
                        "sprite shapes to sample", _parse_str_tuple),
    "data.background_mode": _opt("mixed", "solid | gradient | mixed"),
    "data.scale_min": _opt(0.20, "min sprite diameter, fraction of image"),
    "data.scale_max": _opt(0.38, "max sprite diameter, fraction of image"),
    "data.train_count": _opt(5000, "training images to generate"),
    "data.heldout_count": _opt(500, "held-out images to generate"),

    "autoencoder.mode": _opt("conv", "conv | identity (pixel-space)"),
    "autoencoder.latent_channels": _opt(4, "channels of the latent grid"),
    "autoencoder.base_channels": _opt(32, "conv codec width"),
    "autoencoder.downsample_factor": _opt(4, "spatial reduction, power of 2"),
    "autoencoder.scale": _opt(LATENT_SCALE, "latent scaling applied after encode"),
    "autoencoder.calibrate_scale": _opt(True, "reset scale to 1/std of raw latents "
                                        "when freezing", _parse_bool),
    "autoencoder.pretrain_steps": _opt(1500, "reconstruction pretraining steps"),
    "autoencoder.pretrain_lr": _opt(1e-3, "codec pretraining learning rate"),

    "encoder.base_channels": _opt(32, "feature pyramid base width"),
    "encoder.channel_mults": _opt((1, 2, 4), "pyramid widths as multiples of base",
                                  _parse_int_tuple),
    "encoder.patch_size": _opt(4, "stride of the stem patchifier"),
    "encoder.d_input": _opt(64, "feature channels fed to slot attention"),
    "encoder.heads": _opt(4, "attention heads in the feature pyramid"),
    "encoder.mid_attention": _opt(True, "self-attention at the pyramid bottleneck"),

    "slots.count": _opt(4, "number of slots"),
    "slots.dim": _opt(64, "slot vector size"),
    "slots.iterations": _opt(3, "slot-attention refinement iterations"),
    "slots.mlp_hidden": _opt(128, "hidden width of the slot update MLP"),

    "denoiser.base_channels": _opt(32, "denoiser base width"),
    "denoiser.channel_mults": _opt((1, 2, 4), "denoiser ladder widths",
                                   _parse_int_tuple),
    "denoiser.attention_factors": _opt((1, 2, 4),
                                       "downsample factors that get slot cross-attention",
                                       _parse_int_tuple),
    "denoiser.heads": _opt(4, "denoiser attention heads"),
    "denoiser.res_blocks": _opt(1, "residual blocks per resolution"),
    "denoiser.time_dim": _opt(256, "timestep embedding size"),
    "denoiser.ff_mult": _opt(2, "transformer feed-forward expansion"),
    "denoiser.mid_attention": _opt(True, "attention at the denoiser bottleneck"),

    "diffusion.timesteps": _opt(1000, "number of forward-process steps T"),
    "diffusion.beta_schedule": _opt("linear", "linear | constant"),
    "diffusion.beta_start": _opt(1e-4, "first beta (the constant, if constant)"),
    "diffusion.beta_end": _opt(0.02, "last beta (ignored if constant)"),

    "train.steps": _opt(20000, "optimizer steps"),
    "train.batch_size": _opt(16, "images per step"),
    "train.lr_encoder": _opt(1e-4, "encoder learning rate"),
    "train.lr_denoiser": _opt(1e-4, "denoiser learning rate"),
    "train.grad_clip": _opt(1.0, "global L2 gradient clip"),
    "train.p_drop": _opt(0.1, "slot-conditioning drop probability"),
    "train.checkpoint_every": _opt(1000, "steps between checkpoints"),
    "train.precision": _opt("f32", "f32 | f64 training arithmetic"),

    "sample.steps": _opt(100, "sampler steps (subset of T)"),
    "sample.eta": _opt(0.0, "stochasticity: 0 deterministic, 1 ancestral"),
    "sample.cfg": _opt(1.0, "guidance weight; 1 disables guidance"),
    "sample.count": _opt(16, "images per sampling run"),

    "cluster.k": _opt(5, "number of concept clusters"),
    "cluster.restarts": _opt(3, "k-means restarts, best inertia kept"),
}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw `key = value` pairs; rejects malformed lines and duplicates."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = raw.strip()
    return pairs


def _unknown_key_error(key: str) -> ConfigError:
    hint = difflib.get_close_matches(key, OPTIONS, n=1)
    extra = f" (did you mean {hint[0]!r}?)" if hint else ""
    return ConfigError(f"unknown config key {key!r}{extra}")


class RunConfig:
    """Fully resolved run settings; every key from the registry is present."""

    def __init__(self, values: dict[str, object] | None = None):
        self._values = {key: opt.default for key, opt in OPTIONS.items()}
        for key, value in (values or {}).items():
            if key not in OPTIONS:
                raise _unknown_key_error(key)
            self._values[key] = value
        self._validate()

    @classmethod
    def from_text(cls, text: str, source: str = "<config>",
                  overrides: dict[str, str] | None = None) -> "RunConfig":
        pairs = parse_text(text, source)
        pairs.update(overrides or {})
        values = {}
        for key, raw in pairs.items():
            if key not in OPTIONS:
                raise _unknown_key_error(key)
            try:
                values[key] = OPTIONS[key].coerce(raw)
            except ConfigError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        return cls(values)

    @classmethod
    def from_file(cls, path: str | Path,
                  overrides: dict[str, str] | None = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), source=str(path),
                             overrides=overrides)

    def _validate(self):
        if self["data.scale_min"] > self["data.scale_max"]:
            raise ConfigError("data.scale_min exceeds data.scale_max")
        if self["diffusion.beta_schedule"] not in ("linear", "constant"):
            raise ConfigError("diffusion.beta_schedule must be linear or constant")
        for key in ("data.train_count", "data.heldout_count", "train.steps",
                    "sample.steps", "sample.count", "cluster.k"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be positive")

    def __getitem__(self, key: str):
        if key not in OPTIONS:
            raise _unknown_key_error(key)
        return self._values[key]

    def replace(self, **overrides) -> "RunConfig":
        """New config with dotted keys given as keyword `section__key=value`."""
        values = dict(self._values)
        for name, value in overrides.items():
            values[name.replace("__", ".")] = value
        return RunConfig(values)

    def dump(self) -> str:
        """Canonical text form: registry order, one line per key."""
        lines = []
        section = None
        for key in OPTIONS:
            this_section = key.split(".", 1)[0]
            if section is not None and this_section != section:
                lines.append("")
            section = this_section
            lines.append(f"{key} = {_render(self._values[key])}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    # Stage configs assembled from the flat keys.

    def scene_spec(self, seed: int, **overrides) -> SceneSpec:
        kwargs = dict(
            image_size=self["data.image_size"],
            max_objects=self["data.max_objects"],
            shapes=self["data.shapes"],
            background_mode=self["data.background_mode"],
            scale_range=(self["data.scale_min"], self["data.scale_max"]),
            seed=seed,
        )
        kwargs.update(overrides)
        return SceneSpec(**kwargs)

    def autoencoder_config(self) -> AEConfig:
        return AEConfig(
            mode=self["autoencoder.mode"],
            latent_channels=self["autoencoder.latent_channels"],
            base_channels=self["autoencoder.base_channels"],
            downsample_factor=self["autoencoder.downsample_factor"],
            scale=self["autoencoder.scale"],
        )

    def latent_shape(self) -> tuple[int, int]:
        """(channels, side) of the diffusion space the codec produces."""
        if self["autoencoder.mode"] == "identity":
            return 3, self["data.image_size"]
        return (self["autoencoder.latent_channels"],
                self["data.image_size"] // self["autoencoder.downsample_factor"])

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self["data.image_size"],
            patch_size=self["encoder.patch_size"],
            base_channels=self["encoder.base_channels"],
            channel_mults=self["encoder.channel_mults"],
            d_input=self["encoder.d_input"],
            heads=self["encoder.heads"],
            mid_attention=self["encoder.mid_attention"],
            n_slots=self["slots.count"],
            slot_dim=self["slots.dim"],
            iterations=self["slots.iterations"],
            mlp_hidden=self["slots.mlp_hidden"],
        )

    def denoiser_config(self) -> DenoiserConfig:
        channels, side = self.latent_shape()
        return DenoiserConfig(
            in_channels=channels,
            base_channels=self["denoiser.base_channels"],
            channel_mults=self["denoiser.channel_mults"],
            attention_factors=self["denoiser.attention_factors"],
            heads=self["denoiser.heads"],
            res_blocks=self["denoiser.res_blocks"],
            time_dim=self["denoiser.time_dim"],
            slot_dim=self["slots.dim"],
            ff_mult=self["denoiser.ff_mult"],
            mid_attention=self["denoiser.mid_attention"],
            latent_size=side,
        )

    def train_config(self, steps: int | None = None) -> TrainConfig:
        return TrainConfig(
            steps=self["train.steps"] if steps is None else steps,
            batch_size=self["train.batch_size"],
            lr_encoder=self["train.lr_encoder"],
            lr_denoiser=self["train.lr_denoiser"],
            grad_clip=self["train.grad_clip"],
            p_drop=self["train.p_drop"],
            checkpoint_every=self["train.checkpoint_every"],
            precision=self["train.precision"],
        )

    def noise_schedule(self) -> NoiseSchedule:
        T = self["diffusion.timesteps"]
        if self["diffusion.beta_schedule"] == "constant":
            return constant_schedule(T, self["diffusion.beta_start"])
        return linear_schedule(T, self["diffusion.beta_start"],
                               self["diffusion.beta_end"])


def default_config_text() -> str:
    """Template with every key, its default, and a short comment."""
    lines = ["# Run configuration. One key per line; unknown keys are errors."]
    section = None
    for key, opt in OPTIONS.items():
        this_section = key.split(".", 1)[0]
        if this_section != section:
            lines.append("")
            section = this_section
        lines.append(f"{key} = {_render(opt.default)}  # {opt.help}")
    return "\n".join(lines) + "\n"
