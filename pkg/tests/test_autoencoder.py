"""Codec round trips, latent scaling, and pretraining behavior."""

import numpy as np
import pytest

from slotdiff.autoencoder import (AEConfig, ConvCodec, IdentityCodec,
                                  build_codec, param_fingerprint, pretrain,
                                  reconstruction_loss)
from slotdiff.data import SceneSpec, generate_scene
from slotdiff.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(21)


def sprite_batch(n=6, size=32, seed=1):
    spec = SceneSpec(image_size=size, max_objects=2, seed=seed)
    return np.stack([(generate_scene(spec, i).image * 255).astype(np.uint8)
                     for i in range(n)])


class TestIdentityCodec:
    def test_round_trip_bit_exact(self, rng):
        codec = build_codec(AEConfig(mode="identity"))
        x = rng.random((2, 3, 16, 16)).astype(np.float32)
        lat = codec.encode(x)
        assert lat.scale == 1.0
        np.testing.assert_array_equal(codec.decode(lat), x)

    def test_latent_mirrors_image_shape(self):
        codec = build_codec(AEConfig(mode="identity"))
        lat = codec.encode(np.zeros((1, 3, 8, 8), dtype=np.float32))
        assert lat.shape == (1, 3, 8, 8)

    def test_channel_mismatch_rejected(self):
        from slotdiff.autoencoder import LatentImage
        codec = build_codec(AEConfig(mode="identity"))
        with pytest.raises(ValueError):
            codec.decode(LatentImage(np.zeros((1, 4, 8, 8)), 1.0))


class TestConvCodec:
    def test_latent_shape_and_scaling(self, rng):
        codec = ConvCodec(AEConfig(), rng)
        x = rng.random((2, 3, 32, 32)).astype(np.float32)
        lat = codec.encode(x)
        assert lat.shape == (2, 4, 8, 8)
        assert lat.scale == pytest.approx(0.18215)
        unscaled = ConvCodec(AEConfig(scale=1.0), np.random.default_rng(21))
        unscaled.load_state_dict(codec.state_dict())
        np.testing.assert_allclose(lat.values,
                                   unscaled.encode(x).values * 0.18215,
                                   rtol=1e-5)

    def test_decode_range(self, rng):
        codec = ConvCodec(AEConfig(), rng)
        lat = codec.encode(rng.random((1, 3, 16, 16)).astype(np.float32))
        out = codec.decode(lat)
        assert out.shape == (1, 3, 16, 16)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_decode_channel_mismatch(self, rng):
        from slotdiff.autoencoder import LatentImage
        codec = ConvCodec(AEConfig(), rng)
        with pytest.raises(ValueError):
            codec.decode(LatentImage(np.zeros((1, 3, 8, 8), dtype=np.float32),
                                     codec.scale))

    def test_kl_term_increases_loss(self, rng):
        x = Tensor(rng.random((2, 3, 16, 16)).astype(np.float32))
        plain = ConvCodec(AEConfig(kl_weight=0.0), np.random.default_rng(4))
        kl = ConvCodec(AEConfig(kl_weight=1e-2), np.random.default_rng(4))
        assert reconstruction_loss(kl, x).item() > reconstruction_loss(plain, x).item()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AEConfig(mode="magic")
        with pytest.raises(ValueError):
            AEConfig(downsample_factor=3)
        with pytest.raises(ValueError):
            build_codec(AEConfig(), rng=None)


class TestPretrain:
    def test_loss_drops_and_codec_freezes(self, rng):
        images = sprite_batch(n=8, size=16)
        codec = ConvCodec(AEConfig(base_channels=8), rng)
        x = Tensor(images.astype(np.float32).transpose(0, 3, 1, 2) / 255.0)
        before = reconstruction_loss(codec, x).item()
        report = pretrain(codec, images, rng, steps=40, batch=8, crop=16)
        assert report["mse"] < before
        assert report["psnr"] > 0
        assert codec.frozen
        with pytest.raises(RuntimeError):
            pretrain(codec, images, rng, steps=1)

    def test_frozen_params_stop_gradients(self, rng):
        images = sprite_batch(n=4, size=16)
        codec = ConvCodec(AEConfig(base_channels=8), rng)
        pretrain(codec, images, rng, steps=2, batch=4, crop=16)
        fp = param_fingerprint(codec)
        x = Tensor(images.astype(np.float32).transpose(0, 3, 1, 2) / 255.0,
                   requires_grad=True)
        loss = reconstruction_loss(codec, x)
        loss.backward()
        assert codec.enc_in.w.grad is None
        assert param_fingerprint(codec) == fp

    def test_fingerprint_changes_with_weights(self, rng):
        codec = ConvCodec(AEConfig(base_channels=8), rng)
        fp = param_fingerprint(codec)
        codec.enc_in.w.tensor.data = codec.enc_in.w.data + 1.0
        assert param_fingerprint(codec) != fp

    def test_fingerprint_changes_with_scale(self, rng):
        codec = ConvCodec(AEConfig(base_channels=8), rng)
        fp = param_fingerprint(codec)
        codec.scale = codec.scale * 2.0
        assert param_fingerprint(codec) != fp

    def test_calibration_yields_unit_latent_std(self, rng):
        images = sprite_batch(n=8, size=16)
        codec = ConvCodec(AEConfig(base_channels=8), rng)
        report = pretrain(codec, images, rng, steps=10, batch=8, crop=16)
        assert report["scale"] == codec.scale != AEConfig().scale
        x = images.astype(np.float32).transpose(0, 3, 1, 2) / 255.0
        std = codec.encode(x).values.std()
        assert abs(std - 1.0) < 1e-4

    def test_calibration_can_be_disabled(self, rng):
        images = sprite_batch(n=4, size=16)
        codec = ConvCodec(AEConfig(base_channels=8), rng)
        report = pretrain(codec, images, rng, steps=2, batch=4, crop=16,
                          calibrate=False)
        assert report["scale"] == codec.scale == AEConfig().scale
