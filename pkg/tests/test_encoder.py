"""Backbone shape/equivariance checks and slot-attention invariants."""

import numpy as np
import pytest

from slotdiff.data import SceneSpec, generate_scene
from slotdiff.encoder import (EncoderConfig, ObjectEncoder,
                              attention_label_map, attention_masks,
                              upsample_label_map)
from slotdiff.tensor import Tensor, matmul, no_grad


def small_cfg(**overrides):
    base = dict(image_size=32, patch_size=4, base_channels=16,
                channel_mults=(1, 2), d_input=16, heads=2, n_slots=3,
                slot_dim=16, mlp_hidden=32)
    base.update(overrides)
    return EncoderConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def make_images(rng, batch=2, size=32):
    return rng.random((batch, 3, size, size)).astype(np.float32)


class TestBackbone:
    def test_feature_grid_shape(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        grid = enc.features(make_images(rng))
        assert grid.grid == (8, 8)
        assert grid.features.shape == (2, 64, 16)

    def test_rejects_wrong_channel_count(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        with pytest.raises(ValueError):
            enc.features(rng.random((1, 4, 32, 32)).astype(np.float32))

    def test_positional_embedding_toggles(self, rng):
        images = make_images(rng, 1)
        with_pos = ObjectEncoder(small_cfg(), np.random.default_rng(0))
        without = ObjectEncoder(small_cfg(positional=False), np.random.default_rng(0))
        with no_grad():
            a = with_pos.features(images).features.data
            b = without.features(images).features.data
        assert not np.allclose(a, b)

    def test_translation_moves_response_cell(self):
        # conv-only config: no positional embedding, no bottleneck attention
        cfg = EncoderConfig(image_size=64, patch_size=4, base_channels=16,
                            channel_mults=(1, 2), d_input=16, heads=2,
                            n_slots=3, slot_dim=16, mlp_hidden=32,
                            positional=False, mid_attention=False)
        enc = ObjectEncoder(cfg, np.random.default_rng(1))
        from slotdiff.data import _support
        base = np.zeros((64, 64, 3), dtype=np.float32)
        shifted = np.zeros_like(base)
        sup = _support("circle", 0.42, 0.5, 0.3, 64)
        base[sup] = (1.0, 0.3, 0.2)
        sup4 = _support("circle", 0.42 + 4.0 / 64.0, 0.5, 0.3, 64)
        shifted[sup4] = (1.0, 0.3, 0.2)
        batch = np.stack([base, shifted]).transpose(0, 3, 1, 2)
        with no_grad():
            grid = enc.features(batch)
        h, w = grid.grid
        response = np.linalg.norm(grid.features.data, axis=-1).reshape(2, h, w)
        r0, c0 = np.unravel_index(np.argmax(response[0]), (h, w))
        r1, c1 = np.unravel_index(np.argmax(response[1]), (h, w))
        assert (r1, c1) == (r0, c0 + 1)


class TestSlotAttention:
    def test_attention_stochasticity(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        with no_grad():
            res = enc.encode(make_images(rng), rng)
        cols = res.attention.data.sum(axis=1)  # over slots, per cell
        np.testing.assert_allclose(cols, 1.0, atol=1e-6)
        rows = res.renormalized.data.sum(axis=2)  # per slot over cells
        np.testing.assert_allclose(rows, 1.0, atol=1e-6)

    def test_single_slot_readout_is_mean_of_values(self, rng):
        enc = ObjectEncoder(small_cfg(n_slots=1), rng)
        sa = enc.slot_attention
        images = make_images(rng, 1)
        with no_grad():
            grid = enc.features(images)
            init = sa.initial_slots(1, np.random.default_rng(0))
            res = sa(grid, init, iterations=1)
            feats = sa.norm_input(grid.features)
            v = sa.to_v(feats)
            readout = matmul(res.renormalized, v)
        np.testing.assert_allclose(readout.data[0, 0],
                                   v.data[0].mean(axis=0), atol=1e-6)

    def test_permuting_init_permutes_outputs(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        images = make_images(rng, 1)
        init = enc.slot_attention.initial_slots(1, np.random.default_rng(5))
        perm = np.array([2, 0, 1])
        with no_grad():
            grid = enc.features(images)
            a = enc.slot_attention(grid, init)
            b = enc.slot_attention(grid, init[:, perm])
        np.testing.assert_allclose(b.slots.data, a.slots.data[:, perm], atol=1e-5)
        np.testing.assert_allclose(b.attention.data, a.attention.data[:, perm],
                                   atol=1e-5)

    def test_learned_init_uses_mu_sigma(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        sa = enc.slot_attention
        sa.mu.tensor.data = np.full_like(sa.mu.data, 10.0)
        sa.log_sigma.tensor.data = np.full_like(sa.log_sigma.data, -20.0)
        init = sa.initial_slots(4, rng)
        np.testing.assert_allclose(init, 10.0, atol=1e-4)

    def test_standard_normal_init_toggle(self, rng):
        enc = ObjectEncoder(small_cfg(learned_slot_init=False), rng)
        init = enc.slot_attention.initial_slots(200, np.random.default_rng(0))
        assert abs(init.mean()) < 0.05
        assert abs(init.std() - 1.0) < 0.05

    def test_iteration_count_changes_result(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        images = make_images(rng, 1)
        init = enc.slot_attention.initial_slots(1, np.random.default_rng(2))
        with no_grad():
            grid = enc.features(images)
            one = enc.slot_attention(grid, init, iterations=1)
            three = enc.slot_attention(grid, init, iterations=3)
        assert not np.allclose(one.slots.data, three.slots.data)

    def test_mlp_toggle_runs_and_differs(self, rng):
        images = make_images(rng, 1)
        with_mlp = ObjectEncoder(small_cfg(), np.random.default_rng(0))
        without = ObjectEncoder(small_cfg(slot_mlp=False), np.random.default_rng(0))
        init = with_mlp.slot_attention.initial_slots(1, np.random.default_rng(1))
        with no_grad():
            a = with_mlp.slot_attention(with_mlp.features(images), init)
            b = without.slot_attention(without.features(images), init)
        assert not np.allclose(a.slots.data, b.slots.data)

    def test_wrong_feature_dim_rejected(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        from slotdiff.encoder import FeatureGrid
        bad = FeatureGrid(Tensor(np.zeros((1, 64, 24), dtype=np.float32)), (8, 8))
        init = enc.slot_attention.initial_slots(1, rng)
        with pytest.raises(ValueError):
            enc.slot_attention(bad, init)

    def test_grads_reach_slots_and_backbone(self, rng):
        enc = ObjectEncoder(small_cfg(), rng)
        images = make_images(rng, 1)
        res = enc.encode(images, rng)
        (res.slots * res.slots).mean().backward()
        assert enc.backbone.stem.w.grad is not None
        assert enc.slot_attention.to_q.w.grad is not None
        assert np.any(res.slots.grad != 0.0)


class TestAttentionMasks:
    def test_argmax_with_tie_goes_to_lowest_slot(self):
        attn = np.array([[[0.4, 0.3], [0.4, 0.6], [0.2, 0.1]]])  # [1, 3, 2]
        labels = attention_masks(attn, (1, 2))
        np.testing.assert_array_equal(labels, [[[0, 1]]])

    def test_unbatched_input(self):
        attn = np.array([[0.9, 0.1], [0.1, 0.9]])
        labels = attention_masks(attn, (1, 2))
        np.testing.assert_array_equal(labels, [[0, 1]])

    def test_grid_mismatch_raises(self):
        with pytest.raises(ValueError):
            attention_masks(np.zeros((1, 2, 9)), (2, 2))

    def test_upsample_label_map(self):
        lab = np.array([[0, 1], [2, 3]])
        up = upsample_label_map(lab, 2)
        np.testing.assert_array_equal(up[:2, :2], 0)
        np.testing.assert_array_equal(up[2:, 2:], 3)

    def test_masks_from_real_scene_cover_grid(self, rng):
        spec = SceneSpec(image_size=32, max_objects=2, seed=9)
        sample = generate_scene(spec, 0)
        enc = ObjectEncoder(small_cfg(), rng)
        x = sample.image.transpose(2, 0, 1)[None]
        with no_grad():
            res = enc.encode(x, rng)
        labels = attention_masks(res.attention.data, res.grid)
        assert labels.shape == (1, 8, 8)
        assert labels.min() >= 0 and labels.max() < 3


class TestAttentionLabelMap:
    def test_factor_one_matches_argmax(self, rng):
        attn = rng.random((2, 3, 12))
        got = attention_label_map(attn, (3, 4), 1)
        np.testing.assert_array_equal(got, attention_masks(attn, (3, 4)))

    def test_constant_winner_survives_upsampling(self):
        attn = np.stack([np.full(16, 0.2), np.full(16, 0.7),
                         np.full(16, 0.1)])
        labels = attention_label_map(attn, (4, 4), 4)
        assert labels.shape == (16, 16)
        np.testing.assert_array_equal(labels, 1)

    def test_boundary_interpolates_between_cells(self):
        # slot 0 owns the left two columns, slot 1 the right two; the
        # bilinear crossover must stay strictly between the cell centers
        left = np.repeat([1.0, 1.0, 0.0, 0.0], 4).reshape(4, 4).T
        attn = np.stack([left.ravel(), 1.0 - left.ravel()])
        labels = attention_label_map(attn, (4, 4), 4)
        assert labels.shape == (16, 16)
        np.testing.assert_array_equal(labels[:, :6], 0)
        np.testing.assert_array_equal(labels[:, 10:], 1)
        assert (labels[:, 6:10] == 0).any() and (labels[:, 6:10] == 1).any()

    def test_grid_mismatch_raises(self):
        with pytest.raises(ValueError):
            attention_label_map(np.zeros((1, 2, 9)), (2, 2), 2)
