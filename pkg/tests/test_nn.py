"""Module plumbing, optimizer behavior, and checkpoint container round trips."""

import numpy as np
import pytest

from helpers import gradcheck, random_projection_loss
from slotdiff import nn
from slotdiff.checkpoint import (load_checkpoint, pack_module, rng_from_meta,
                                 rng_meta, save_checkpoint, unpack_module)
from slotdiff.optim import Adam, adam_step, clip_grad_norm
from slotdiff.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestModules:
    def test_linear_init_bounds(self, rng):
        lin = nn.Linear(64, 32, rng)
        bound = 1.0 / np.sqrt(64)
        assert np.all(np.abs(lin.w.data) <= bound)
        assert np.all(lin.b.data == 0.0)

    def test_named_parameters_nested(self, rng):
        seq = nn.Sequential(nn.Linear(4, 8, rng), nn.Linear(8, 2, rng))
        names = [n for n, _ in seq.named_parameters()]
        assert "items.0.w" in names and "items.1.b" in names
        assert seq.param_count() == 4 * 8 + 8 + 8 * 2 + 2

    def test_state_dict_round_trip(self, rng):
        a = nn.Linear(5, 3, rng)
        b = nn.Linear(5, 3, np.random.default_rng(99))
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.w.data, b.w.data)

    def test_load_state_dict_rejects_mismatch(self, rng):
        a = nn.Linear(5, 3, rng)
        state = a.state_dict()
        del state["b"]
        with pytest.raises(KeyError):
            a.load_state_dict(state)

    def test_freeze_stops_grads(self, rng):
        lin = nn.Linear(3, 2, rng, dtype=np.float64)
        lin.freeze()
        out = lin(Tensor(np.ones((1, 3)), requires_grad=True, dtype=np.float64))
        out.sum().backward()
        assert lin.w.grad is None

    def test_module_grads_flow(self, rng):
        lin = nn.Linear(4, 3, rng, dtype=np.float64)
        x = np.random.default_rng(0).standard_normal((2, 4))
        params = lin.parameters()
        arrays = [x] + [p.data.copy() for p in params]

        def fn(xt, *pw):
            for p, w in zip(params, pw):
                p.tensor = w
            return random_projection_loss(lin(xt), np.random.default_rng(1))

        gradcheck(fn, arrays)


class TestAttention:
    @pytest.mark.parametrize("dim,heads,T_,S", [(8, 2, 3, 3), (8, 1, 2, 4),
                                                (12, 4, 3, 2), (6, 3, 4, 4),
                                                (8, 2, 1, 5)])
    def test_attention_grads(self, dim, heads, T_, S):
        rng = np.random.default_rng(5)
        mha = nn.MultiheadAttention(dim, heads, rng, kv_dim=6, dtype=np.float64)
        x = rng.standard_normal((2, T_, dim))
        ctx = rng.standard_normal((2, S, 6))
        params = mha.parameters()
        arrays = [x, ctx] + [p.data.copy() for p in params]

        def fn(xt, ct, *pw):
            for p, w in zip(params, pw):
                p.tensor = w
            return random_projection_loss(mha(xt, ct), np.random.default_rng(2))

        gradcheck(fn, arrays)

    def test_self_attention_defaults_to_input(self, rng):
        mha = nn.MultiheadAttention(8, 2, rng, dtype=np.float64)
        x = Tensor(np.random.default_rng(1).standard_normal((1, 4, 8)))
        np.testing.assert_array_equal(mha(x).data, mha(x, x).data)

    def test_head_divisibility_enforced(self, rng):
        with pytest.raises(ValueError):
            nn.MultiheadAttention(10, 3, rng)


class TestSinusoidalEmbedding:
    def test_shape_and_range(self):
        emb = nn.sinusoidal_embedding(np.array([0, 10, 500]), 32)
        assert emb.shape == (3, 32)
        assert np.all(np.abs(emb) <= 1.0 + 1e-6)

    def test_t_zero_is_cos_ones_sin_zeros(self):
        emb = nn.sinusoidal_embedding(np.array([0]), 8)
        np.testing.assert_allclose(emb[0, :4], 1.0, atol=1e-7)
        np.testing.assert_allclose(emb[0, 4:], 0.0, atol=1e-7)

    def test_distinct_timesteps_distinct_rows(self):
        emb = nn.sinusoidal_embedding(np.arange(100), 64)
        d = np.linalg.norm(emb[1:] - emb[:-1], axis=1)
        assert np.all(d > 1e-4)


class TestAdam:
    def test_first_step_is_scaled_sign(self):
        p = nn.Parameter(np.zeros(4))
        g = np.array([0.5, -2.0, 1e-3, -1e-3], dtype=np.float32)
        adam_step([p], [g], lr=0.1, eps=1e-8)
        # first step: m_hat = g, v_hat = g*g, update = lr*g/(|g|+eps)
        np.testing.assert_allclose(p.data, -0.1 * np.sign(g), rtol=1e-4)

    def test_two_steps_match_reference(self):
        p = nn.Parameter(np.array([1.0], dtype=np.float64))
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g1, g2 = np.array([0.3]), np.array([-0.7])
        m = v = 0.0
        x = 1.0
        for i, g in enumerate([g1, g2], start=1):
            m = b1 * m + (1 - b1) * g[0]
            v = b2 * v + (1 - b2) * g[0] ** 2
            x -= lr * (m / (1 - b1 ** i)) / (np.sqrt(v / (1 - b2 ** i)) + eps)
        adam_step([p], [g1], lr)
        adam_step([p], [g2], lr)
        np.testing.assert_allclose(p.data, [x], atol=1e-12)

    def test_rejects_nonfinite_grad(self):
        p = nn.Parameter(np.zeros(2))
        with pytest.raises(FloatingPointError):
            adam_step([p], [np.array([np.nan, 0.0], dtype=np.float32)], 0.1)

    def test_rejects_shape_mismatch(self):
        p = nn.Parameter(np.zeros(2))
        with pytest.raises(ValueError):
            adam_step([p], [np.zeros(3, dtype=np.float32)], 0.1)

    def test_wrapper_reads_param_grads(self, rng):
        lin = nn.Linear(3, 1, rng, dtype=np.float64)
        opt = Adam(lin.parameters(), lr=0.05)
        x = Tensor(rng.standard_normal((8, 3)))
        before = float((lin(x) ** 2.0).mean().data)
        for _ in range(20):
            opt.zero_grad()
            loss = (lin(x) ** 2.0).mean()
            loss.backward()
            opt.step()
        assert float((lin(x) ** 2.0).mean().data) < before


class TestGradClip:
    def test_norm_reported_and_scaled(self):
        a = nn.Parameter(np.zeros(3))
        b = nn.Parameter(np.zeros(4))
        a.tensor.grad = np.full(3, 2.0, dtype=np.float32)
        b.tensor.grad = np.full(4, -2.0, dtype=np.float32)
        norm = clip_grad_norm([a, b], max_norm=1.0)
        np.testing.assert_allclose(norm, np.sqrt(7 * 4.0), rtol=1e-6)
        total = np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2))
        np.testing.assert_allclose(total, 1.0, rtol=1e-6)

    def test_small_grads_untouched(self):
        a = nn.Parameter(np.zeros(2))
        g = np.array([0.1, 0.1], dtype=np.float32)
        a.tensor.grad = g.copy()
        clip_grad_norm([a], max_norm=1.0)
        np.testing.assert_array_equal(a.grad, g)


class TestCheckpointContainer:
    def test_round_trip_exact(self, tmp_path, rng):
        tensors = {
            "w": rng.standard_normal((3, 4)),
            "b64": rng.standard_normal(7),
            "f32": rng.standard_normal(5).astype(np.float32),
            "count": np.asarray(42, dtype=np.int64),
        }
        meta = {"step": 17, "frozen": True, "note": "hello"}
        path = tmp_path / "state.lsd1"
        save_checkpoint(path, tensors, meta)
        loaded, got_meta = load_checkpoint(path)
        assert got_meta == meta
        for k, v in tensors.items():
            assert loaded[k].dtype == v.dtype
            np.testing.assert_array_equal(loaded[k], v)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.lsd1"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_truncation_detected(self, tmp_path, rng):
        p = tmp_path / "state.lsd1"
        save_checkpoint(p, {"w": rng.standard_normal((8, 8))}, {})
        raw = p.read_bytes()
        p.write_bytes(raw[:-16])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(p)

    def test_module_pack_unpack_with_moments(self, tmp_path, rng):
        lin = nn.Linear(4, 2, rng)
        lin.w.tensor.grad = np.ones_like(lin.w.data)
        lin.b.tensor.grad = np.ones_like(lin.b.data)
        adam_step([lin.w, lin.b], [lin.w.grad, lin.b.grad], lr=0.1)
        path = tmp_path / "m.lsd1"
        save_checkpoint(path, pack_module(lin, "lin."), {})
        other = nn.Linear(4, 2, np.random.default_rng(123))
        tensors, _ = load_checkpoint(path)
        unpack_module(other, tensors, "lin.")
        np.testing.assert_array_equal(other.w.data, lin.w.data)
        np.testing.assert_array_equal(other.w.moment1, lin.w.moment1)
        assert other.w.steps == 1

    def test_unpack_missing_tensor_raises(self, rng):
        lin = nn.Linear(2, 2, rng)
        with pytest.raises(KeyError):
            unpack_module(lin, {}, "")


class TestRngState:
    def test_state_round_trip_bitwise(self):
        rng = np.random.default_rng(314)
        rng.standard_normal(100)
        state = rng_meta(rng)
        clone = rng_from_meta(state)
        np.testing.assert_array_equal(rng.standard_normal(50),
                                      clone.standard_normal(50))
