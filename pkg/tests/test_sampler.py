"""Reverse-process step arithmetic, step grids, and determinism."""

import numpy as np
import pytest

from slotdiff.sampler import (ddim_sample, ddim_step, ddim_timesteps,
                              ddpm_sample, ddpm_step)
from slotdiff.schedule import linear_schedule
from slotdiff.tensor import Tensor


class StubModel:
    """Deterministic fake denoiser: eps_hat = gain * z."""

    def __init__(self, gain=0.0):
        self.gain = gain
        self.calls = []

    def predict_noise(self, z, t, slots):
        self.calls.append(int(t))
        return Tensor(np.asarray(z) * self.gain)

    def cfg_predict(self, z, t, slots, weight):
        return Tensor(np.asarray(z) * self.gain * weight)


@pytest.fixture
def schedule():
    return linear_schedule(40, 1e-3, 0.05)


class TestDDPMStep:
    def test_mean_matches_closed_form(self, schedule):
        z = np.array([1.5, -0.25])
        eps = np.array([0.3, 0.9])
        t = 20
        beta = schedule.beta_at(t)
        abar = schedule.alpha_bar_at(t)
        alpha = schedule.alpha_at(t)
        want = (z - beta / np.sqrt(1 - abar) * eps) / np.sqrt(alpha)
        got = ddpm_step(z, t, eps, schedule, noise=np.zeros(2))
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_final_step_is_noiseless(self, schedule):
        z = np.array([0.7])
        eps = np.array([-0.2])
        a = ddpm_step(z, 1, eps, schedule)
        b = ddpm_step(z, 1, eps, schedule, noise=np.array([100.0]))
        np.testing.assert_array_equal(a, b)

    def test_noise_required_before_final_step(self, schedule):
        with pytest.raises(ValueError, match="noise"):
            ddpm_step(np.zeros(3), 5, np.zeros(3), schedule)

    def test_variance_choices_differ(self, schedule):
        z, eps, n = np.ones(2), np.zeros(2), np.ones(2)
        post = ddpm_step(z, 10, eps, schedule, n, variance="posterior")
        beta = ddpm_step(z, 10, eps, schedule, n, variance="beta")
        # same mean, different spread: posterior variance < beta_t
        assert np.all(post != beta)
        mean = ddpm_step(z, 10, eps, schedule, np.zeros(2))
        assert np.all(np.abs(post - mean) < np.abs(beta - mean))

    def test_rejects_unknown_variance(self, schedule):
        with pytest.raises(ValueError, match="variance"):
            ddpm_step(np.zeros(1), 2, np.zeros(1), schedule, np.zeros(1),
                      variance="learned")

    def test_beta_variance_noise_scale(self, schedule):
        z, eps = np.zeros(1), np.zeros(1)
        t = 7
        got = ddpm_step(z, t, eps, schedule, np.ones(1), variance="beta")
        np.testing.assert_allclose(got, np.sqrt(schedule.beta_at(t)),
                                   rtol=1e-12)


class TestDDIMStep:
    def test_eta_zero_recovers_x0_direction_split(self, schedule):
        z = np.array([0.4, -1.1])
        eps = np.array([0.6, 0.2])
        t_cur, t_prev = 30, 17
        abar_c = schedule.alpha_bar_at(t_cur)
        abar_p = schedule.alpha_bar_at(t_prev)
        x0 = (z - np.sqrt(1 - abar_c) * eps) / np.sqrt(abar_c)
        want = np.sqrt(abar_p) * x0 + np.sqrt(1 - abar_p) * eps
        got = ddim_step(z, t_cur, t_prev, eps, schedule, eta=0.0)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_eta_one_adjacent_equals_ddpm_posterior(self, schedule):
        rng = np.random.default_rng(3)
        z = rng.standard_normal(5)
        eps = rng.standard_normal(5)
        noise = rng.standard_normal(5)
        for t in (2, 11, 40):
            a = ddim_step(z, t, t - 1, eps, schedule, eta=1.0, noise=noise)
            b = ddpm_step(z, t, eps, schedule, noise, variance="posterior")
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_step_to_zero_draws_no_noise(self, schedule):
        z, eps = np.array([0.9]), np.array([0.1])
        # abar at t=0 is 1, so sigma^2 vanishes even at eta=1
        out = ddim_step(z, 5, 0, eps, schedule, eta=1.0)
        abar_c = schedule.alpha_bar_at(5)
        x0 = (z - np.sqrt(1 - abar_c) * eps) / np.sqrt(abar_c)
        np.testing.assert_allclose(out, x0, rtol=1e-12)

    def test_noise_required_when_sigma_positive(self, schedule):
        with pytest.raises(ValueError, match="noise"):
            ddim_step(np.zeros(1), 9, 4, np.zeros(1), schedule, eta=0.5)

    def test_rejects_bad_ordering_and_eta(self, schedule):
        with pytest.raises(ValueError):
            ddim_step(np.zeros(1), 5, 5, np.zeros(1), schedule)
        with pytest.raises(ValueError):
            ddim_step(np.zeros(1), 5, 9, np.zeros(1), schedule)
        with pytest.raises(ValueError):
            ddim_step(np.zeros(1), 5, 2, np.zeros(1), schedule, eta=-0.1)

    def test_variance_interpolates_with_eta(self, schedule):
        t_cur, t_prev = 25, 12
        abar_c = schedule.alpha_bar_at(t_cur)
        abar_p = schedule.alpha_bar_at(t_prev)
        full = (1 - abar_p) / (1 - abar_c) * (1 - abar_c / abar_p)
        z, eps = np.zeros(1), np.zeros(1)
        for eta in (0.25, 0.5, 1.0):
            # x0 and direction both vanish here, leaving the noise term alone
            got = ddim_step(z, t_cur, t_prev, eps, schedule, eta, np.ones(1))
            np.testing.assert_allclose(got, eta * np.sqrt(full), rtol=1e-12)


class TestTimestepGrid:
    def test_full_grid_is_all_steps(self):
        np.testing.assert_array_equal(ddim_timesteps(10, 10),
                                      np.arange(10, 0, -1))

    def test_endpoints_and_monotonicity(self):
        for T, steps in ((1000, 200), (1000, 50), (37, 9), (5, 2)):
            ts = ddim_timesteps(T, steps)
            assert ts[0] == T and ts[-1] == 1
            assert len(ts) == steps
            assert np.all(np.diff(ts) < 0)

    def test_single_step(self):
        np.testing.assert_array_equal(ddim_timesteps(100, 1), [100])

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ddim_timesteps(10, 11)
        with pytest.raises(ValueError):
            ddim_timesteps(10, 0)


class TestSamplingLoops:
    def test_ddpm_visits_every_timestep_descending(self, schedule):
        model = StubModel()
        slots = np.zeros((2, 3, 4))
        ddpm_sample(model, slots, schedule, (2, 1, 2, 2),
                    np.random.default_rng(0))
        assert model.calls == list(range(schedule.T, 0, -1))

    def test_ddim_eta_zero_is_deterministic(self, schedule):
        model = StubModel(gain=0.1)
        slots = np.zeros((1, 2, 4))
        kw = dict(steps=8, eta=0.0)
        a = ddim_sample(model, slots, schedule, (1, 1, 2, 2),
                        np.random.default_rng(5), **kw)
        b = ddim_sample(model, slots, schedule, (1, 1, 2, 2),
                        np.random.default_rng(5), **kw)
        assert a.tobytes() == b.tobytes()

    def test_ddim_full_grid_eta_one_matches_ddpm(self, schedule):
        model = StubModel(gain=0.05)
        slots = np.zeros((1, 2, 4))
        shape = (1, 1, 2, 2)
        a = ddpm_sample(model, slots, schedule, shape,
                        np.random.default_rng(7), dtype=np.float64)
        b = ddim_sample(model, slots, schedule, shape,
                        np.random.default_rng(7), steps=schedule.T, eta=1.0,
                        dtype=np.float64)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_cfg_weight_one_equals_conditional(self, schedule):
        slots = np.zeros((1, 2, 4))
        shape = (1, 1, 2, 2)
        a = ddim_sample(StubModel(0.2), slots, schedule, shape,
                        np.random.default_rng(9), steps=6, eta=0.0,
                        cfg_weight=None)
        b = ddim_sample(StubModel(0.2), slots, schedule, shape,
                        np.random.default_rng(9), steps=6, eta=0.0,
                        cfg_weight=1.0)
        np.testing.assert_array_equal(a, b)

    def test_cfg_weight_routes_to_guided_prediction(self, schedule):
        slots = np.zeros((1, 2, 4))
        shape = (1, 1, 2, 2)
        a = ddim_sample(StubModel(0.2), slots, schedule, shape,
                        np.random.default_rng(9), steps=6, eta=0.0,
                        cfg_weight=2.0)
        b = ddim_sample(StubModel(0.4), slots, schedule, shape,
                        np.random.default_rng(9), steps=6, eta=0.0)
        np.testing.assert_allclose(a, b, rtol=1e-6)

    def test_batch_mismatch_rejected(self, schedule):
        with pytest.raises(ValueError, match="slots"):
            ddpm_sample(StubModel(), np.zeros((3, 2, 4)), schedule,
                        (2, 1, 2, 2), np.random.default_rng(0))

    def test_output_dtype_respected(self, schedule):
        model = StubModel()
        out = ddim_sample(model, np.zeros((1, 1, 4)), schedule, (1, 1, 2, 2),
                          np.random.default_rng(1), steps=4, eta=1.0)
        assert out.dtype == np.float32
        out64 = ddim_sample(model, np.zeros((1, 1, 4)), schedule, (1, 1, 2, 2),
                            np.random.default_rng(1), steps=4, eta=1.0,
                            dtype=np.float64)
        assert out64.dtype == np.float64


class TestGaussianContraction:
    def test_perfect_model_contracts_toward_origin(self, schedule):
        """If data is the point mass at 0, the exact noise prediction is
        eps = z / sqrt(1 - abar), and every sampler must land near 0."""

        class Exact:
            def predict_noise(self, z, t, slots):
                abar = schedule.alpha_bar_at(int(t))
                return Tensor(np.asarray(z) / np.sqrt(1.0 - abar))

        slots = np.zeros((4, 1, 2))
        out = ddim_sample(Exact(), slots, schedule, (4, 8),
                          np.random.default_rng(11), steps=schedule.T,
                          eta=0.0, dtype=np.float64)
        assert np.max(np.abs(out)) < 1e-6
