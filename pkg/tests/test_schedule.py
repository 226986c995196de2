"""Schedule invariants and forward-process arithmetic."""

import numpy as np
import pytest

from slotdiff.schedule import (NoiseSchedule, constant_schedule, forward_noise,
                               linear_schedule)


class TestScheduleConstruction:
    def test_default_linear_anchors(self):
        s = linear_schedule()
        assert s.T == 1000
        assert s.beta[0] == 1e-4 and s.beta[-1] == 0.02
        # frozen reference values for the default schedule
        np.testing.assert_allclose(s.alpha_bar_at(1), 0.9999, rtol=1e-12)
        np.testing.assert_allclose(s.alpha_bar_at(500), 0.0785872428817782,
                                   rtol=1e-10)
        np.testing.assert_allclose(s.alpha_bar_at(1000), 4.03582976537568e-05,
                                   rtol=1e-10)

    def test_alpha_bar_strictly_decreasing(self):
        s = linear_schedule()
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.alpha_bar > 0) and np.all(s.alpha_bar < 1)

    def test_alpha_bar_at_zero_is_one(self):
        assert linear_schedule(10).alpha_bar_at(0) == 1.0

    def test_constant_schedule_closed_form(self):
        c = 0.013
        s = constant_schedule(200, c)
        t = np.arange(1, 201)
        np.testing.assert_allclose(s.alpha_bar_at(t), (1.0 - c) ** t, rtol=1e-12)

    def test_posterior_variance_zero_at_first_step(self):
        s = linear_schedule()
        assert s.posterior_variance(1) == 0.0
        assert s.posterior_variance(500) > 0.0

    @pytest.mark.parametrize("kwargs", [dict(T=0), dict(beta_start=0.0),
                                        dict(beta_end=1.0),
                                        dict(beta_start=0.5, beta_end=0.1)])
    def test_invalid_linear_params(self, kwargs):
        with pytest.raises(ValueError):
            linear_schedule(**{**dict(T=10, beta_start=1e-4, beta_end=0.02),
                               **kwargs})

    def test_direct_beta_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.1, 1.5]))

    def test_timestep_range_enforced(self):
        s = linear_schedule(10)
        with pytest.raises(ValueError):
            s.beta_at(0)
        with pytest.raises(ValueError):
            s.alpha_bar_at(11)


class TestForwardNoise:
    def test_matches_manual_formula(self):
        s = linear_schedule(100)
        rng = np.random.default_rng(0)
        z0 = rng.standard_normal((2, 3, 4, 4))
        eps = rng.standard_normal((2, 3, 4, 4))
        t = 37
        got = forward_noise(z0, t, eps, s)
        abar = s.alpha_bar_at(t)
        np.testing.assert_allclose(got, np.sqrt(abar) * z0
                                   + np.sqrt(1 - abar) * eps, rtol=1e-12)

    def test_per_sample_timesteps(self):
        s = linear_schedule(50)
        rng = np.random.default_rng(1)
        z0 = rng.standard_normal((3, 2, 2))
        eps = rng.standard_normal((3, 2, 2))
        t = np.array([1, 25, 50])
        batched = forward_noise(z0, t, eps, s)
        for i, ti in enumerate(t):
            row = forward_noise(z0[i:i + 1], int(ti), eps[i:i + 1], s)
            np.testing.assert_allclose(batched[i], row[0], rtol=1e-12)

    def test_preserves_float32(self):
        s = linear_schedule(10)
        z0 = np.zeros((1, 2, 2), dtype=np.float32)
        eps = np.ones((1, 2, 2), dtype=np.float32)
        assert forward_noise(z0, 5, eps, s).dtype == np.float32

    def test_shape_mismatch_raises(self):
        s = linear_schedule(10)
        with pytest.raises(ValueError):
            forward_noise(np.zeros((2, 2)), 1, np.zeros((2, 3)), s)

    def test_t_equal_T_mostly_noise(self):
        s = linear_schedule(1000)
        z0 = np.full((1, 8), 100.0)
        eps = np.ones((1, 8))
        zt = forward_noise(z0, 1000, eps, s)
        # sqrt(abar_T) ~ 6.4e-3, so the signal is nearly gone
        np.testing.assert_allclose(zt, 100.0 * 0.00635281808757 + np.sqrt(
            1 - 4.03582976537568e-05), rtol=1e-9)
