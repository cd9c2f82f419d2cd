import numpy as np
import pytest
from scipy.stats import norm

from hydroflock import nets
from hydroflock.nets import EncoderConfig, PolicyConfig
from hydroflock.network import ReservoirState, WeatherVector
from hydroflock.policy import act, encode_state, pack_gradient_input
from hydroflock.rng import stream


def small_enc_cfg():
    return EncoderConfig(gnn_dim=4, lstm_hidden=5, history_window=3, forecast_horizon=2)


def small_pol_cfg(**kw):
    base = dict(layers=(8, 6), mixer_hidden=4, grad_width=2, xi=0.1)
    base.update(kw)
    return PolicyConfig(**base)


def state(h=5.0, q_in=1.0, q_out=2.0, demand=3.0):
    return ReservoirState(h=h, q_in=q_in, q_out=q_out, demand=demand)


class TestEncodeState:
    def test_output_dimension_bookkeeping(self):
        cfg = small_enc_cfg()
        params = nets.init_encoder(stream(0, "enc"), cfg)
        enc = encode_state(
            params, cfg, state(), [(state(), np.array([0.9, 2.0]))], [state()], np.zeros((2, 3))
        )
        assert enc.shape == (7 + 4 + 5 + 2 * 3,)
        assert enc.shape == (cfg.encoded_dim,)

    def test_neighbor_permutation_invariance(self):
        cfg = small_enc_cfg()
        params = nets.init_encoder(stream(1, "enc"), cfg)
        nbrs = [
            (state(h=3.0), np.array([0.9, 1.0])),
            (state(h=7.0), np.array([0.8, 4.0])),
            (state(h=1.0), np.array([0.7, 9.0])),
        ]
        a = encode_state(params, cfg, state(), nbrs, [state()], np.zeros((2, 3)))
        b = encode_state(params, cfg, state(), nbrs[::-1], [state()], np.zeros((2, 3)))
        assert np.allclose(a, b, atol=1e-12)

    def test_null_network_reduces_to_state_and_forecast(self):
        cfg = small_enc_cfg()
        params = {k: np.zeros_like(v) for k, v in nets.init_encoder(stream(2, "enc"), cfg).items()}
        own = state()
        forecast = np.arange(6.0).reshape(2, 3)
        enc = encode_state(params, cfg, own, [(state(), np.array([0.9, 2.0]))], [own], forecast)
        np.testing.assert_array_equal(enc[:7], own.as_array())
        np.testing.assert_array_equal(enc[7 : 7 + 9], np.zeros(9))
        np.testing.assert_array_equal(enc[16:], forecast.ravel())

    def test_short_history_zero_padded(self):
        cfg = small_enc_cfg()
        params = nets.init_encoder(stream(3, "enc"), cfg)
        short = encode_state(params, cfg, state(), [], [state()], np.zeros((0, 3)))
        padded = encode_state(
            params, cfg, state(), [], [ReservoirState(h=0.0, weather=WeatherVector(0, 0, 0)), state()],
            np.zeros((0, 3)),
        )
        assert short.shape == padded.shape


class TestInjection:
    def test_zero_strength_identity(self):
        cfg = small_pol_cfg(xi=0.0)
        params = nets.init_policy(stream(4, "pol"), 5, 2, cfg)
        h1 = np.ones((1, 8))
        g = np.ones((1, 6))
        h2 = nets.inject_gradients(params, h1, g, 0.0)
        assert h2 is h1

    def test_zero_gradients_zero_bias_identity(self):
        cfg = small_pol_cfg()
        params = nets.init_policy(stream(5, "pol"), 5, 2, cfg)
        # biases initialize to zero, so a zero gradient vector adds nothing
        h1 = np.full((1, 8), 3.0)
        h2 = nets.inject_gradients(params, h1, np.zeros((1, 6)), cfg.xi)
        np.testing.assert_array_equal(h2, h1)

    def test_shift_scales_linearly_in_xi(self):
        params = nets.init_policy(stream(6, "pol"), 5, 2, small_pol_cfg())
        rng = np.random.default_rng(0)
        h1 = rng.standard_normal((1, 8))
        g = rng.standard_normal((1, 6))
        d1 = np.linalg.norm(nets.inject_gradients(params, h1, g, 0.05) - h1)
        d2 = np.linalg.norm(nets.inject_gradients(params, h1, g, 0.10) - h1)
        assert d2 / d1 == pytest.approx(2.0, abs=1e-9)


class TestAct:
    def test_deterministic_zero_head_is_midpoint(self):
        cfg = small_pol_cfg()
        params = {k: np.zeros_like(v) for k, v in nets.init_policy(stream(7, "pol"), 5, 2, cfg).items()}
        decision = act(params, cfg, np.ones(5), np.zeros(6), a_max=10.0, deterministic=True)
        np.testing.assert_allclose(decision.releases, [5.0, 5.0])

    def test_samples_respect_bounds(self):
        cfg = small_pol_cfg()
        params = nets.init_policy(stream(8, "pol"), 5, 3, cfg)
        rng = stream(8, "act")
        enc = np.linspace(-1, 1, 5)
        for _ in range(10_000):
            d = act(params, cfg, enc, np.zeros(6), a_max=7.5, rng=rng)
            assert np.all(d.releases > 0.0) and np.all(d.releases < 7.5)

    def test_log_prob_matches_cdf_derivative(self):
        """Quadrature-style oracle: differentiate the squashed CDF numerically."""
        cfg = small_pol_cfg()
        params = nets.init_policy(stream(9, "pol"), 4, 1, cfg)
        rng = stream(9, "act")
        enc = np.array([0.3, -0.4, 1.1, 0.0])
        a_max = 10.0
        for _ in range(25):
            d = act(params, cfg, enc, np.zeros(6), a_max=a_max, rng=rng)
            a = d.releases[0]
            mu, sigma = d.mu_raw[0], np.exp(d.log_std[0])

            def cdf(x):
                u = np.log(x / a_max) - np.log(1.0 - x / a_max)  # inverse squash
                return norm.cdf((u - mu) / sigma)

            h = 1e-4
            # fourth-order central difference of the CDF
            dens = (8 * (cdf(a + h) - cdf(a - h)) - (cdf(a + 2 * h) - cdf(a - 2 * h))) / (12 * h)
            assert np.exp(d.log_prob) == pytest.approx(dens, rel=1e-6)

    def test_log_prob_finite_over_draws(self):
        cfg = small_pol_cfg()
        params = nets.init_policy(stream(10, "pol"), 4, 2, cfg)
        rng = stream(10, "act")
        for _ in range(2000):
            d = act(params, cfg, np.ones(4), np.zeros(6), a_max=3.0, rng=rng)
            assert np.isfinite(d.log_prob)
            assert np.all(np.isfinite(d.releases))


def test_pack_gradient_input_pads_and_truncates():
    packed = pack_gradient_input(np.array([1.0]), np.array([2.0, 3.0, 4.0]), np.array([]), 2)
    np.testing.assert_array_equal(packed, [1.0, 0.0, 2.0, 3.0, 0.0, 0.0])
