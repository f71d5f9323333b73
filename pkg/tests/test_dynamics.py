import numpy as np
import pytest

from emberplan import autodiff as ad
from emberplan import dynamics as dm
from gradcheck import check_gradients


def make_params(resolution=8, seed=0):
    return dm.init_dpm_params(resolution, np.random.default_rng(seed))


def random_grid(rng, resolution):
    return rng.uniform(0.0, 1.0, (2, resolution, resolution))


class TestShapes:
    @pytest.mark.parametrize("resolution", [2, 5, 8, 30])
    def test_latent_is_sixteen_dimensional(self, resolution):
        params = make_params(resolution)
        rng = np.random.default_rng(1)
        z, (h, c) = dm.encode(random_grid(rng, resolution), None, params)
        assert z.value.shape == (16,)
        assert h.value.shape == (dm.LSTM_HIDDEN,)
        assert c.value.shape == (dm.LSTM_HIDDEN,)

    @pytest.mark.parametrize("resolution", [2, 5, 8, 30])
    def test_decode_matches_grid_shape(self, resolution):
        params = make_params(resolution)
        rng = np.random.default_rng(2)
        pred = dm.decode(rng.normal(size=16), params)
        assert pred.value.shape == (resolution, resolution)
        assert np.all(np.isfinite(pred.value))

    def test_resolution_mismatch_rejected(self):
        params = make_params(8)
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError, match="resolution"):
            dm.encode(random_grid(rng, 9), None, params)

    def test_bad_latent_rejected(self):
        with pytest.raises(ValueError, match="16"):
            dm.decode(np.zeros(8), make_params(8))

    def test_tiny_resolution_rejected(self):
        with pytest.raises(ValueError, match="resolution"):
            dm.init_dpm_params(1, np.random.default_rng(0))


class TestDeterminism:
    def test_zero_input_zero_hidden_gives_zero_latent(self):
        # Biases start at zero, so the all-zero grid with a fresh carry flows
        # zeros end to end.
        params = make_params(8)
        z, _ = dm.encode(np.zeros((2, 8, 8)), None, params)
        np.testing.assert_array_equal(z.value, np.zeros(16))

    def test_same_seed_same_params(self):
        a = make_params(8, seed=5)
        b = make_params(8, seed=5)
        for name in a.values:
            np.testing.assert_array_equal(a.values[name].value,
                                          b.values[name].value)

    def test_encode_is_reproducible(self):
        params = make_params(8)
        rng = np.random.default_rng(4)
        grid = random_grid(rng, 8)
        z1, (h1, c1) = dm.encode(grid, None, params)
        z2, (h2, c2) = dm.encode(grid, None, params)
        np.testing.assert_array_equal(z1.value, z2.value)
        np.testing.assert_array_equal(h1.value, h2.value)
        np.testing.assert_array_equal(c1.value, c2.value)


class TestHiddenCarry:
    def test_sequence_order_changes_the_latent(self):
        params = make_params(8, seed=7)
        rng = np.random.default_rng(7)
        g1, g2 = random_grid(rng, 8), random_grid(rng, 8)
        _, hidden = dm.encode(g1, None, params)
        z_ab, _ = dm.encode(g2, (hidden[0].value, hidden[1].value), params)
        _, hidden = dm.encode(g2, None, params)
        z_ba, _ = dm.encode(g1, (hidden[0].value, hidden[1].value), params)
        assert np.abs(z_ab.value - z_ba.value).max() > 1e-8

    def test_carry_differs_from_fresh_start(self):
        params = make_params(8, seed=8)
        rng = np.random.default_rng(8)
        g1, g2 = random_grid(rng, 8), random_grid(rng, 8)
        _, hidden = dm.encode(g1, None, params)
        z_carry, _ = dm.encode(g2, (hidden[0].value, hidden[1].value), params)
        z_fresh, _ = dm.encode(g2, None, params)
        assert np.abs(z_carry.value - z_fresh.value).max() > 1e-8


class TestLoss:
    def test_identical_grids_give_zero(self):
        rng = np.random.default_rng(9)
        g = rng.uniform(size=(8, 8))
        assert dm.dpm_loss(g, g.copy()).value == 0.0

    def test_unit_offset_gives_one(self):
        rng = np.random.default_rng(10)
        g = rng.uniform(size=(8, 8))
        assert dm.dpm_loss(g + 1.0, g).value == pytest.approx(1.0, abs=1e-12)

    def test_matches_direct_mean_square(self):
        rng = np.random.default_rng(11)
        a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        assert dm.dpm_loss(a, b).value == pytest.approx(
            np.mean((a - b) ** 2), abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            dm.dpm_loss(np.zeros((8, 8)), np.zeros((9, 9)))

    def test_loss_is_non_negative(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
            assert dm.dpm_loss(a, b).value >= 0.0


class TestTargetModes:
    def test_next_returns_upcoming_grid(self):
        rng = np.random.default_rng(13)
        b_t, b_next = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        np.testing.assert_array_equal(dm.target_for_mode("next", b_t, b_next),
                                      b_next)

    def test_current_returns_input_grid(self):
        rng = np.random.default_rng(14)
        b_t, b_next = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        np.testing.assert_array_equal(dm.target_for_mode("current", b_t, b_next),
                                      b_t)

    def test_delta_of_equal_grids_is_zero(self):
        g = np.random.default_rng(15).uniform(size=(8, 8))
        np.testing.assert_array_equal(dm.target_for_mode("delta", g, g.copy()),
                                      np.zeros((8, 8)))

    def test_delta_is_difference(self):
        rng = np.random.default_rng(16)
        b_t, b_next = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        np.testing.assert_allclose(dm.target_for_mode("delta", b_t, b_next),
                                   b_next - b_t, atol=1e-15)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            dm.target_for_mode("previous", np.zeros((4, 4)), np.zeros((4, 4)))

    def test_mismatched_grids_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            dm.target_for_mode("next", np.zeros((4, 4)), np.zeros((5, 5)))


class TestGradients:
    def test_full_model_gradient_check(self):
        params = make_params(8, seed=17)
        rng = np.random.default_rng(17)
        g1, g2 = random_grid(rng, 8), random_grid(rng, 8)
        target = rng.uniform(size=(8, 8))

        def build(values):
            p = dm.DpmParams(8, values)
            _, hidden = dm.encode(g1, None, p)
            z, _ = dm.encode(g2, hidden, p)
            return dm.dpm_loss(dm.decode(z, p), target)

        check_gradients(build, params.values, rng, n_entries=12)

    def test_loss_reaches_encoder_weights(self):
        params = make_params(8, seed=18)
        rng = np.random.default_rng(18)
        z, _ = dm.encode(random_grid(rng, 8), None, params)
        loss = dm.dpm_loss(dm.decode(z, params), rng.uniform(size=(8, 8)))
        grads = ad.gradients(loss, params.values)
        assert np.abs(grads["conv1_w"]).max() > 0.0
        assert np.abs(grads["lstm_w"]).max() > 0.0
        assert np.abs(grads["tconv2_w"]).max() > 0.0
