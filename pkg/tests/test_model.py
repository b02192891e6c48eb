import numpy as np
import pytest

from ratetrack import autodiff as ad
from ratetrack.autodiff import backward, gradient_check
from ratetrack.channel import RouteTrace
from ratetrack.estimator import RatePredictor
from ratetrack.links import default_links
from ratetrack.model import (ModelConfig, build_window, featurize, forward,
                             init_params, load_model, mse_loss, save_model)
from ratetrack.ratemap import rate_from_snr_db, run_bandit_masking

LINKS = default_links()

SMALL = dict(window=4, embed_dim=8, n_heads=2, ffn_dim=16, head_hidden=8)


def small_config(**overrides):
    kw = dict(SMALL)
    kw.update(overrides)
    return ModelConfig.for_links(LINKS, **kw)


def random_windows(config, n, seed=0):
    rng = np.random.default_rng(seed)
    x = np.zeros((n, config.window, config.n_links, 3))
    flags = rng.integers(0, 2, size=(n, config.window, config.n_links))
    snrs = rng.uniform(-10, 40, size=flags.shape)
    for j, link in enumerate(LINKS):
        rates = rate_from_snr_db(snrs[..., j], link) / config.rate_unit
        x[..., j, 0] = flags[..., j]
        x[..., j, 1] = flags[..., j] * snrs[..., j]
        x[..., j, 2] = flags[..., j] * rates
    return x


def masked_route(idx=0, seed=0, steps=120, k=1, snr_db=None):
    rng = np.random.default_rng(seed)
    if snr_db is None:
        snr_db = rng.uniform(0, 30, size=(steps, 4))
    rate = np.column_stack([rate_from_snr_db(snr_db[:, j], l) for j, l in enumerate(LINKS)])
    tr = RouteTrace(idx, seed, "medium", 50.0, snr_db, rate)
    tr.mask, tr.obs_snr_db = run_bandit_masking(snr_db, LINKS, k=k, seed=seed)
    return tr


class TestFeaturize:
    def test_unmeasured_links_zero_triplets(self):
        feats = featurize(np.full((5, 4), np.nan), np.zeros((5, 4), dtype=int), LINKS)
        assert np.all(feats == 0)

    def test_measured_at_zero_db(self):
        obs = np.full((1, 4), np.nan)
        obs[0, 0] = 0.0
        mask = np.zeros((1, 4), dtype=int)
        mask[0, 0] = 1
        feats = featurize(obs, mask, LINKS)
        # 0.6 * log2(2) = 0.6 bits/s/Hz over 100 MHz -> 60 Mbps
        np.testing.assert_allclose(feats[0, 0], [1.0, 0.0, 60e6 / 1e8], rtol=1e-12)

    def test_rate_channel_capped_above_saturation(self):
        obs = np.full((1, 4), np.nan)
        obs[0, 0] = 50.0
        mask = np.zeros((1, 4), dtype=int)
        mask[0, 0] = 1
        feats = featurize(obs, mask, LINKS)
        assert feats[0, 0, 2] == pytest.approx(LINKS[0].cap_bps / 1e8, rel=1e-12)


class TestBuildWindow:
    def test_window_of_one_is_previous_step(self):
        feats = np.arange(5 * 4 * 3, dtype=float).reshape(5, 4, 3)
        np.testing.assert_array_equal(build_window(feats, 3, 1), feats[2:3])

    def test_window_is_strictly_past(self):
        feats = np.arange(10 * 4 * 3, dtype=float).reshape(10, 4, 3)
        win = build_window(feats, 7, 4)
        np.testing.assert_array_equal(win, feats[3:7])

    def test_too_early_rejected(self):
        feats = np.zeros((10, 4, 3))
        with pytest.raises(ValueError):
            build_window(feats, 3, 4)

    def test_shift_invariance(self):
        feats = np.random.default_rng(0).random((12, 4, 3))
        np.testing.assert_array_equal(build_window(feats, 8, 4),
                                      build_window(np.roll(feats, -1, axis=0), 7, 4))


class TestForward:
    def test_outputs_within_caps(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        x = random_windows(config, 500, seed=1)
        out = forward(x, params, config).data
        assert np.all(out >= 0)
        assert np.all(out <= config.caps_scaled + 1e-12)

    def test_antenna_permutation_equivariance_with_equal_embeddings(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        params["antenna_embed"].data[:] = params["antenna_embed"].data[0]
        # equalize per-link caps too, so the cap stage is symmetric
        config.rate_caps_bps = tuple([LINKS[0].cap_bps] * 4)
        x = random_windows(config, 16, seed=2)
        perm = np.array([2, 0, 3, 1])
        out = forward(x, params, config).data
        out_p = forward(x[:, :, perm, :], params, config).data
        np.testing.assert_allclose(out_p, out[:, perm], rtol=1e-9, atol=1e-12)

    def test_zero_channels_for_unmeasured_never_matter(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        x = random_windows(config, 8, seed=3)
        assert np.all(x[x[..., 0] == 0] == 0)
        out1 = forward(x, params, config).data
        out2 = forward(x.copy(), params, config).data
        assert np.array_equal(out1, out2)

    def test_shape_mismatch_rejected(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        with pytest.raises(ValueError, match="window shape"):
            forward(np.zeros((2, 3, 4, 3)), params, config)

    def test_affine_identity_at_init(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        np.testing.assert_array_equal(params["affine.scale"].data, np.ones(3))
        np.testing.assert_array_equal(params["affine.shift"].data, np.zeros(3))

    def test_deterministic_without_dropout(self):
        config = small_config(dropout=0.2)
        params = init_params(config, np.random.default_rng(0))
        x = random_windows(config, 4, seed=4)
        a = forward(x, params, config, train=False).data
        b = forward(x, params, config, train=False).data
        assert np.array_equal(a, b)


class TestLoss:
    def test_zero_when_equal(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        pred = forward(random_windows(config, 3), params, config)
        assert float(mse_loss(pred, pred.data.copy()).data) == 0.0

    def test_scalar_case(self):
        pred = ad.Tensor(np.array([[2.0]]))
        assert float(mse_loss(pred, np.array([[0.0]])).data) == 4.0

    def test_unit_homogeneity(self):
        pred = ad.Tensor(np.array([[1.0, 3.0]]))
        target = np.array([[0.0, 1.0]])
        base = float(mse_loss(pred, target).data)
        scaled = float(mse_loss(ad.scale(pred, 10.0), target * 10.0).data)
        assert scaled == pytest.approx(100.0 * base, rel=1e-12)


class TestGradients:
    def test_full_predictor_matches_finite_differences(self):
        config = small_config()
        params = init_params(config, np.random.default_rng(7))
        # check at a generic point: zero-initialized biases would leave many
        # relu preactivations exactly on the kink, where the subgradient and
        # the central difference legitimately disagree
        jitter = np.random.default_rng(10)
        for _, t in params.items():
            t.data = t.data + jitter.normal(0.0, 0.05, size=t.data.shape)
        x = random_windows(config, 2, seed=8)
        target = np.random.default_rng(9).uniform(0.5, 3.0, size=(2, 4))

        def closure():
            return mse_loss(forward(x, params, config, train=False), target)

        errors = gradient_check(closure, params, tolerance=1e-4)
        assert max(errors.values()) <= 1e-4


class TestSerialization:
    def test_round_trip_forward_bit_identical(self, tmp_path):
        config = small_config()
        params = init_params(config, np.random.default_rng(0))
        x = random_windows(config, 8, seed=5)
        before = forward(x, params, config).data
        save_model(tmp_path / "m.json", config, params)
        config2, params2 = load_model(tmp_path / "m.json")
        after = forward(x, params2, config2).data
        assert np.array_equal(before, after)

    def test_value_exact_round_trip(self, tmp_path):
        config = small_config()
        params = init_params(config, np.random.default_rng(3))
        save_model(tmp_path / "m.json", config, params)
        _, params2 = load_model(tmp_path / "m.json")
        for name, t in params.items():
            assert np.array_equal(t.data, params2[name].data)


class TestTraining:
    def test_constant_rate_dataset_is_learned(self):
        snr = np.full((300, 4), 10.0)
        routes = [masked_route(i, i, k=4, snr_db=snr.copy()) for i in range(2)]
        pred = RatePredictor(dropout=0.0, epochs=50, learning_rate=3e-3,
                             seed=0, **SMALL)
        pred.fit(routes, links=LINKS)
        assert min(h["train_loss"] for h in pred.history_) < 1e-6

    def test_fixed_seed_identical_epoch0_loss(self):
        routes = [masked_route(i, i) for i in range(2)]
        losses = []
        for _ in range(2):
            p = RatePredictor(dropout=0.2, epochs=1, seed=3, **SMALL)
            p.fit(routes, links=LINKS)
            losses.append(p.history_[0]["train_loss"])
        assert losses[0] == losses[1]

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            RatePredictor(**SMALL).fit([], links=LINKS)

    def test_best_validation_params_selected(self):
        routes = [masked_route(i, i) for i in range(2)]
        val = [masked_route(5, 5)]
        p = RatePredictor(dropout=0.2, epochs=3, seed=1, **SMALL)
        p.fit(routes, links=LINKS, val_routes=val)
        best = min(h["val_loss"] for h in p.history_)
        assert p._split_loss([(featurize(val[0].obs_snr_db, val[0].mask, LINKS),
                               val[0].rate_bps / 1e8)], p.params_, p.config_) == pytest.approx(best)


class TestPredictSeries:
    def fitted(self):
        routes = [masked_route(i, i) for i in range(2)]
        p = RatePredictor(dropout=0.0, epochs=1, seed=0, **SMALL)
        return p.fit(routes, links=LINKS)

    def test_output_length(self):
        p = self.fitted()
        route = masked_route(8, 8, steps=100)
        assert p.predict(route).shape == (100 - p.window, 4)

    def test_bitwise_deterministic(self):
        p = self.fitted()
        route = masked_route(8, 8)
        assert np.array_equal(p.predict(route), p.predict(route))

    def test_causality(self):
        p = self.fitted()
        route = masked_route(8, 8, steps=60)
        base = p.predict(route)
        w = p.window
        t_check = 30
        # perturb observations at s >= t_check: predictions before must not move
        tampered = masked_route(8, 8, steps=60)
        tampered.obs_snr_db[t_check:][tampered.mask[t_check:] == 1] += 5.0
        out = p.predict(tampered)
        assert np.array_equal(base[:t_check - w], out[:t_check - w])
        assert not np.array_equal(base[t_check - w:], out[t_check - w:])

    def test_route_shorter_than_window_rejected(self):
        p = self.fitted()
        with pytest.raises(ValueError):
            p.predict(masked_route(9, 9, steps=p.window))

    def test_unfitted_predict_rejected(self):
        with pytest.raises(RuntimeError):
            RatePredictor().predict(masked_route(1, 1))
