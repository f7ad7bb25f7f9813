import numpy as np
import pytest

from uqcurate.data import SplitSpec, split, undersample_balance
from uqcurate.errors import ConfigError, ModelStateError
from uqcurate.models import (
    Ensemble,
    MlpModel,
    ModelConfig,
    hetero_raw_outputs,
    load_ensemble,
    load_model,
    predict_ensemble,
    predict_mc_dropout,
    predict_vanilla,
    save_ensemble,
    save_model,
    train_ensemble,
    train_model,
)
from uqcurate.nncore import make_rng, softmax


def small_config(head="homo", **overrides):
    defaults = dict(
        input_dim=10, hidden_layers=2, hidden_width=16, head=head,
        max_epochs=40, logit_samples=20,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def fit_small(head="homo", seed=11, splits=None, **overrides):
    balanced, val, _ = splits
    cfg = small_config(head, **overrides)
    model = MlpModel(cfg, seed=seed)
    return train_model(model, balanced.X, balanced.y, val.X, val.y)


class TestConfig:
    def test_defaults_match_protocol(self):
        cfg = ModelConfig(input_dim=20)
        assert (cfg.hidden_layers, cfg.hidden_width, cfg.dropout) == (3, 300, 0.1)
        assert cfg.patience == 5 and cfg.n_classes == 2

    def test_head_aliases(self):
        assert ModelConfig(input_dim=2, head="hetero").head == "heteroscedastic"
        with pytest.raises(ConfigError):
            ModelConfig(input_dim=2, head="bogus")

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_dim=2, dropout=1.0)
        with pytest.raises(ConfigError):
            ModelConfig(input_dim=2, patience=0)
        with pytest.raises(ConfigError):
            ModelConfig(input_dim=2, n_classes=3)


class TestTraining:
    def test_separable_blobs_reach_high_accuracy(self, separable_pool):
        train, val, test = split(separable_pool, SplitSpec(seed=3))
        balanced = undersample_balance(train, make_rng(5))
        model = MlpModel(small_config("homo", max_epochs=60), seed=11)
        train_model(model, balanced.X, balanced.y, val.X, val.y)
        probs = predict_vanilla(model, balanced.X)
        accuracy = np.mean((probs[:, 1] > probs[:, 0]).astype(int) == balanced.y)
        assert accuracy >= 0.99

    def test_empty_split_rejected(self, small_splits):
        balanced, val, _ = small_splits
        model = MlpModel(small_config(), seed=1)
        with pytest.raises(ConfigError):
            train_model(model, balanced.X[:0], balanced.y[:0], val.X, val.y)

    def test_runs_to_max_epochs_when_val_keeps_improving(self, separable_pool):
        # on cleanly separable data the validation loss improves every epoch,
        # so patience never triggers
        train, val, _ = split(separable_pool, SplitSpec(seed=3))
        balanced = undersample_balance(train, make_rng(5))
        model = MlpModel(small_config("homo", max_epochs=8, patience=5), seed=11)
        train_model(model, balanced.X, balanced.y, val.X, val.y)
        losses = [r.val_loss for r in model.history]
        assert losses == sorted(losses, reverse=True) and len(set(losses)) == len(losses)
        assert len(model.history) == 8

    def test_same_seed_twice_identical(self, small_splits):
        m1 = fit_small("hetero", splits=small_splits, max_epochs=12)
        m2 = fit_small("hetero", splits=small_splits, max_epochs=12)
        assert m1.history == m2.history
        for a, b in zip(m1.parameters(), m2.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_checkpoint_has_minimal_val_loss(self, small_splits):
        model = fit_small("homo", splits=small_splits)
        balanced, val, _ = small_splits
        recorded = [r.val_loss for r in model.history]
        assert model.best_val_loss == min(recorded)
        # restored weights reproduce the recorded best loss
        eval_now = model.evaluate_loss(val.X, val.y, eval_seed=0)
        assert eval_now == pytest.approx(model.best_val_loss, rel=1e-9)

    def test_early_stopping_bounds_epochs(self, small_splits):
        model = fit_small("homo", splits=small_splits, max_epochs=200, patience=3)
        # stopped well before max_epochs on this noisy pool
        assert len(model.history) < 200
        best_epoch = int(np.argmin([r.val_loss for r in model.history]))
        assert len(model.history) - 1 - best_epoch >= 3


class TestPrediction:
    def test_untrained_model_rejected(self, small_splits):
        model = MlpModel(small_config(), seed=0)
        with pytest.raises(ModelStateError):
            predict_vanilla(model, small_splits[0].X)

    def test_zeroed_head_gives_uniform(self, small_splits):
        model = fit_small("homo", splits=small_splits)
        model.head.w[...] = 0.0
        model.head.b[...] = 0.0
        probs = predict_vanilla(model, small_splits[2].X)
        np.testing.assert_allclose(probs, 0.5, atol=1e-15)

    def test_outputs_are_distributions(self, small_splits):
        for head in ("homo", "hetero"):
            model = fit_small(head, splits=small_splits, max_epochs=10)
            probs = predict_vanilla(model, small_splits[2].X)
            assert np.all(probs >= 0)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_degenerate_sigma_matches_softmax_mu(self, small_splits):
        model = fit_small("hetero", splits=small_splits, max_epochs=10)
        model.head_sigma.w[...] = 0.0
        model.head_sigma.b[...] = -40.0  # softplus(-40) ~ 4e-18
        X = small_splits[2].X[:20]
        mu, _ = model.raw_outputs(X)
        probs = predict_vanilla(model, X)
        np.testing.assert_allclose(probs, softmax(mu), atol=1e-6)


class TestMcDropout:
    def test_zero_dropout_warns_and_repeats(self, small_splits):
        model = fit_small("homo", splits=small_splits, dropout=0.0, max_epochs=10)
        with pytest.warns(UserWarning):
            samples = predict_mc_dropout(model, small_splits[2].X[:5], 4, make_rng(0))
        for t in range(1, samples.shape[1]):
            np.testing.assert_array_equal(samples[:, 0], samples[:, t])

    def test_samples_are_distributions(self, small_splits):
        model = fit_small("homo", splits=small_splits, max_epochs=10)
        samples = predict_mc_dropout(model, small_splits[2].X[:10], 30, make_rng(0))
        assert samples.shape == (10, 30, 2)
        np.testing.assert_allclose(samples.sum(axis=2), 1.0, atol=1e-9)

    def test_passes_disagree_with_active_dropout(self, small_splits):
        model = fit_small("homo", splits=small_splits, max_epochs=10)
        samples = predict_mc_dropout(model, small_splits[2].X[:10], 30, make_rng(0))
        assert samples[:, :, 1].var(axis=1).max() > 0

    def test_zero_passes_rejected(self, small_splits):
        model = fit_small("homo", splits=small_splits, max_epochs=5)
        with pytest.raises(ConfigError):
            predict_mc_dropout(model, small_splits[2].X, 0, make_rng(0))

    def test_deterministic_given_seed(self, small_splits):
        model = fit_small("homo", splits=small_splits, max_epochs=5)
        s1 = predict_mc_dropout(model, small_splits[2].X[:5], 7, make_rng(3))
        s2 = predict_mc_dropout(model, small_splits[2].X[:5], 7, make_rng(3))
        np.testing.assert_array_equal(s1, s2)


class TestEnsemble:
    def test_single_member_matches_vanilla(self, small_splits):
        balanced, val, test = small_splits
        ens = train_ensemble(small_config("homo", max_epochs=10), 1,
                             balanced.X, balanced.y, val.X, val.y, seed=5)
        np.testing.assert_array_equal(
            predict_ensemble(ens, test.X)[:, 0, :],
            predict_vanilla(ens.members[0], test.X),
        )

    def test_identical_seeds_give_identical_samples(self, small_splits):
        balanced, val, test = small_splits
        ens = train_ensemble(small_config("homo", max_epochs=10), 3,
                             balanced.X, balanced.y, val.X, val.y,
                             seed=0, member_seeds=[9, 9, 9])
        samples = predict_ensemble(ens, test.X)
        np.testing.assert_array_equal(samples[:, 0], samples[:, 1])
        np.testing.assert_array_equal(samples[:, 0], samples[:, 2])

    def test_different_seeds_disagree(self, small_splits):
        balanced, val, test = small_splits
        ens = train_ensemble(small_config("homo", max_epochs=10), 5,
                             balanced.X, balanced.y, val.X, val.y, seed=5)
        samples = predict_ensemble(ens, test.X)
        disagreement = samples[:, :, 1].var(axis=1).mean()
        assert disagreement > 0

    def test_untrained_member_rejected(self, small_splits):
        with pytest.raises(ModelStateError):
            predict_ensemble(
                Ensemble(members=[MlpModel(small_config(), seed=0)]),
                small_splits[2].X,
            )

    def test_mixed_configs_rejected(self, small_splits):
        with pytest.raises(ConfigError):
            Ensemble(members=[
                MlpModel(small_config(), seed=0),
                MlpModel(small_config(hidden_width=8), seed=1),
            ])


class TestHeteroRawOutputs:
    def test_single_pass_matches_eval_forward(self, small_splits):
        model = fit_small("hetero", splits=small_splits, max_epochs=10)
        X = small_splits[2].X[:6]
        mu, sigma = hetero_raw_outputs(model, X, n_passes=1)
        mu_direct, sigma_direct = model.raw_outputs(X)
        np.testing.assert_array_equal(mu[:, 0], mu_direct)
        np.testing.assert_array_equal(sigma[:, 0], sigma_direct)

    def test_sigma_positive(self, small_splits):
        model = fit_small("hetero", splits=small_splits, max_epochs=10)
        _, sigma = hetero_raw_outputs(model, small_splits[2].X, n_passes=5, rng=make_rng(0))
        assert np.all(sigma > 0)

    def test_identically_seeded_ensemble_zero_mu_variance(self, small_splits):
        balanced, val, test = small_splits
        ens = train_ensemble(small_config("hetero", max_epochs=8), 3,
                             balanced.X, balanced.y, val.X, val.y,
                             seed=0, member_seeds=[4, 4, 4])
        mu, _ = hetero_raw_outputs(ens, test.X)
        np.testing.assert_array_equal(mu[:, 0], mu[:, 1])
        np.testing.assert_array_equal(mu[:, 0], mu[:, 2])
        assert float(mu.var(axis=1).max()) < 1e-30

    def test_single_head_model_rejected(self, small_splits):
        model = fit_small("homo", splits=small_splits, max_epochs=5)
        with pytest.raises(ConfigError):
            hetero_raw_outputs(model, small_splits[2].X)


class TestSerialization:
    def test_model_round_trip_bit_exact(self, small_splits, tmp_path):
        model = fit_small("hetero", splits=small_splits, max_epochs=10)
        path = tmp_path / "model.npz"
        save_model(model, path)
        loaded = load_model(path)
        for a, b in zip(model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b)
        assert loaded.config == model.config
        assert loaded.history == model.history
        assert loaded.trained

    def test_ensemble_round_trip_bit_exact(self, small_splits, tmp_path):
        balanced, val, _ = small_splits
        ens = train_ensemble(small_config("homo", max_epochs=6), 3,
                             balanced.X, balanced.y, val.X, val.y, seed=5)
        path = tmp_path / "ens.npz"
        save_ensemble(ens, path)
        loaded = load_ensemble(path)
        assert len(loaded) == 3
        for m1, m2 in zip(ens.members, loaded.members):
            for a, b in zip(m1.parameters(), m2.parameters()):
                np.testing.assert_array_equal(a, b)
