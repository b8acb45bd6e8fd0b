import numpy as np
import pytest

from berrystack import (
    ConfigError,
    EnsembleConfig,
    EnsembleModel,
    MetaLearner,
    ModelConfig,
    StackedFeatures,
    fit_meta,
    make_bispectral_dataset,
    predict_ensemble,
    predict_ensemble_batch,
    random_oversample,
    stack_predictions,
    stratified_split,
    train_base_learners,
    train_ensemble,
)
from berrystack import nn
from berrystack.ensemble import load_ensemble, save_ensemble


@pytest.fixture(scope="module")
def trained_parts(request):
    import berrystack

    extractor = berrystack.make_surrogate_extractor(seed=101, output_dim=24)
    dataset = make_bispectral_dataset(40, 16, seed=20, noise=0.06)
    train, val, test = stratified_split(dataset, seed=20)
    train = random_oversample(train, seed=20)
    base = ModelConfig(fc_spec=(16, 8), batch_size=8, epochs=12, patience=4, seed=7)
    config = EnsembleConfig(n_learners=3, base=base, seed=31)
    learners = train_base_learners(train, val, config, extractor)
    return extractor, config, learners, train, val, test


def separable_stack(n=30, seed=0):
    """Column 0 separates the labels perfectly; the rest is noise."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    labels[:2] = [0, 1]  # both classes guaranteed
    perfect = np.where(labels == 1, 0.9, 0.1) + rng.uniform(-0.05, 0.05, size=n)
    noise = rng.uniform(0.0, 1.0, size=(n, 2))
    return StackedFeatures(np.column_stack([perfect, noise]), labels)


class TestTrainBaseLearners:
    def test_reproducibly_distinct_learners(self, trained_parts):
        extractor, config, learners, train, val, _ = trained_parts
        again = train_base_learners(train, val, config, extractor)
        for first, second in zip(learners, again):
            for a, b in zip(first.head, second.head):
                np.testing.assert_array_equal(a.weights, b.weights)
        flat = [nn.weights_bytes(l.head) for l in learners]
        assert len(set(flat)) == len(flat)  # bootstrap + seeds keep them distinct

    def test_homogeneous_architecture(self, trained_parts):
        _, config, learners, *_ = trained_parts
        assert {l.config.fc_spec for l in learners} == {config.base.fc_spec}

    def test_mean_base_accuracy_on_benchmark(self, trained_parts):
        _, _, learners, _, _, test = trained_parts
        from berrystack import predict_batch

        labels = test.labels()
        accuracies = [
            float(np.mean(((predict_batch(l, test.samples) >= 0.5).astype(int)) == labels))
            for l in learners
        ]
        assert np.mean(accuracies) >= 0.85


class TestStackPredictions:
    def test_single_learner_single_column(self, trained_parts):
        _, _, learners, _, val, _ = trained_parts
        from berrystack import predict_batch

        stacked = stack_predictions(learners[:1], val.samples)
        assert stacked.matrix.shape == (len(val), 1)
        np.testing.assert_allclose(
            stacked.matrix[:, 0], predict_batch(learners[0], val.samples), atol=1e-12
        )

    def test_identical_learners_identical_columns(self, trained_parts):
        _, _, learners, _, val, _ = trained_parts
        stacked = stack_predictions([learners[0], learners[0]], val.samples)
        np.testing.assert_array_equal(stacked.matrix[:, 0], stacked.matrix[:, 1])

    def test_entries_in_unit_interval(self, trained_parts):
        _, _, learners, _, val, _ = trained_parts
        stacked = stack_predictions(learners, val.samples)
        assert stacked.matrix.min() >= 0.0 and stacked.matrix.max() <= 1.0
        assert stacked.n_learners == len(learners)

    def test_empty_samples_rejected(self, trained_parts):
        _, _, learners, *_ = trained_parts
        with pytest.raises(ValueError, match="sample"):
            stack_predictions(learners, [])


class TestFitMeta:
    def test_separable_stack_reaches_full_accuracy(self):
        stacked = separable_stack()
        meta = fit_meta(stacked)
        predictions = (meta.predict(stacked.matrix) >= 0.5).astype(int)
        assert np.array_equal(predictions, stacked.labels)
        assert np.all(np.isfinite(meta.coefficients))

    def test_constant_half_features_recover_prior(self):
        labels = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        stacked = StackedFeatures(np.full((10, 3), 0.5), labels)
        meta = fit_meta(stacked)
        prior = labels.mean()
        np.testing.assert_allclose(meta.coefficients, 0.0, atol=1e-4)
        assert meta.predict(np.full((1, 3), 0.5))[0] == pytest.approx(prior, abs=1e-6)

    def test_zero_parameters_predict_half(self):
        meta = MetaLearner(0.0, np.zeros(4))
        rows = np.random.default_rng(0).uniform(size=(6, 4))
        np.testing.assert_array_equal(meta.predict(rows), np.full(6, 0.5))

    def test_single_label_stack_rejected(self):
        stacked = StackedFeatures(np.full((4, 2), 0.5), np.ones(4, dtype=int))
        with pytest.raises(ValueError, match="both labels"):
            fit_meta(stacked)

    def test_nll_trace_monotone_non_increasing(self):
        stacked = separable_stack(seed=3)
        meta = fit_meta(stacked)
        trace = np.array(meta.diagnostics.nll_trace)
        assert np.all(np.diff(trace) <= 0.0)
        assert meta.diagnostics.final_nll == trace[-1]

    def test_iteration_cap_flags_not_raises(self):
        stacked = separable_stack(seed=4)
        meta = fit_meta(stacked, max_iter=3)
        assert not meta.diagnostics.converged
        assert meta.diagnostics.iterations == 3

    def test_permutation_equivariance(self):
        stacked = separable_stack(n=40, seed=5)
        rng = np.random.default_rng(6)
        order = rng.permutation(stacked.n_learners)
        permuted = StackedFeatures(stacked.matrix[:, order], stacked.labels)
        meta = fit_meta(stacked)
        meta_permuted = fit_meta(permuted)
        np.testing.assert_allclose(
            meta_permuted.coefficients, meta.coefficients[order], atol=1e-10
        )
        np.testing.assert_allclose(
            meta_permuted.predict(permuted.matrix), meta.predict(stacked.matrix), atol=1e-10
        )

    def test_dominance_on_perfectly_separating_column(self):
        # when one column already classifies the stack perfectly, the fitted
        # ensemble cannot do worse on that same stack
        for seed in range(3):
            stacked = separable_stack(n=50, seed=seed)
            strongest = (stacked.matrix[:, 0] >= 0.5).astype(int)
            assert np.array_equal(strongest, stacked.labels)
            meta = fit_meta(stacked)
            fitted = (meta.predict(stacked.matrix) >= 0.5).astype(int)
            assert np.mean(fitted == stacked.labels) >= np.mean(strongest == stacked.labels)


class TestPredictEnsemble:
    def test_zero_meta_gives_half(self, trained_parts):
        _, config, learners, _, val, _ = trained_parts
        model = EnsembleModel(learners, MetaLearner(0.0, np.zeros(len(learners))), config)
        assert predict_ensemble(model, val.samples[0]) == 0.5

    def test_hand_value_sigma_two(self):
        meta = MetaLearner(0.0, np.ones(2))
        assert meta.predict(np.array([[1.0, 1.0]]))[0] == pytest.approx(
            0.8807970779778823, abs=1e-9
        )

    def test_monotone_in_positively_weighted_confidence(self):
        meta = MetaLearner(-0.3, np.array([1.5, 0.7]))
        lower = meta.predict(np.array([[0.2, 0.5]]))[0]
        higher = meta.predict(np.array([[0.9, 0.5]]))[0]
        assert higher > lower

    def test_outputs_in_unit_interval(self, trained_parts):
        extractor, config, learners, _, val, test = trained_parts
        stacked = stack_predictions(learners, val.samples)
        model = EnsembleModel(learners, fit_meta(stacked), config)
        confidences = predict_ensemble_batch(model, test.samples)
        assert confidences.min() >= 0.0 and confidences.max() <= 1.0


class TestEnsembleArtifact:
    def test_round_trip(self, tmp_path, trained_parts):
        extractor, config, learners, _, val, test = trained_parts
        stacked = stack_predictions(learners, val.samples)
        model = EnsembleModel(learners, fit_meta(stacked), config)
        save_ensemble(model, tmp_path / "ens", stacked)
        reloaded = load_ensemble(tmp_path / "ens")
        np.testing.assert_allclose(
            predict_ensemble_batch(reloaded, test.samples),
            predict_ensemble_batch(model, test.samples),
            atol=1e-5,  # learner weights persist as float32
        )
        np.testing.assert_allclose(reloaded.meta.coefficients, model.meta.coefficients, atol=0)

    def test_heterogeneous_ensemble_rejected(self, trained_parts):
        extractor, config, learners, train, val, _ = trained_parts
        other_config = ModelConfig(fc_spec=(8, 4), batch_size=8, epochs=3, patience=3, seed=1)
        from berrystack import train_model

        stranger = train_model(train, val, other_config, extractor)
        with pytest.raises(ConfigError, match="homogeneous"):
            EnsembleModel(
                [learners[0], stranger, learners[1]][: config.n_learners],
                MetaLearner(0.0, np.zeros(config.n_learners)),
                config,
            )

    def test_train_ensemble_end_to_end(self, trained_parts):
        extractor, config, _, train, val, test = trained_parts
        model = train_ensemble(train, val, config, extractor)
        labels = test.labels()
        predictions = (predict_ensemble_batch(model, test.samples) >= 0.5).astype(int)
        assert np.mean(predictions == labels) >= 0.85


def test_config_requires_two_learners():
    with pytest.raises(ValueError, match="at least 2"):
        EnsembleConfig(n_learners=1)
