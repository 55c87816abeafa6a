"""Estimator API contracts, the optimization loop, search, and decorrelation."""

import os

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mtmasker.checkpoint import load_estimator, save_estimator
from mtmasker.data import (SynthSpec, generate_synthetic, label_matrix,
                           mean_pairwise_correlation)
from mtmasker.errors import ConfigError, ParameterError
from mtmasker.estimators import (AttentionClassifier, BaselineClassifier,
                                 ContextualizedClassifier, MultiTargetMasker,
                                 SharedAttentionClassifier, FIXED_CLOCK_ENV)
from mtmasker.training import (SearchSpace, TrainConfig, TrainLog,
                               decorrelation_protocol, random_search, train)

TINY = dict(embed_dim=16, hidden_size=8, feature_maps=8, classifier_hidden=8,
            batch_size=32, max_epochs=2, patience=2, min_count=1, seed=0)


def small_corpus(n=80, T=2, rho=0.5, seed=0):
    return generate_synthetic(SynthSpec.default(
        n_aspects=T, n_documents=n, label_correlation=rho, seed=seed))


def xy(docs):
    return [d.tokens for d in docs], np.array([d.labels for d in docs])


@pytest.fixture(scope="module")
def corpus():
    return small_corpus()


class TestEstimatorApi:
    def test_fit_predict_shapes(self, corpus):
        X, y = xy(corpus.documents)
        est = MultiTargetMasker(**TINY).fit(X, y)
        preds = est.predict(X[:7])
        assert preds.shape == (7, 2)
        assert set(np.unique(preds)) <= {0, 1}
        proba = est.predict_proba(X[:4])
        assert proba.shape == (4, 2, 2)
        np.testing.assert_allclose(proba.sum(axis=2), 1.0, atol=1e-9)

    def test_transform_masks_are_distributions(self, corpus):
        X, y = xy(corpus.documents)
        est = MultiTargetMasker(**TINY).fit(X, y)
        masks = est.transform(X[:5])
        for tokens, mask in zip(X[:5], masks):
            assert mask.shape == (len(tokens), 3)
            np.testing.assert_allclose(mask.sum(axis=1), 1.0, atol=1e-6)

    def test_get_params_round_trips_through_clone(self):
        est = MultiTargetMasker(lambda_p=0.11, tau=0.9, seed=7)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            MultiTargetMasker().predict([["beer"]])

    def test_score_is_macro_f1_percent(self, corpus):
        X, y = xy(corpus.documents)
        est = BaselineClassifier(**TINY).fit(X, y)
        score = est.score(X, y)
        assert 0.0 <= score <= 100.0

    def test_string_inputs_tokenized(self, corpus):
        X = [" ".join(d.tokens) for d in corpus.documents]
        y = np.array([d.labels for d in corpus.documents])
        est = BaselineClassifier(**TINY).fit(X, y)
        assert est.predict(X[:3]).shape == (3, 2)

    @pytest.mark.parametrize("cls", [BaselineClassifier, SharedAttentionClassifier,
                                     AttentionClassifier])
    def test_all_baseline_kinds_fit(self, corpus, cls):
        X, y = xy(corpus.documents[:48])
        est = cls(**{**TINY, "max_epochs": 1}).fit(X, y)
        assert est.predict(X[:2]).shape == (2, 2)

    def test_attention_transform_shapes(self, corpus):
        X, y = xy(corpus.documents[:48])
        est = AttentionClassifier(**{**TINY, "max_epochs": 1}).fit(X, y)
        weights = est.transform(X[:3])
        for tokens, w in zip(X[:3], weights):
            assert w.shape == (len(tokens), 2)
            np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-6)

    def test_shared_attention_single_head(self, corpus):
        X, y = xy(corpus.documents[:48])
        est = SharedAttentionClassifier(encoder="lstm",
                                        **{**TINY, "max_epochs": 1}).fit(X, y)
        w = est.transform(X[:2])
        for tokens, weights in zip(X[:2], w):
            assert weights.shape == (len(tokens),)


class TestTrainingLoop:
    def test_lr_zero_is_null_optimizer(self, corpus):
        X, y = xy(corpus.documents)
        est = MultiTargetMasker(**{**TINY, "lr": 0.0, "max_epochs": 2})
        est.fit(X, y)
        f1_values = [r["val_macro_f1"] for r in est.train_log_]
        assert len(set(f1_values)) == 1
        # parameters never moved: a fresh model with the same seed agrees
        fresh = MultiTargetMasker(**{**TINY, "lr": 0.0, "max_epochs": 2})
        fresh.fit(X, y)
        for a, b in zip(est.model_.parameters(), fresh.model_.parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_single_batch_overfit(self):
        corpus = small_corpus(n=32, T=2, rho=0.0, seed=3)
        X, y = xy(corpus.documents)
        est = MultiTargetMasker(embed_dim=16, hidden_size=8, feature_maps=8,
                                classifier_hidden=8, batch_size=32, min_count=1,
                                max_epochs=200, patience=0, dropout=0.0, lr=0.002,
                                lambda_sel=0.0, lambda_cont=0.0, seed=1)
        est.fit(X, y, validation_data=(X, y))
        assert min(r["loss_pred"] for r in est.train_log_) < 0.05

    def test_early_stopping_keeps_best(self, corpus):
        X, y = xy(corpus.documents)
        est = MultiTargetMasker(**{**TINY, "max_epochs": 4, "patience": 1})
        est.fit(X, y)
        best = max(r["val_macro_f1"] for r in est.train_log_)
        assert est.best_val_f1_ == best

    def test_divergence_reported(self, corpus):
        from mtmasker.errors import NumericError
        X, y = xy(corpus.documents[:48])
        est = BaselineClassifier(**{**TINY, "lr": 1e200, "max_epochs": 3,
                                    "clip_norm": 1e300})
        with pytest.raises(NumericError, match="epoch"):
            est.fit(X, y)

    def test_mask_statistics_logged(self, corpus):
        X, y = xy(corpus.documents)
        est = MultiTargetMasker(**TINY).fit(X, y)
        rec = est.train_log_[-1]
        assert 0.0 <= rec["val_p_sel"] <= 1.0
        assert rec["val_switch_mean"] >= 0.0


class TestTrainFunction:
    def test_returns_checkpointable_estimator_and_log(self, corpus, tmp_path):
        cfg = TrainConfig(model_kind="mtm", batch_size=32, max_epochs=2,
                          seed=1, model=dict(embed_dim=16, hidden_size=8,
                                             feature_maps=8, classifier_hidden=8,
                                             min_count=1))
        est, log = train(corpus, cfg)
        assert isinstance(log, TrainLog)
        assert len(log) >= 1
        path = tmp_path / "ck.json"
        save_estimator(est, "mtm", path)
        loaded, kind = load_estimator(path)
        assert kind == "mtm"
        docs = corpus.split("test")
        np.testing.assert_array_equal(loaded._predict_docs(docs),
                                      est._predict_docs(docs))

    def test_same_seed_bitwise_identical_log(self, corpus):
        os.environ[FIXED_CLOCK_ENV] = "1"
        try:
            cfg = dict(model_kind="mtm", batch_size=32, max_epochs=2, seed=5,
                       model=dict(embed_dim=16, hidden_size=8, feature_maps=8,
                                  classifier_hidden=8, min_count=1))
            _, log_a = train(corpus, TrainConfig(**cfg))
            _, log_b = train(corpus, TrainConfig(**cfg))
            assert log_a.to_lines() == log_b.to_lines()
        finally:
            del os.environ[FIXED_CLOCK_ENV]

    def test_mtm_c_requires_masker(self, corpus):
        cfg = TrainConfig(model_kind="mtm-c", max_epochs=1)
        with pytest.raises(ConfigError):
            train(corpus, cfg)

    def test_mtm_c_pipeline(self, corpus):
        base_model = dict(embed_dim=16, hidden_size=8, feature_maps=8,
                          classifier_hidden=8, min_count=1)
        masker, _ = train(corpus, TrainConfig(model_kind="mtm", batch_size=32,
                                              max_epochs=1, seed=2,
                                              model=base_model))
        est, _ = train(corpus, TrainConfig(model_kind="mtm-c", batch_size=32,
                                           max_epochs=1, seed=2,
                                           model=base_model), masker=masker)
        docs = corpus.split("test")
        assert est._predict_docs(docs).shape == (len(docs), 2)

    def test_frozen_mask_columns_never_mutate(self, corpus):
        base_model = dict(embed_dim=16, hidden_size=8, feature_maps=8,
                          classifier_hidden=8, min_count=1)
        masker, _ = train(corpus, TrainConfig(model_kind="mtm", batch_size=32,
                                              max_epochs=1, seed=2,
                                              model=base_model))
        masker_params_before = [p.data.copy() for p in masker.model_.parameters()]
        est, _ = train(corpus, TrainConfig(model_kind="mtm-c", batch_size=32,
                                           max_epochs=2, seed=2,
                                           model=base_model), masker=masker)
        for before, after in zip(masker_params_before,
                                 masker.model_.parameters()):
            np.testing.assert_array_equal(before, after.data)

    def test_unknown_kind_lists_valid(self, corpus):
        with pytest.raises(ConfigError, match="mtm"):
            TrainConfig(model_kind="transformer")


class TestRandomSearch:
    def test_draws_stay_inside_candidate_lists(self):
        space = SearchSpace()
        from mtmasker.autodiff import Rng
        for i in range(100):
            draw = space.sample(Rng(i))
            assert draw["lr"] in space.lr
            assert draw["hidden_size"] in space.hidden_size
            assert draw["feature_maps"] in space.feature_maps
            assert draw["bidirectional"] in space.bidirectional
            assert draw["dropout"] in space.dropout
            assert draw["l2"] in space.l2
            assert draw["tau"] in space.tau
            assert draw["lambda_sel"] in space.lambda_sel
            assert draw["lambda_p"] in space.lambda_p
            assert draw["lambda_cont"] in space.lambda_cont

    def test_single_trial(self, corpus):
        space = SearchSpace(lr=(0.001,), hidden_size=(8,), feature_maps=(8,),
                            bidirectional=(True,), dropout=(0.0,), l2=(0.0,),
                            tau=(0.8,), lambda_sel=(0.03,), lambda_p=(0.15,),
                            lambda_cont=(0.03,))
        cfg = TrainConfig(model_kind="mtm", batch_size=32, max_epochs=1,
                          model=dict(embed_dim=16, classifier_hidden=8,
                                     min_count=1))
        results = random_search(space, corpus, cfg, trials=1)
        assert len(results) == 1
        assert results[0].val_macro_f1 is not None

    def test_singleton_lists_identical_settings(self, corpus):
        space = SearchSpace(lr=(0.001,), hidden_size=(8,), feature_maps=(8,),
                            bidirectional=(True,), dropout=(0.0,), l2=(0.0,),
                            tau=(0.8,), lambda_sel=(0.03,), lambda_p=(0.15,),
                            lambda_cont=(0.03,))
        cfg = TrainConfig(model_kind="base", batch_size=32, max_epochs=1,
                          model=dict(embed_dim=16, classifier_hidden=8,
                                     min_count=1))
        results = random_search(space, corpus, cfg, trials=2)
        assert results[0].settings == results[1].settings

    def test_failed_trial_recorded_not_fatal(self, corpus):
        space = SearchSpace(lr=(1e200,), hidden_size=(8,), feature_maps=(8,),
                            bidirectional=(True,), dropout=(0.0,), l2=(0.0,),
                            tau=(0.8,), lambda_sel=(0.03,), lambda_p=(0.15,),
                            lambda_cont=(0.03,))
        cfg = TrainConfig(model_kind="base", batch_size=32, max_epochs=2,
                          clip_norm=1e300,
                          model=dict(embed_dim=16, classifier_hidden=8,
                                     min_count=1))
        results = random_search(space, corpus, cfg, trials=2)
        assert len(results) == 2
        assert all(r.error is not None for r in results)

    def test_ranking_descending(self, corpus):
        space = SearchSpace(lr=(0.001, 0.0005), hidden_size=(8,),
                            feature_maps=(8,), bidirectional=(True,),
                            dropout=(0.0,), l2=(0.0,), tau=(0.8,),
                            lambda_sel=(0.03,), lambda_p=(0.15,),
                            lambda_cont=(0.03,))
        cfg = TrainConfig(model_kind="base", batch_size=32, max_epochs=1,
                          model=dict(embed_dim=16, classifier_hidden=8,
                                     min_count=1))
        results = random_search(space, corpus, cfg, trials=3)
        scores = [r.val_macro_f1 for r in results if r.val_macro_f1 is not None]
        assert scores == sorted(scores, reverse=True)


class TestDecorrelation:
    def test_rho_zero_returned_unchanged(self):
        corpus = small_corpus(n=400, rho=0.0, seed=5)
        result = decorrelation_protocol(corpus, target=0.30)
        assert result.reached_target
        assert len(result.corpus.documents) == 400

    def test_rho_one_infeasible_reports_best(self):
        corpus = small_corpus(n=300, rho=1.0, seed=6)
        result = decorrelation_protocol(corpus, target=0.30)
        assert not result.reached_target
        assert result.achieved > 0.30

    def test_rho_07_reaches_target(self):
        corpus = generate_synthetic(SynthSpec.default(
            n_aspects=4, n_documents=10000, label_correlation=0.7, seed=7))
        before = mean_pairwise_correlation(label_matrix(corpus.documents))
        assert before > 0.5
        result = decorrelation_protocol(corpus, target=0.30)
        assert result.reached_target
        assert result.achieved <= 0.30
        assert len(result.corpus.documents) > 100

    def test_aspect_subset_projects_labels(self):
        corpus = small_corpus(n=100, T=2, rho=0.5, seed=8)
        result = decorrelation_protocol(corpus, keep_aspects=[1], target=1.0)
        assert result.corpus.n_aspects == 1
        for doc, orig in zip(result.corpus.documents, corpus.documents):
            assert doc.labels == [orig.labels[1]]
            for g_new, g_old in zip(doc.gold_word_aspects,
                                    orig.gold_word_aspects):
                assert g_new == (1 if g_old == 2 else 0)

    def test_invalid_subset(self):
        corpus = small_corpus(n=20)
        with pytest.raises(ParameterError):
            decorrelation_protocol(corpus, keep_aspects=[5])
