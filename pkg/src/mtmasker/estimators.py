"""Scikit-learn style estimators wrapping the neural models.

Every estimator follows the fit/predict/transform + get_params contract so
the models compose with the wider ecosystem (cloning, grid search, and
pipelines).  ``X`` may be raw strings, token lists, or ``Document``
objects; ``y`` is an (n, T) binary array.  Training is mini-batch Adam
with gradient-norm clipping and early stopping on validation macro-F1.
"""

from __future__ import annotations

import os
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .autodiff import Adam, Rng, clip_grad_norm
from .baselines import (AspectAttentionModel, BaseModel, SharedAttentionModel,
                        attention_scores_for_docs)
from .data import (Corpus, Document, EmbeddingTable, build_vocab,
                   load_embeddings, pad_batch, sentence_spans, tokenize)
from .errors import NumericError, ParameterError
from .evaluation import aspect_switch_count, macro_f1, mask_to_labels
from .model import MtmConfig, MtmModel

_EMBED_SEED = 1
_MODEL_SEED = 2
_LOOP_SEED = 3
_SPLIT_SEED = 4

FIXED_CLOCK_ENV = "MTMASKER_FIXED_CLOCK"


def as_documents(X, y=None, prefix="x"):
    """Normalize raw strings / token lists / Documents into Document objects."""
    docs = []
    if y is not None:
        y = np.asarray(y)
        if y.ndim != 2 or len(y) != len(X):
            raise ParameterError(f"y must be (n_samples, n_targets), got {y.shape}")
    for i, item in enumerate(X):
        if isinstance(item, Document):
            docs.append(item)
            continue
        tokens = tokenize(item) if isinstance(item, str) else [str(t) for t in item]
        if not tokens:
            raise ParameterError(f"input {i} has no tokens")
        labels = [int(v) for v in y[i]] if y is not None else []
        docs.append(Document(id=f"{prefix}-{i:06d}", tokens=tokens, labels=labels,
                             sentence_spans=sentence_spans(tokens)))
    return docs


def _clock():
    if os.environ.get(FIXED_CLOCK_ENV):
        return 0.0
    return time.monotonic()


class _NeuralTextEstimator(BaseEstimator):
    """Shared vocabulary building, batching, and optimization loop."""

    def __init__(self, embed_dim=50, hidden_size=50, bidirectional=True,
                 filter_widths=(3, 5, 7), feature_maps=50, classifier_hidden=50,
                 dropout=0.1, l2=1e-6, lr=0.001, batch_size=256, max_epochs=50,
                 patience=5, clip_norm=1.0, min_count=2, max_len=256,
                 embeddings=None, trainable_embeddings=True,
                 validation_fraction=0.1, seed=0):
        self.embed_dim = embed_dim
        self.hidden_size = hidden_size
        self.bidirectional = bidirectional
        self.filter_widths = filter_widths
        self.feature_maps = feature_maps
        self.classifier_hidden = classifier_hidden
        self.dropout = dropout
        self.l2 = l2
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.clip_norm = clip_norm
        self.min_count = min_count
        self.max_len = max_len
        self.embeddings = embeddings
        self.trainable_embeddings = trainable_embeddings
        self.validation_fraction = validation_fraction
        self.seed = seed

    # -- subclass hooks ----------------------------------------------------
    def _build_model(self, n_aspects, embedding_matrix):
        raise NotImplementedError

    def _base_config(self, n_aspects, embed_dim):
        return MtmConfig(n_aspects=n_aspects, embed_dim=embed_dim,
                         masker_hidden=self.hidden_size,
                         bidirectional=self.bidirectional,
                         filter_widths=tuple(self.filter_widths),
                         feature_maps=self.feature_maps,
                         classifier_hidden=self.classifier_hidden,
                         dropout=self.dropout, l2=self.l2)

    def _forward(self, ids, valid, labels, rng, training, docs):
        return self.model_.forward(ids, valid, labels=labels, rng=rng,
                                   training=training)

    def _prepare_fit(self, train_docs, valid_docs):
        """Hook run before the loop (e.g. to precompute frozen features)."""

    def _mask_statistics(self, docs):
        """Validation-time mask diagnostics; None for mask-free models."""
        return None, None

    # -- fitting -----------------------------------------------------------
    def fit(self, X, y, validation_data=None):
        docs = as_documents(X, y, prefix="train")
        if validation_data is not None:
            vx, vy = validation_data
            valid_docs = as_documents(vx, vy, prefix="valid")
            train_docs = docs
        else:
            rng = Rng(self.seed + _SPLIT_SEED)
            order = rng.permutation(len(docs))
            n_valid = max(1, int(round(self.validation_fraction * len(docs))))
            valid_idx = set(int(i) for i in order[:n_valid])
            train_docs = [d for i, d in enumerate(docs) if i not in valid_idx]
            valid_docs = [d for i, d in enumerate(docs) if i in valid_idx]
        if not train_docs:
            raise ParameterError("no training documents after validation split")
        if not train_docs[0].labels:
            raise ParameterError("training documents carry no labels; pass y")
        self.n_aspects_ = len(train_docs[0].labels)
        for d in train_docs + valid_docs:
            if len(d.labels) != self.n_aspects_:
                raise ParameterError(
                    f"document {d.id} has {len(d.labels)} labels, "
                    f"expected {self.n_aspects_}")

        vocab_corpus = Corpus(train_docs, [str(i) for i in range(self.n_aspects_)],
                              {"train": list(range(len(train_docs)))})
        self.vocab_ = build_vocab(vocab_corpus, self.min_count)
        if isinstance(self.embeddings, EmbeddingTable):
            table = self.embeddings
        elif isinstance(self.embeddings, str):
            table = load_embeddings(self.embeddings, self.vocab_,
                                    seed=self.seed + _EMBED_SEED,
                                    trainable=self.trainable_embeddings)
        else:
            table = EmbeddingTable.random(self.vocab_, self.embed_dim,
                                          seed=self.seed + _EMBED_SEED,
                                          trainable=self.trainable_embeddings)
        self.embed_dim_ = table.dim
        self.model_ = self._build_model(self.n_aspects_, table.matrix)
        self._prepare_fit(train_docs, valid_docs)
        self._run_loop(train_docs, valid_docs)
        return self

    def _run_loop(self, train_docs, valid_docs):
        model = self.model_
        optimizer = Adam(model.parameters(), lr=self.lr, weight_decay=self.l2,
                         decay=model.weight_tensors())
        rng = Rng(self.seed + _LOOP_SEED)
        log = []
        best_f1, best_state, best_epoch = -np.inf, None, -1
        stale = 0
        for epoch in range(1, self.max_epochs + 1):
            t0 = _clock()
            order = rng.permutation(len(train_docs))
            sums = {"pred": 0.0, "sel": 0.0, "cont": 0.0, "total": 0.0}
            n_batches = 0
            for b_start in range(0, len(order), self.batch_size):
                batch = [train_docs[i] for i in order[b_start:b_start + self.batch_size]]
                ids, valid, labels = pad_batch(batch, self.vocab_, self.max_len)
                try:
                    out = self._forward(ids, valid, labels, rng, True, batch)
                except NumericError as e:
                    raise NumericError(
                        f"training diverged at epoch {epoch}, "
                        f"batch {b_start // self.batch_size}: {e}") from e
                losses = out["losses"]
                total = losses["total"]
                if not np.isfinite(total.data):
                    raise NumericError(
                        f"training diverged at epoch {epoch}, "
                        f"batch {b_start // self.batch_size}")
                optimizer.zero_grad()
                total.backward()
                clip_grad_norm(model.parameters(), self.clip_norm)
                optimizer.step()
                for k in sums:
                    sums[k] += float(losses[k].data)
                n_batches += 1
            val_pred = self._predict_docs(valid_docs)
            val_f1, _ = macro_f1(val_pred, np.array([d.labels for d in valid_docs]))
            p_sel, switches = self._mask_statistics(valid_docs)
            record = {"epoch": epoch,
                      "loss_pred": sums["pred"] / n_batches,
                      "loss_sel": sums["sel"] / n_batches,
                      "loss_cont": sums["cont"] / n_batches,
                      "loss_total": sums["total"] / n_batches,
                      "val_macro_f1": val_f1,
                      "val_p_sel": p_sel,
                      "val_switch_mean": switches,
                      "wall_time": _clock() - t0}
            log.append(record)
            if val_f1 > best_f1:
                best_f1, best_epoch, stale = val_f1, epoch, 0
                best_state = [p.data.copy() for p in model.parameters()]
            else:
                stale += 1
                if self.patience and stale >= self.patience:
                    break
        if best_state is not None:
            for p, saved in zip(model.parameters(), best_state):
                p.data[...] = saved
        self.train_log_ = log
        self.best_epoch_ = best_epoch
        self.best_val_f1_ = best_f1

    # -- inference ---------------------------------------------------------
    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def _predict_docs(self, docs):
        preds = np.zeros((len(docs), self.n_aspects_), dtype=np.int64)
        for start in range(0, len(docs), self.batch_size):
            chunk = docs[start:start + self.batch_size]
            ids, valid, _ = pad_batch(chunk, self.vocab_, self.max_len)
            out = self._forward(ids, valid, None, None, False, chunk)
            for a, lg in enumerate(out["logits"]):
                preds[start:start + len(chunk), a] = lg.data.argmax(axis=1)
        return preds

    def predict(self, X):
        self._check_fitted()
        return self._predict_docs(as_documents(X, prefix="pred"))

    def predict_proba(self, X):
        self._check_fitted()
        docs = as_documents(X, prefix="pred")
        probs = np.zeros((len(docs), self.n_aspects_, 2))
        for start in range(0, len(docs), self.batch_size):
            chunk = docs[start:start + self.batch_size]
            ids, valid, _ = pad_batch(chunk, self.vocab_, self.max_len)
            out = self._forward(ids, valid, None, None, False, chunk)
            for a, lg in enumerate(out["logits"]):
                z = lg.data - lg.data.max(axis=1, keepdims=True)
                e = np.exp(z)
                probs[start:start + len(chunk), a] = e / e.sum(axis=1, keepdims=True)
        return probs

    def score(self, X, y):
        """Validation metric: macro F1 in percent."""
        self._check_fitted()
        macro, _ = macro_f1(self.predict(X), np.asarray(y))
        return macro


class MultiTargetMasker(_NeuralTextEstimator):
    """Jointly predicts all target sentiments while inducing per-word target
    relevance distributions that serve as multi-faceted rationales."""

    def __init__(self, embed_dim=50, hidden_size=50, bidirectional=True,
                 filter_widths=(3, 5, 7), feature_maps=50, classifier_hidden=50,
                 tau=0.8, lambda_sel=0.03, lambda_cont=0.03, lambda_p=0.15,
                 straight_through=False, dropout=0.1, l2=1e-6, lr=0.001,
                 batch_size=256, max_epochs=50, patience=5, clip_norm=1.0,
                 min_count=2, max_len=256, embeddings=None,
                 trainable_embeddings=True, validation_fraction=0.1, seed=0):
        super().__init__(embed_dim=embed_dim, hidden_size=hidden_size,
                         bidirectional=bidirectional, filter_widths=filter_widths,
                         feature_maps=feature_maps, classifier_hidden=classifier_hidden,
                         dropout=dropout, l2=l2, lr=lr, batch_size=batch_size,
                         max_epochs=max_epochs, patience=patience, clip_norm=clip_norm,
                         min_count=min_count, max_len=max_len, embeddings=embeddings,
                         trainable_embeddings=trainable_embeddings,
                         validation_fraction=validation_fraction, seed=seed)
        self.tau = tau
        self.lambda_sel = lambda_sel
        self.lambda_cont = lambda_cont
        self.lambda_p = lambda_p
        self.straight_through = straight_through

    def _make_config(self, n_aspects, embed_dim):
        cfg = self._base_config(n_aspects, embed_dim)
        cfg.tau = self.tau
        cfg.lambda_sel = self.lambda_sel
        cfg.lambda_cont = self.lambda_cont
        cfg.lambda_p = self.lambda_p
        cfg.straight_through = self.straight_through
        cfg.__post_init__()
        return cfg

    def _build_model(self, n_aspects, embedding_matrix):
        return MtmModel(self._make_config(n_aspects, embedding_matrix.shape[1]),
                        embedding_matrix,
                        trainable_embeddings=self.trainable_embeddings,
                        seed=self.seed + _MODEL_SEED)

    def _mask_statistics(self, docs, cap=512):
        masks = self.model_.inference_masks(docs[:cap], self.vocab_, self.max_len,
                                            self.batch_size)
        p_sels, switches = [], []
        for m in masks.values():
            p_sels.append(float(1.0 - m[:, 0].mean()))
            switches.append(aspect_switch_count(mask_to_labels(m)))
        return float(np.mean(p_sels)), float(np.mean(switches))

    def transform(self, X):
        """Inference-mode masks: list of (L, T+1) row-stochastic arrays."""
        self._check_fitted()
        docs = as_documents(X, prefix="pred")
        masks = self.model_.inference_masks(docs, self.vocab_, self.max_len,
                                            self.batch_size)
        return [masks[d.id] for d in docs]

    def word_scores(self, docs):
        """Per-word aspect scores {doc_id: (L, T)} for the evaluation pipeline."""
        self._check_fitted()
        masks = self.model_.inference_masks(docs, self.vocab_, self.max_len,
                                            self.batch_size)
        return {doc_id: m[:, 1:].copy() for doc_id, m in masks.items()}


class BaselineClassifier(_NeuralTextEstimator):
    """Shared conv encoder and per-target heads; no interpretability output."""

    def _build_model(self, n_aspects, embedding_matrix):
        return BaseModel(self._base_config(n_aspects, embedding_matrix.shape[1]),
                         embedding_matrix,
                         trainable_embeddings=self.trainable_embeddings,
                         seed=self.seed + _MODEL_SEED)


class SharedAttentionClassifier(_NeuralTextEstimator):
    """One attention over positions (conv or LSTM features) shared by all heads."""

    def __init__(self, encoder="cnn", embed_dim=50, hidden_size=50,
                 bidirectional=True, filter_widths=(3, 5, 7), feature_maps=50,
                 classifier_hidden=50, dropout=0.1, l2=1e-6, lr=0.001,
                 batch_size=256, max_epochs=50, patience=5, clip_norm=1.0,
                 min_count=2, max_len=256, embeddings=None,
                 trainable_embeddings=True, validation_fraction=0.1, seed=0):
        super().__init__(embed_dim=embed_dim, hidden_size=hidden_size,
                         bidirectional=bidirectional, filter_widths=filter_widths,
                         feature_maps=feature_maps, classifier_hidden=classifier_hidden,
                         dropout=dropout, l2=l2, lr=lr, batch_size=batch_size,
                         max_epochs=max_epochs, patience=patience, clip_norm=clip_norm,
                         min_count=min_count, max_len=max_len, embeddings=embeddings,
                         trainable_embeddings=trainable_embeddings,
                         validation_fraction=validation_fraction, seed=seed)
        self.encoder = encoder

    def _build_model(self, n_aspects, embedding_matrix):
        return SharedAttentionModel(
            self._base_config(n_aspects, embedding_matrix.shape[1]),
            embedding_matrix, trainable_embeddings=self.trainable_embeddings,
            seed=self.seed + _MODEL_SEED, encoder_kind=self.encoder)

    def transform(self, X):
        """Shared attention weights: list of (L,) arrays (one head)."""
        self._check_fitted()
        docs = as_documents(X, prefix="pred")
        scores = attention_scores_for_docs(self.model_, docs, self.vocab_,
                                           self.max_len, self.batch_size)
        return [scores[d.id][:, 0] for d in docs]

    def word_scores(self, docs):
        self._check_fitted()
        return attention_scores_for_docs(self.model_, docs, self.vocab_,
                                         self.max_len, self.batch_size)


class AttentionClassifier(_NeuralTextEstimator):
    """A separate encoder, attention, and head per target (additive or sparse)."""

    def __init__(self, sparse=False, embed_dim=50, hidden_size=50,
                 bidirectional=True, filter_widths=(3, 5, 7), feature_maps=50,
                 classifier_hidden=50, dropout=0.1, l2=1e-6, lr=0.001,
                 batch_size=256, max_epochs=50, patience=5, clip_norm=1.0,
                 min_count=2, max_len=256, embeddings=None,
                 trainable_embeddings=True, validation_fraction=0.1, seed=0):
        super().__init__(embed_dim=embed_dim, hidden_size=hidden_size,
                         bidirectional=bidirectional, filter_widths=filter_widths,
                         feature_maps=feature_maps, classifier_hidden=classifier_hidden,
                         dropout=dropout, l2=l2, lr=lr, batch_size=batch_size,
                         max_epochs=max_epochs, patience=patience, clip_norm=clip_norm,
                         min_count=min_count, max_len=max_len, embeddings=embeddings,
                         trainable_embeddings=trainable_embeddings,
                         validation_fraction=validation_fraction, seed=seed)
        self.sparse = sparse

    def _build_model(self, n_aspects, embedding_matrix):
        return AspectAttentionModel(
            self._base_config(n_aspects, embedding_matrix.shape[1]),
            embedding_matrix, trainable_embeddings=self.trainable_embeddings,
            seed=self.seed + _MODEL_SEED, sparse=self.sparse)

    def transform(self, X):
        """Per-target attention weights: list of (L, T) arrays."""
        self._check_fitted()
        docs = as_documents(X, prefix="pred")
        scores = attention_scores_for_docs(self.model_, docs, self.vocab_,
                                           self.max_len, self.batch_size)
        return [scores[d.id] for d in docs]

    def word_scores(self, docs):
        self._check_fitted()
        return attention_scores_for_docs(self.model_, docs, self.vocab_,
                                         self.max_len, self.batch_size)


class ContextualizedClassifier(_NeuralTextEstimator):
    """The baseline classifier over embeddings augmented with frozen mask
    probabilities from a trained masker (appended columns are never trained)."""

    def __init__(self, masker=None, embed_dim=50, hidden_size=50,
                 bidirectional=True, filter_widths=(3, 5, 7), feature_maps=50,
                 classifier_hidden=50, dropout=0.1, l2=1e-6, lr=0.001,
                 batch_size=256, max_epochs=50, patience=5, clip_norm=1.0,
                 min_count=2, max_len=256, embeddings=None,
                 trainable_embeddings=True, validation_fraction=0.1, seed=0):
        super().__init__(embed_dim=embed_dim, hidden_size=hidden_size,
                         bidirectional=bidirectional, filter_widths=filter_widths,
                         feature_maps=feature_maps, classifier_hidden=classifier_hidden,
                         dropout=dropout, l2=l2, lr=lr, batch_size=batch_size,
                         max_epochs=max_epochs, patience=patience, clip_norm=clip_norm,
                         min_count=min_count, max_len=max_len, embeddings=embeddings,
                         trainable_embeddings=trainable_embeddings,
                         validation_fraction=validation_fraction, seed=seed)
        self.masker = masker

    def _build_model(self, n_aspects, embedding_matrix):
        if self.masker is None or not hasattr(self.masker, "model_"):
            raise ParameterError("ContextualizedClassifier needs a fitted masker")
        return BaseModel(self._base_config(n_aspects, embedding_matrix.shape[1]),
                         embedding_matrix,
                         trainable_embeddings=self.trainable_embeddings,
                         seed=self.seed + _MODEL_SEED, extra_dim=n_aspects)

    def _mask_features(self, docs):
        """(B, Lmax, T) frozen mask columns aligned with this batch's padding."""
        if not hasattr(self, "_feature_cache"):
            self._feature_cache = {}
        missing = [d for d in docs if id(d) not in self._feature_cache]
        if missing:
            masks = self.masker.model_.inference_masks(
                missing, self.masker.vocab_, self.max_len, self.batch_size)
            for d in missing:
                self._feature_cache[id(d)] = masks[d.id][:, 1:]
        lengths = [min(len(d.tokens), self.max_len) for d in docs]
        width = max(lengths)
        out = np.zeros((len(docs), width, self.n_aspects_))
        for r, (doc, n) in enumerate(zip(docs, lengths)):
            out[r, :n] = self._feature_cache[id(doc)][:n]
        return out

    def _prepare_fit(self, train_docs, valid_docs):
        self._feature_cache = {}
        self._mask_features(train_docs)
        self._mask_features(valid_docs)

    def _forward(self, ids, valid, labels, rng, training, docs):
        return self.model_.forward(ids, valid, labels=labels, rng=rng,
                                   training=training,
                                   extra=self._mask_features(docs))


from .checkpoint import register_kind  # noqa: E402  (avoids an import cycle)

register_kind("mtm", MultiTargetMasker)
register_kind("base", BaselineClassifier)
register_kind("saa-cnn", SharedAttentionClassifier, {"encoder": "cnn"})
register_kind("saa-lstm", SharedAttentionClassifier, {"encoder": "lstm"})
register_kind("maa", AttentionClassifier, {"sparse": False})
register_kind("masa", AttentionClassifier, {"sparse": True})
register_kind("mtm-c", ContextualizedClassifier)
