"""Comparison architectures sharing the masker model's building blocks.

* ``BaseModel`` -- embeddings, shared conv encoder, per-target heads.
* ``SharedAttentionModel`` -- one attention over positions feeding all heads
  (conv or LSTM features).
* ``AspectAttentionModel`` -- a separate LSTM, attention, and head per
  target; attention is additive (softmax) or sparse (simplex projection).
* ``BaseModel`` with ``extra_dim=T`` consumes embeddings augmented with a
  frozen trained mask, the contextualized variant.

Attention normalizes over sequence positions; mask rows normalize over the
target set.  Both conventions are asserted in the tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .data import pad_batch
from .errors import EmptySequenceError, ParameterError, SchemaError
from .layers import AdditiveAttention, BiLstm, Classifier, ConvBank, ParamRegistry

_NEG_BIG = 1e30


def sparsemax(x, axis=-1):
    """Euclidean projection of scores onto the probability simplex.

    Computed by sort-and-threshold; produces exact zeros outside the
    support.  Backward distributes the gradient over the support minus its
    mean (zero elsewhere).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    z = np.moveaxis(x.data, axis, -1)
    if not np.all(np.isfinite(z)):
        raise ParameterError("sparsemax requires finite scores")
    z_sorted = -np.sort(-z, axis=-1)
    k = np.arange(1, z.shape[-1] + 1, dtype=np.float64)
    cumsum = np.cumsum(z_sorted, axis=-1)
    support = 1.0 + k * z_sorted > cumsum
    k_star = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(cumsum, k_star.astype(np.int64) - 1, axis=-1) - 1.0) / k_star
    p = np.maximum(z - tau, 0.0)
    out_data = np.moveaxis(p, -1, axis)
    supp_mask = out_data > 0

    def bwd(g):
        if x.requires_grad:
            gs = g * supp_mask
            nnz = supp_mask.sum(axis=axis, keepdims=True)
            mean = gs.sum(axis=axis, keepdims=True) / np.maximum(nnz, 1)
            x._accumulate(np.where(supp_mask, g - mean, 0.0))

    return Tensor(out_data, parents=(x,), backward=bwd)


class AttentionWeights:
    """Per-position attention weights; one head (shared) or T heads (aspect-wise)."""

    def __init__(self, weights, heads):
        self.weights = np.asarray(weights, dtype=np.float64)  # (heads, L)
        self.heads = heads

    def per_aspect_scores(self, n_aspects):
        """(L, T) score matrix; a shared head is replicated across aspects."""
        if self.heads == 1:
            return np.repeat(self.weights.T, n_aspects, axis=1)
        return self.weights.T.copy()


class _EmbeddingModelBase:
    """Common embedding handling and parameter bookkeeping."""

    def __init__(self, config, embedding_matrix, trainable_embeddings=True, seed=0):
        self.config = config
        self.reg = ParamRegistry()
        self.rng_init = Rng(seed)
        self.embedding = Tensor(np.asarray(embedding_matrix, dtype=np.float64),
                                requires_grad=trainable_embeddings)
        self.trainable_embeddings = trainable_embeddings

    def parameters(self):
        ps = self.reg.tensors()
        if self.trainable_embeddings:
            ps = [self.embedding] + ps
        return ps

    def weight_tensors(self):
        return self.reg.weight_tensors()

    def named_parameters(self):
        named = [("embedding", self.embedding)] if self.trainable_embeddings else []
        return named + self.reg.named()

    def count_params(self):
        n = self.reg.count()
        if self.trainable_embeddings:
            n += self.embedding.data.size
        return n

    def _embed(self, ids, valid, rng, training, extra=None):
        embedded = ad.embedding_lookup(self.embedding, np.asarray(ids))
        embedded = ad.mul(embedded, np.asarray(valid, dtype=np.float64)[..., None])
        if extra is not None:
            embedded = ad.concat([embedded, Tensor(extra)], axis=-1)
        return ad.dropout(embedded, self.config.dropout, rng, training)

    def prediction_losses(self, logits, labels):
        labels = np.asarray(labels)
        total = None
        for i, lg in enumerate(logits):
            ce = ad.cross_entropy(lg, labels[:, i])
            total = ce if total is None else ad.add(total, ce)
        pred = ad.tmean(total)
        return {"pred": pred, "sel": Tensor(0.0), "cont": Tensor(0.0), "total": pred}


class BaseModel(_EmbeddingModelBase):
    """Shared conv encoder with per-target classifier heads (no interpretability).

    ``extra_dim > 0`` widens the encoder input for per-word constant features
    appended after the embedding lookup (the contextualized variant).
    """

    def __init__(self, config, embedding_matrix, trainable_embeddings=True, seed=0,
                 extra_dim=0):
        super().__init__(config, embedding_matrix, trainable_embeddings, seed)
        self.extra_dim = extra_dim
        d = self.embedding.data.shape[1] + extra_dim
        self.encoder = ConvBank(self.reg, self.rng_init, "encoder", d,
                                config.filter_widths, config.feature_maps)
        self.classifiers = [
            Classifier(self.reg, self.rng_init, f"clf{i}", self.encoder.out_dim,
                       config.classifier_hidden)
            for i in range(config.n_aspects)]

    def forward(self, ids, valid, labels=None, rng=None, training=False, extra=None):
        if self.extra_dim and (extra is None or extra.shape[-1] != self.extra_dim):
            raise SchemaError(f"model expects {self.extra_dim} appended feature columns")
        embedded = self._embed(ids, valid, rng, training, extra)
        feats = ad.relu(self.encoder(embedded))
        pooled = ad.max_over_time(ad.masked_neg_inf(feats, valid))
        logits = [clf(pooled, self.config.dropout, rng, training)
                  for clf in self.classifiers]
        out = {"logits": logits}
        if labels is not None:
            out["losses"] = self.prediction_losses(logits, labels)
        return out


def attention_weights(scores, valid, sparse=False):
    """Normalize position scores over the sequence, ignoring padding."""
    offset = (np.asarray(valid, dtype=np.float64) - 1.0) * _NEG_BIG
    masked = ad.add(scores, offset)
    return sparsemax(masked, axis=-1) if sparse else ad.softmax(masked, axis=-1)


class SharedAttentionModel(_EmbeddingModelBase):
    """One additive attention over encoder states, shared by all target heads."""

    def __init__(self, config, embedding_matrix, trainable_embeddings=True, seed=0,
                 encoder_kind="cnn"):
        super().__init__(config, embedding_matrix, trainable_embeddings, seed)
        d = self.embedding.data.shape[1]
        if encoder_kind == "cnn":
            self.encoder = ConvBank(self.reg, self.rng_init, "encoder", d,
                                    config.filter_widths, config.feature_maps)
            feat_dim = self.encoder.out_dim
        elif encoder_kind == "lstm":
            self.encoder = BiLstm(self.reg, self.rng_init, "encoder", d,
                                  config.masker_hidden, config.bidirectional)
            feat_dim = self.encoder.out_dim
        else:
            raise ParameterError(f"unknown encoder kind {encoder_kind!r}")
        self.encoder_kind = encoder_kind
        self.attention = AdditiveAttention(self.reg, self.rng_init, "attn",
                                           feat_dim, config.masker_hidden)
        self.classifiers = [
            Classifier(self.reg, self.rng_init, f"clf{i}", feat_dim,
                       config.classifier_hidden)
            for i in range(config.n_aspects)]

    def forward(self, ids, valid, labels=None, rng=None, training=False):
        embedded = self._embed(ids, valid, rng, training)
        if self.encoder_kind == "cnn":
            states = ad.relu(self.encoder(embedded))
        else:
            states = self.encoder(embedded, valid)
        weights = attention_weights(self.attention.scores(states), valid)
        context = ad.tsum(ad.mul(states, ad.reshape(
            weights, weights.data.shape + (1,))), axis=1)
        logits = [clf(context, self.config.dropout, rng, training)
                  for clf in self.classifiers]
        out = {"logits": logits, "attention": weights}
        if labels is not None:
            out["losses"] = self.prediction_losses(logits, labels)
        return out


class AspectAttentionModel(_EmbeddingModelBase):
    """A separate LSTM encoder, attention, and classifier per target.

    ``sparse=True`` swaps softmax for the simplex projection, yielding
    exact zeros in the attention weights.
    """

    def __init__(self, config, embedding_matrix, trainable_embeddings=True, seed=0,
                 sparse=False):
        super().__init__(config, embedding_matrix, trainable_embeddings, seed)
        self.sparse = sparse
        d = self.embedding.data.shape[1]
        self.towers = []
        for i in range(config.n_aspects):
            enc = BiLstm(self.reg, self.rng_init, f"enc{i}", d, config.masker_hidden,
                         config.bidirectional)
            attn = AdditiveAttention(self.reg, self.rng_init, f"attn{i}",
                                     enc.out_dim, config.masker_hidden)
            clf = Classifier(self.reg, self.rng_init, f"clf{i}", enc.out_dim,
                             config.classifier_hidden)
            self.towers.append((enc, attn, clf))

    def forward(self, ids, valid, labels=None, rng=None, training=False):
        embedded = self._embed(ids, valid, rng, training)
        logits, weights = [], []
        for enc, attn, clf in self.towers:
            states = enc(embedded, valid)
            w = attention_weights(attn.scores(states), valid, sparse=self.sparse)
            context = ad.tsum(ad.mul(states, ad.reshape(
                w, w.data.shape + (1,))), axis=1)
            logits.append(clf(context, self.config.dropout, rng, training))
            weights.append(w)
        out = {"logits": logits, "attention": weights}
        if labels is not None:
            out["losses"] = self.prediction_losses(logits, labels)
        return out


def additive_attention_single(attn, states_data):
    """Attention weights for one unpadded (L, d) state matrix -> AttentionWeights."""
    states_data = np.asarray(states_data)
    if states_data.shape[0] == 0:
        raise EmptySequenceError("attention needs at least one position")
    scores = attn.scores(Tensor(states_data[None]))
    w = ad.softmax(scores, axis=-1)
    return AttentionWeights(w.data, heads=1)


def build_contextualized(corpus, mtm_model, vocab, max_len=256):
    """Frozen inference masks as per-word features: {doc_id: (L, T) array}.

    Column j holds the word's probability for target j+1; the irrelevant
    column is dropped (rows plus the implied irrelevant mass sum to one).
    """
    if mtm_model.config.n_aspects != corpus.n_aspects:
        raise SchemaError(
            f"checkpoint has {mtm_model.config.n_aspects} targets, "
            f"corpus has {corpus.n_aspects}")
    masks = mtm_model.inference_masks(corpus.documents, vocab, max_len)
    return {doc_id: m[:, 1:].copy() for doc_id, m in masks.items()}


def attention_scores_for_docs(model, docs, vocab, max_len=256, batch_size=256):
    """Per-word aspect scores {doc_id: (L, T)} from a fitted attention model."""
    T = model.config.n_aspects
    out = {}
    for start in range(0, len(docs), batch_size):
        chunk = docs[start:start + batch_size]
        ids, valid, _ = pad_batch(chunk, vocab, max_len)
        res = model.forward(ids, valid, training=False)
        att = res.get("attention")
        if att is None:
            raise ParameterError("model does not produce attention weights")
        if isinstance(att, list):  # aspect-wise: T tensors of (B, L)
            stacked = np.stack([w.data for w in att], axis=-1)  # (B, L, T)
        else:
            stacked = np.repeat(att.data[..., None], T, axis=-1)
        for r, doc in enumerate(chunk):
            n = int(valid[r].sum())
            out[doc.id] = stacked[r, :n].copy()
    return out
