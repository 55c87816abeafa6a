"""The multi-target masker network and its losses.

The masker assigns every word a probability distribution over the T
targets plus an extra "irrelevant" dimension (index 0).  Each target's
probability column scales the word embeddings before a shared
convolutional encoder and per-target classifier heads.  Two regularizers
shape the mask: one holds the expected fraction of relevant words near a
prior, the other penalizes distribution changes between adjacent words.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, Tensor
from .data import pad_batch
from .errors import ContractError, EmptySequenceError, ParameterError
from .layers import BiLstm, Classifier, ConvBank, Linear, ParamRegistry


@dataclass
class MtmConfig:
    """Architecture and loss hyperparameters for the masker model."""

    n_aspects: int
    embed_dim: int = 50
    masker_hidden: int = 50          # LSTM units per direction
    bidirectional: bool = True
    filter_widths: tuple = (3, 5, 7)
    feature_maps: int = 50
    classifier_hidden: int = 50
    tau: float = 0.8
    lambda_sel: float = 0.03
    lambda_cont: float = 0.03
    lambda_p: float = 0.15
    dropout: float = 0.1
    l2: float = 1e-6
    straight_through: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.lambda_p < 1.0:
            raise ParameterError(f"lambda_p must be in (0, 1), got {self.lambda_p}")
        for name in ("lambda_sel", "lambda_cont"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if any(w % 2 == 0 for w in self.filter_widths):
            raise ParameterError(f"filter widths must be odd, got {self.filter_widths}")


def beer_config(n_aspects=4):
    """Published large-corpus configuration for the beer-review domain."""
    return MtmConfig(n_aspects=n_aspects, embed_dim=200, masker_hidden=50,
                     classifier_hidden=62, lambda_sel=0.03, lambda_cont=0.03,
                     lambda_p=0.15)


def hotel_config(n_aspects=5):
    """Published large-corpus configuration for the hotel-review domain."""
    return MtmConfig(n_aspects=n_aspects, embed_dim=300, masker_hidden=50,
                     classifier_hidden=50, lambda_sel=0.02, lambda_cont=0.02,
                     lambda_p=0.10)


class MultiMask:
    """Per-word relevance distributions: row l is a distribution over
    (irrelevant, target 1, ..., target T)."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ParameterError(f"mask must be 2-D (L, T+1), got {self.probs.shape}")

    @property
    def length(self):
        return self.probs.shape[0]

    @property
    def n_targets(self):
        return self.probs.shape[1] - 1

    def sub_mask(self, i):
        """Column i as a length-L vector (i=0 is the irrelevant dimension)."""
        if not 0 <= i <= self.n_targets:
            raise ContractError(f"sub_mask index {i} outside [0, {self.n_targets}]")
        return self.probs[:, i].copy()

    def target_scores(self):
        """(L, T) matrix of target columns 1..T, used as word-aspect scores."""
        return self.probs[:, 1:].copy()


@dataclass
class MtmOutput:
    mask: MultiMask
    logits: np.ndarray                 # (T, 2)
    losses: dict                       # pred / sel / cont / total floats
    loss_tensor: Tensor | None = None  # total loss, for backprop


class MtmModel:
    """Masker + shared encoder + per-target classifiers over one embedding table."""

    def __init__(self, config, embedding_matrix, trainable_embeddings=True, seed=0):
        self.config = config
        self.reg = ParamRegistry()
        rng = Rng(seed)
        self.embedding = Tensor(np.asarray(embedding_matrix, dtype=np.float64),
                                requires_grad=trainable_embeddings)
        self.trainable_embeddings = trainable_embeddings
        d = self.embedding.data.shape[1]
        if d != config.embed_dim:
            raise ParameterError(
                f"embedding dim {d} != config.embed_dim {config.embed_dim}")
        self.masker_lstm = BiLstm(self.reg, rng, "masker.lstm", d, config.masker_hidden,
                                  config.bidirectional)
        self.mask_head = Linear(self.reg, rng, "masker.head",
                                self.masker_lstm.out_dim, config.n_aspects + 1)
        self.encoder = ConvBank(self.reg, rng, "encoder", d,
                                config.filter_widths, config.feature_maps)
        self.classifiers = [
            Classifier(self.reg, rng, f"clf{i}", self.encoder.out_dim,
                       config.classifier_hidden)
            for i in range(config.n_aspects)]

    # -- parameter access -------------------------------------------------
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
        """Trainable scalar count; frozen embeddings are excluded."""
        n = self.reg.count()
        if self.trainable_embeddings:
            n += self.embedding.data.size
        return n

    # -- forward ----------------------------------------------------------
    def word_log_probs(self, embedded, valid):
        """Per-word log target-relevance distributions: (B, L, T+1)."""
        states = self.masker_lstm(embedded, valid)
        return ad.log_softmax(self.mask_head(states), axis=-1)

    def mask_distribution(self, embedded, valid, rng, training):
        """Mask rows: sampled during training, plain softmax at inference."""
        log_probs = self.word_log_probs(embedded, valid)
        if training:
            return ad.gumbel_softmax(log_probs, self.config.tau, rng,
                                     hard=self.config.straight_through)
        return ad.softmax(log_probs, axis=-1)

    def encode_target(self, embedded, mask, target, valid, rng, training):
        """Shared conv encoder over embeddings scaled by one target's column."""
        if target < 1:
            raise ContractError("target index must be >= 1; column 0 only absorbs "
                                "probability and is never encoded")
        column = ad.getitem(mask, (Ellipsis, slice(target, target + 1)))
        scaled = ad.mul(embedded, column)
        feats = ad.relu(self.encoder(scaled))
        feats = ad.masked_neg_inf(feats, valid)
        return ad.max_over_time(feats)

    def forward(self, ids, valid, labels=None, rng=None, training=False):
        """Batched forward pass.

        Returns a dict with the mask tensor (B, L, T+1), per-target logits
        (list of (B, 2) tensors) and, when labels are given, the loss terms.
        """
        cfg = self.config
        ids = np.asarray(ids)
        valid = np.asarray(valid, dtype=np.float64)
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise EmptySequenceError(f"forward needs (B, L>=1) token ids, got {ids.shape}")
        embedded = ad.embedding_lookup(self.embedding, ids)
        embedded = ad.mul(embedded, valid[..., None])
        embedded = ad.dropout(embedded, cfg.dropout, rng, training)
        mask = self.mask_distribution(embedded, valid, rng, training)
        # all targets share the encoder, so run them as one large batch
        B = ids.shape[0]
        scaled = [ad.mul(embedded, ad.getitem(mask, (Ellipsis, slice(i, i + 1))))
                  for i in range(1, cfg.n_aspects + 1)]
        joined = scaled[0] if len(scaled) == 1 else ad.concat(scaled, axis=0)
        feats = ad.relu(self.encoder(joined))
        feats = ad.masked_neg_inf(feats, np.tile(valid, (cfg.n_aspects, 1)))
        pooled = ad.max_over_time(feats)
        logits = [self.classifiers[i](
            ad.getitem(pooled, (slice(i * B, (i + 1) * B),)),
            cfg.dropout, rng, training)
            for i in range(cfg.n_aspects)]
        out = {"mask": mask, "logits": logits}
        if labels is not None:
            out["losses"] = self.losses(mask, logits, np.asarray(labels), valid)
        return out

    def losses(self, mask, logits, labels, valid):
        cfg = self.config
        pred = loss_pred(logits, labels)
        sel = loss_sel(mask, cfg.lambda_p, valid)
        cont = loss_cont(mask, valid)
        total = ad.add(pred, ad.add(ad.mul(sel, cfg.lambda_sel),
                                    ad.mul(cont, cfg.lambda_cont)))
        return {"pred": pred, "sel": sel, "cont": cont, "total": total}

    def inference_masks(self, docs, vocab, max_len=256, batch_size=256):
        """Deterministic (no noise, no dropout) masks: {doc_id: (L, T+1) array}."""
        out = {}
        for start in range(0, len(docs), batch_size):
            chunk = docs[start:start + batch_size]
            ids, valid, _ = pad_batch(chunk, vocab, max_len)
            mask = self.forward(ids, valid, training=False)["mask"].data
            for r, doc in enumerate(chunk):
                n = int(valid[r].sum())
                out[doc.id] = mask[r, :n].copy()
        return out


# ---------------------------------------------------------------------------
# Loss terms (batched; single documents are batches of one)
# ---------------------------------------------------------------------------


def loss_pred(logits, labels):
    """Sum over targets of per-target cross-entropy, averaged over the batch."""
    labels = np.asarray(labels)
    total = None
    for i, lg in enumerate(logits):
        ce = ad.cross_entropy(lg, labels[:, i])
        total = ce if total is None else ad.add(total, ce)
    return ad.tmean(total)


def _lengths(valid):
    return valid.sum(axis=1)


def loss_sel(mask, lambda_p, valid):
    """Cross-entropy pushing the selected-word fraction toward the prior.

    The fraction is the per-document mean probability of any-target
    relevance (one minus the irrelevant column), padding excluded.
    """
    relevant = ad.sub(1.0, ad.getitem(mask, (Ellipsis, 0)))
    relevant = ad.mul(relevant, valid)
    p_sel = ad.div(ad.tsum(relevant, axis=1), _lengths(valid))
    return ad.tmean(ad.binary_cross_entropy(p_sel, lambda_p))


def loss_cont(mask, valid):
    """Penalty on the mean L1 change between adjacent words' distributions.

    Documents with a single word contribute zero (no transitions).
    """
    B, L, K = mask.data.shape
    if L < 2:
        return Tensor(0.0)
    diff = ad.absolute(ad.sub(ad.getitem(mask, (slice(None), slice(1, None))),
                              ad.getitem(mask, (slice(None), slice(0, L - 1)))))
    per_pair = ad.mul(ad.tsum(diff, axis=2), 1.0 / K)
    pair_valid = valid[:, 1:] * valid[:, :-1]
    denom = np.maximum(_lengths(valid) - 1.0, 1.0)
    p_dis = ad.div(ad.tsum(ad.mul(per_pair, pair_valid), axis=1), denom)
    return ad.tmean(ad.binary_cross_entropy(p_dis, 0.0))


# ---------------------------------------------------------------------------
# Single-document views used by tests, evaluation, and rationale extraction
# ---------------------------------------------------------------------------


def apply_mask(embeddings, mask, target):
    """Scale each word embedding by its probability for one target (>= 1)."""
    if target < 1:
        raise ContractError("irrelevant column (index 0) is never applied to embeddings")
    probs = mask.probs if isinstance(mask, MultiMask) else np.asarray(mask)
    return np.asarray(embeddings) * probs[:, target:target + 1]


def masker_forward(model, ids, rng=None, training=False):
    """Mask for a single unpadded id sequence -> MultiMask."""
    ids = np.asarray(ids)
    if ids.size == 0:
        raise EmptySequenceError("masker_forward needs at least one token")
    valid = np.ones((1, ids.size))
    embedded = ad.embedding_lookup(model.embedding, ids[None, :])
    mask = model.mask_distribution(embedded, valid, rng, training)
    return MultiMask(mask.data[0])


def mtm_forward(model, doc, vocab, rng=None, training=False, max_len=256):
    """Full single-document pass -> MtmOutput with mask, logits, and losses."""
    ids, valid, labels = pad_batch([doc], vocab, max_len)
    out = model.forward(ids, valid, labels=labels, rng=rng, training=training)
    losses = out["losses"]
    return MtmOutput(
        mask=MultiMask(out["mask"].data[0]),
        logits=np.stack([lg.data[0] for lg in out["logits"]]),
        losses={k: float(v.data) for k, v in losses.items()},
        loss_tensor=losses["total"],
    )
