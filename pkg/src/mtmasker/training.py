"""Training orchestration: configs, the random-search harness, and the
label-decorrelation protocol."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .checkpoint import estimator_class
from .data import Corpus, Document, assign_splits, label_matrix, mean_pairwise_correlation
from .errors import ConfigError, ParameterError
from .estimators import ContextualizedClassifier
from .fileio import atomic_write_jsonl, read_jsonl

MODEL_KINDS = ("base", "saa-cnn", "saa-lstm", "maa", "masa", "mtm", "mtm-c")


@dataclass
class TrainConfig:
    """Optimization protocol; model-specific settings ride in `model`."""

    model_kind: str = "mtm"
    lr: float = 0.001
    batch_size: int = 256
    max_epochs: int = 50
    clip_norm: float = 1.0
    dropout: float = 0.1
    l2: float = 1e-6
    patience: int = 5
    seed: int = 0
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "clip_norm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be non-negative", field=f"train.{name}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1", field="train.patience")
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}; "
                              f"valid kinds: {list(MODEL_KINDS)}", field="train.model_kind")


class TrainLog:
    """Per-epoch records; serialized as JSON lines."""

    def __init__(self, records):
        self.records = list(records)

    def __eq__(self, other):
        return isinstance(other, TrainLog) and self.to_lines() == other.to_lines()

    def __len__(self):
        return len(self.records)

    def best_epoch(self):
        return max(self.records, key=lambda r: r["val_macro_f1"])["epoch"]

    def to_lines(self):
        import json
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def save(self, path):
        atomic_write_jsonl(path, self.records)

    @classmethod
    def load(cls, path):
        return cls(read_jsonl(path))


def make_estimator(kind, **overrides):
    """Instantiate the estimator for a CLI model kind."""
    cls, fixed = estimator_class(kind)
    allowed = cls().get_params() if kind != "mtm-c" else \
        ContextualizedClassifier().get_params()
    bad = set(overrides) - set(allowed)
    if bad:
        raise ConfigError(f"unknown settings for kind {kind!r}: {sorted(bad)}",
                          field="model")
    merged = {**overrides, **fixed}
    if "filter_widths" in merged:
        merged["filter_widths"] = tuple(merged["filter_widths"])
    return cls(**merged)


def train(corpus, config, masker=None):
    """Fit `config.model_kind` on the corpus train split, early-stopped on the
    validation split -> (fitted estimator, TrainLog)."""
    if not corpus.splits.get("train") or not corpus.splits.get("valid"):
        raise ParameterError("corpus needs train and valid splits")
    overrides = dict(config.model)
    overrides.update(lr=config.lr, batch_size=config.batch_size,
                     max_epochs=config.max_epochs, clip_norm=config.clip_norm,
                     dropout=config.dropout, l2=config.l2,
                     patience=config.patience, seed=config.seed)
    estimator = make_estimator(config.model_kind, **overrides)
    if config.model_kind == "mtm-c":
        if masker is None:
            raise ConfigError("mtm-c requires a trained masker checkpoint",
                              field="model.masker_checkpoint")
        estimator.masker = masker
    train_docs = corpus.split("train")
    valid_docs = corpus.split("valid")
    estimator.fit(train_docs, None, validation_data=(valid_docs, None))
    return estimator, TrainLog(estimator.train_log_)


@dataclass
class SearchSpace:
    """Random-search candidate lists for every tunable hyperparameter."""

    lr: tuple = (0.001, 0.0005, 0.00075)
    hidden_size: tuple = (50, 100, 200)
    feature_maps: tuple = (50, 100, 200)
    bidirectional: tuple = (True, False)
    dropout: tuple = (0.0, 0.1, 0.2)
    l2: tuple = (0.0, 1e-6, 1e-8, 1e-10)
    tau: tuple = (0.5, 0.8, 1.0, 1.2)
    lambda_sel: tuple = (0.01, 0.02, 0.03, 0.04, 0.05)
    lambda_p: tuple = (0.05, 0.06, 0.07, 0.08, 0.09, 0.10,
                       0.11, 0.12, 0.13, 0.14, 0.15)
    lambda_cont: tuple = (0.02, 0.04, 0.06, 0.08, 0.10)
    trials: int = 10

    _MASK_ONLY = ("tau", "lambda_sel", "lambda_p", "lambda_cont")

    def sample(self, rng, model_kind="mtm"):
        draw = {}
        for name in ("lr", "hidden_size", "feature_maps", "bidirectional",
                     "dropout", "l2", "tau", "lambda_sel", "lambda_p",
                     "lambda_cont"):
            choices = getattr(self, name)
            if model_kind != "mtm" and name in self._MASK_ONLY:
                continue
            draw[name] = choices[int(rng.integers(0, len(choices)))]
        return draw


@dataclass
class TrialResult:
    trial: int
    settings: dict
    val_macro_f1: float | None
    error: str | None = None


def random_search(space, corpus, config, trials=None):
    """Independent seeded draws from the space, each trained with `train()`.

    Trial i uses seed `config.seed + i`.  A failed trial records its error
    and does not abort the search.  Results are ranked by validation
    macro-F1 descending."""
    trials = space.trials if trials is None else trials
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    results = []
    for i in range(trials):
        rng = Rng(config.seed + i)
        settings = space.sample(rng, config.model_kind)
        trial_cfg = TrainConfig(
            model_kind=config.model_kind,
            lr=settings.pop("lr"),
            batch_size=config.batch_size,
            max_epochs=config.max_epochs,
            clip_norm=config.clip_norm,
            dropout=settings.pop("dropout"),
            l2=settings.pop("l2"),
            patience=config.patience,
            seed=config.seed + i,
            model={**config.model, **settings},
        )
        record = {"lr": trial_cfg.lr, "dropout": trial_cfg.dropout,
                  "l2": trial_cfg.l2, **settings}
        try:
            estimator, _ = train(corpus, trial_cfg)
            results.append(TrialResult(i, record, float(estimator.best_val_f1_)))
        except Exception as e:  # a failed trial must not sink the others
            results.append(TrialResult(i, record, None, error=str(e)))
    results.sort(key=lambda r: (-(r.val_macro_f1 if r.val_macro_f1 is not None
                                  else -np.inf), r.trial))
    return results


@dataclass
class DecorrelationResult:
    corpus: Corpus
    achieved: float
    target: float
    reached_target: bool


def _project_document(doc, keep):
    remap = {a: i for i, a in enumerate(keep)}
    aspects = None
    if doc.sentence_aspects is not None:
        aspects = [remap.get(a) if a is not None else None
                   for a in doc.sentence_aspects]
    gold = None
    if doc.gold_word_aspects is not None:
        gold = [remap[g - 1] + 1 if (g > 0 and g - 1 in remap) else 0
                for g in doc.gold_word_aspects]
    return Document(
        id=doc.id, tokens=doc.tokens,
        labels=[doc.labels[a] for a in keep],
        raw_ratings=[doc.raw_ratings[a] for a in keep] if doc.raw_ratings else None,
        sentence_spans=doc.sentence_spans,
        sentence_aspects=aspects,
        gold_word_aspects=gold,
    )


def decorrelation_protocol(corpus, keep_aspects=None, target=0.30, seed=0):
    """Subsample toward a mean pairwise label correlation below `target`.

    Documents whose kept labels agree most are preferential drop candidates;
    a binary search finds the smallest cut reaching the target.  When the
    target is unreachable the best achieved correlation is reported instead.
    """
    if keep_aspects is None:
        keep_aspects = list(range(corpus.n_aspects))
    if not keep_aspects or any(not 0 <= a < corpus.n_aspects for a in keep_aspects):
        raise ParameterError(f"invalid aspect subset {keep_aspects}")
    docs = [_project_document(d, keep_aspects) for d in corpus.documents]
    names = [corpus.aspect_names[a] for a in keep_aspects]

    def build(selected):
        return Corpus(selected, names, assign_splits(len(selected), seed))

    labels = label_matrix(docs)
    if mean_pairwise_correlation(labels) <= target:
        return DecorrelationResult(build(docs), mean_pairwise_correlation(labels),
                                   target, True)
    T = len(keep_aspects)
    agreement = np.array([
        sum(1 for i in range(T) for j in range(i + 1, T)
            if doc.labels[i] == doc.labels[j])
        for doc in docs], dtype=np.float64)
    jitter = Rng(seed).uniform(size=len(docs))
    drop_order = np.lexsort((jitter, -agreement))

    def corr_after(k):
        kept = np.ones(len(docs), dtype=bool)
        kept[drop_order[:k]] = False
        if kept.sum() < 2:
            return None
        sub = labels[kept]
        # a constant label column has no defined correlation; such a cut is
        # not a valid decorrelation, so reject it
        if np.any(sub.std(axis=0) == 0):
            return None
        return mean_pairwise_correlation(sub)

    lo, hi = 0, len(docs) - 2
    best_k, best_corr = 0, mean_pairwise_correlation(labels)
    while lo <= hi:
        mid = (lo + hi) // 2
        c = corr_after(mid)
        if c is None:
            hi = mid - 1
            continue
        if c < best_corr:
            best_k, best_corr = mid, c
        if c <= target:
            hi = mid - 1
        else:
            lo = mid + 1
    kept = np.ones(len(docs), dtype=bool)
    kept[drop_order[:best_k]] = False
    selected = [d for d, keep in zip(docs, kept) if keep]
    achieved = mean_pairwise_correlation(label_matrix(selected))
    return DecorrelationResult(build(selected), achieved, target, achieved <= target)
