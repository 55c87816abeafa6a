"""Quantitative evaluation: rationale precision, percentile curves, topic
coherence (NPMI) with background subtraction, macro-F1, and mask statistics.

Word-aspect scores travel as ``{doc_id: (L, T) array}``: column j scores
each word's relevance to aspect j (0-based).  Sentence-level annotations
are ``{doc_id: {sentence_index: aspect_index}}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

_NPMI_EPS = 1e-12


# ---------------------------------------------------------------------------
# Precision against sentence-level annotations
# ---------------------------------------------------------------------------


def _annotated_positions(doc, annotations, aspect):
    """Token index set covered by sentences annotated with `aspect`."""
    positions = set()
    doc_ann = annotations.get(doc.id, {})
    for s_idx, a in doc_ann.items():
        if a == aspect and s_idx < len(doc.sentence_spans):
            start, end = doc.sentence_spans[s_idx]
            positions.update(range(start, end))
    return positions


@dataclass
class PrecisionReport:
    per_aspect: list            # precision per aspect (None when nothing selected)
    highlighted: list           # achieved fraction of words selected per aspect
    n_documents: int
    n_skipped: int              # documents without annotations


def rationale_precision(scores, docs, annotations, budget_fraction, corpus_wide=False):
    """Precision of the top-scoring words against sentence-level annotations.

    Per aspect, each document's `budget_fraction` highest-scoring words are
    selected (or a corpus-wide budget when `corpus_wide`); a selection is
    correct when it falls inside a sentence annotated with that aspect.
    """
    if not 0.0 < budget_fraction <= 1.0:
        raise ParameterError(f"budget_fraction must be in (0, 1], got {budget_fraction}")
    n_aspects = next(iter(scores.values())).shape[1]
    correct = np.zeros(n_aspects)
    selected = np.zeros(n_aspects)
    total_words = 0
    n_docs = n_skipped = 0
    usable = []
    for doc in docs:
        if doc.id not in scores:
            continue
        if doc.id not in annotations:
            n_skipped += 1
            continue
        usable.append(doc)
        total_words += len(doc.tokens)
    for aspect in range(n_aspects):
        if corpus_wide:
            pool = []
            for doc in usable:
                good = _annotated_positions(doc, annotations, aspect)
                col = scores[doc.id][:, aspect]
                pool.extend((float(col[p]), p in good) for p in range(len(col)))
            budget = int(round(budget_fraction * total_words))
            pool.sort(key=lambda t: -t[0])
            chosen = pool[:budget]
            selected[aspect] = len(chosen)
            correct[aspect] = sum(1 for _, ok in chosen if ok)
        else:
            for doc in usable:
                col = scores[doc.id][:, aspect]
                budget = max(1, int(round(budget_fraction * len(col))))
                top = np.argsort(-col, kind="stable")[:budget]
                good = _annotated_positions(doc, annotations, aspect)
                selected[aspect] += len(top)
                correct[aspect] += sum(1 for p in top if int(p) in good)
    n_docs = len(usable)
    per_aspect = [float(correct[a] / selected[a]) if selected[a] else None
                  for a in range(n_aspects)]
    highlighted = [float(selected[a] / total_words) if total_words else 0.0
                   for a in range(n_aspects)]
    return PrecisionReport(per_aspect, highlighted, n_docs, n_skipped)


# ---------------------------------------------------------------------------
# Percentile-thresholded curves
# ---------------------------------------------------------------------------


@dataclass
class PercentileCurve:
    """Per aspect: score thresholds at the 0th..99th percentile with
    precision / recall / F1 at each, plus the selected-word fraction."""

    thresholds: np.ndarray      # (T, 100)
    precision: np.ndarray       # (T, 100)
    recall: np.ndarray
    f1: np.ndarray
    fraction: np.ndarray        # selected fraction of all words
    empty_selection: np.ndarray  # bool: precision reported as 1.0 by convention
    degenerate: list = field(default_factory=list)  # aspects with constant scores


def percentile_thresholds(scores, n_aspects):
    """The 100 empirical percentiles (0..99) of each aspect's score pool."""
    pools = [[] for _ in range(n_aspects)]
    for mat in scores.values():
        for a in range(n_aspects):
            pools[a].extend(mat[:, a].tolist())
    out = np.zeros((n_aspects, 100))
    for a in range(n_aspects):
        if not pools[a]:
            raise ParameterError(f"aspect {a} has an empty score distribution")
        out[a] = np.percentile(np.asarray(pools[a]), np.arange(100))
    return out


def percentile_curves(scores, docs, annotations):
    """Precision/recall/F1 against annotations at every percentile threshold."""
    n_aspects = next(iter(scores.values())).shape[1]
    thresholds = percentile_thresholds(scores, n_aspects)
    degenerate = [a for a in range(n_aspects)
                  if np.allclose(thresholds[a], thresholds[a, 0])]
    shape = (n_aspects, 100)
    precision = np.ones(shape)
    recall = np.zeros(shape)
    f1 = np.zeros(shape)
    fraction = np.zeros(shape)
    empty = np.zeros(shape, dtype=bool)
    usable = [d for d in docs if d.id in scores and d.id in annotations]
    total_words = sum(len(d.tokens) for d in usable)
    for a in range(n_aspects):
        gold_sets = {d.id: _annotated_positions(d, annotations, a) for d in usable}
        n_gold = sum(len(s) for s in gold_sets.values())
        for p in range(100):
            thr = thresholds[a, p]
            n_sel = n_cor = 0
            for d in usable:
                col = scores[d.id][:, a]
                chosen = np.nonzero(col >= thr)[0]
                n_sel += len(chosen)
                good = gold_sets[d.id]
                n_cor += sum(1 for pos in chosen if int(pos) in good)
            if n_sel == 0:
                empty[a, p] = True
                precision[a, p] = 1.0
            else:
                precision[a, p] = n_cor / n_sel
            recall[a, p] = n_cor / n_gold if n_gold else 0.0
            pr, rc = precision[a, p], recall[a, p]
            f1[a, p] = 2 * pr * rc / (pr + rc) if (pr + rc) > 0 else 0.0
            fraction[a, p] = n_sel / total_words if total_words else 0.0
    return PercentileCurve(thresholds, precision, recall, f1, fraction, empty,
                           degenerate)


# ---------------------------------------------------------------------------
# Aspect word distributions and NPMI coherence
# ---------------------------------------------------------------------------


@dataclass
class AspectWordDistribution:
    """P(word | aspect) from soft score mass, its cross-aspect background,
    and the background-subtracted distribution used for top-word ranking."""

    prob: dict          # aspect -> {word: P(w|a)}
    background: dict    # word -> mean over aspects
    adjusted: dict      # aspect -> {word: P(w|a) - background}

    def top_words(self, aspect, n):
        ranked = sorted(self.adjusted[aspect].items(), key=lambda kv: (-kv[1], kv[0]))
        return [w for w, _ in ranked[:n]]


def aspect_word_distribution(scores, docs):
    """Aggregate per-word score mass into per-aspect word distributions."""
    n_aspects = next(iter(scores.values())).shape[1]
    mass = [{} for _ in range(n_aspects)]
    for doc in docs:
        if doc.id not in scores:
            continue
        mat = scores[doc.id]
        for pos, word in enumerate(doc.tokens[:mat.shape[0]]):
            for a in range(n_aspects):
                if mat[pos, a] != 0.0:
                    mass[a][word] = mass[a].get(word, 0.0) + float(mat[pos, a])
    prob = []
    for a in range(n_aspects):
        z = sum(mass[a].values())
        prob.append({w: v / z for w, v in mass[a].items()} if z > 0 else {})
    words = set()
    for p in prob:
        words.update(p)
    background = {w: sum(p.get(w, 0.0) for p in prob) / n_aspects for w in words}
    adjusted = [{w: p.get(w, 0.0) - background[w] for w in words} for p in prob]
    return AspectWordDistribution(
        prob={a: prob[a] for a in range(n_aspects)},
        background=background,
        adjusted={a: adjusted[a] for a in range(n_aspects)},
    )


class CooccurrenceStats:
    """Document-level word and word-pair frequencies over a reference corpus."""

    def __init__(self, docs):
        self.n_docs = len(docs)
        self._doc_sets = {}
        for doc in docs:
            for w in set(doc.tokens):
                self._doc_sets.setdefault(w, set()).add(doc.id)
        self.missing = set()

    @staticmethod
    def _clamp(p):
        # both guards: log(0) at the bottom, the 0/0 pair term at p = 1
        return min(max(p, _NPMI_EPS), 1.0 - _NPMI_EPS)

    def p_word(self, w):
        df = len(self._doc_sets.get(w, ()))
        if df == 0:
            self.missing.add(w)
        return self._clamp(df / self.n_docs)

    def p_pair(self, w1, w2):
        s1 = self._doc_sets.get(w1, set())
        s2 = self._doc_sets.get(w2, set())
        return self._clamp(len(s1 & s2) / self.n_docs)


def npmi(top_words, stats, normalized=True):
    """Pairwise normalized mutual-information coherence of a word list.

    Each pair contributes ln(P(j,k)/(P(j)P(k))) / (-ln P(j,k)), a value in
    [-1, 1].  By default the sum is divided by the N(N-1)/2 pair count so
    values are comparable across N; pass ``normalized=False`` for the raw sum.
    """
    n = len(top_words)
    if n < 2:
        raise ParameterError(f"npmi needs at least two words, got {n}")
    total = 0.0
    for j in range(1, n):
        for k in range(j):
            pj = stats.p_word(top_words[j])
            pk = stats.p_word(top_words[k])
            pjk = stats.p_pair(top_words[k], top_words[j])
            total += np.log(pjk / (pk * pj)) / (-np.log(pjk))
    return total / (n * (n - 1) / 2) if normalized else total


@dataclass
class CoherenceReport:
    top_n_values: tuple
    per_aspect: dict       # aspect -> {N: npmi}
    per_n_mean: dict       # N -> mean over aspects
    mean: float
    raw_sums: dict         # aspect -> {N: unnormalized sum}
    capped_at: int | None = None


def coherence_report(distribution, docs, top_n_values=(5, 10, 15, 20, 25, 30)):
    """NPMI per aspect per top-N cut, averaged per N and overall."""
    stats = CooccurrenceStats(docs)
    aspects = sorted(distribution.adjusted)
    vocab_size = min(len(distribution.adjusted[a]) for a in aspects)
    capped = None
    values = []
    for n in top_n_values:
        if n > vocab_size:
            capped = vocab_size
            n = vocab_size
        values.append(n)
    per_aspect = {a: {} for a in aspects}
    raw = {a: {} for a in aspects}
    for n_req, n in zip(top_n_values, values):
        for a in aspects:
            words = distribution.top_words(a, n)
            per_aspect[a][n_req] = npmi(words, stats)
            raw[a][n_req] = npmi(words, stats, normalized=False)
    per_n_mean = {n: float(np.mean([per_aspect[a][n] for a in aspects]))
                  for n in top_n_values}
    mean = float(np.mean(list(per_n_mean.values())))
    return CoherenceReport(tuple(top_n_values), per_aspect, per_n_mean, mean, raw,
                           capped_at=capped)


# ---------------------------------------------------------------------------
# Classification metrics and mask statistics
# ---------------------------------------------------------------------------


def _binary_f1(pred, gold, positive):
    tp = int(np.sum((pred == positive) & (gold == positive)))
    fp = int(np.sum((pred == positive) & (gold != positive)))
    fn = int(np.sum((pred != positive) & (gold == positive)))
    if tp == 0 and (fp or fn):
        return 0.0
    if tp == 0:
        return 0.0  # class absent and never predicted
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def macro_f1(predictions, labels, positive_class_only=False):
    """Macro F1 in percent: per aspect the unweighted mean of both class-wise
    F1 scores (or the positive class only), then the mean over aspects.

    Returns (macro, per_aspect_list).
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ParameterError(
            f"predictions {predictions.shape} and labels {labels.shape} differ")
    if predictions.size == 0:
        raise ParameterError("empty evaluation set")
    per_aspect = []
    for a in range(labels.shape[1]):
        if positive_class_only:
            score = _binary_f1(predictions[:, a], labels[:, a], 1)
        else:
            score = np.mean([_binary_f1(predictions[:, a], labels[:, a], c)
                             for c in (0, 1)])
        per_aspect.append(100.0 * float(score))
    return float(np.mean(per_aspect)), per_aspect


def aspect_switch_count(labels):
    """Number of changes between consecutive words' winning aspects.

    `labels` uses 0 for irrelevant and 1..T for aspects; irrelevant runs are
    transparent (a ... 0 ... a is not a switch).
    """
    relevant = [l for l in labels if l != 0]
    return sum(1 for prev, cur in zip(relevant, relevant[1:]) if prev != cur)


def mask_to_labels(mask_probs):
    """Per-word winning dimension of an (L, T+1) mask; ties go to the lowest index."""
    return np.argmax(np.asarray(mask_probs), axis=1)


def count_params(model):
    """Total trainable scalars (frozen embeddings excluded by the model)."""
    return int(model.count_params())
