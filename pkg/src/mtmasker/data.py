"""Corpus ingestion, vocabulary/embedding management, and synthetic review generation.

Corpus files are UTF-8 JSON lines, one record per review:
``{"id": ..., "text": ..., "ratings": [r1..rT], "sentence_aspects": [...]}``.
Annotation files are JSON lines of ``{"id", "sentence_index", "aspect_index"}``
triples.  Aspect indices in files are 0-based (0..T-1); the irrelevant mask
dimension exists only inside model mask matrices.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .errors import FormatError, ParameterError, ParseError, SchemaError

PAD, UNK = "<pad>", "<unk>"

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")
_SENTENCE_END = {".", "!", "?"}


def tokenize(text):
    """Lowercase, split on whitespace; punctuation becomes its own token."""
    return _TOKEN_RE.findall(text.lower())


def sentence_spans(tokens):
    """Split a token list into (start, end) sentence ranges at . ! ? tokens."""
    spans, start = [], 0
    for i, tok in enumerate(tokens):
        if tok in _SENTENCE_END:
            spans.append((start, i + 1))
            start = i + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    return spans


def binarize(rating):
    """Star rating -> binary sentiment: 1 iff rating >= 3."""
    if not 1.0 <= rating <= 5.0:
        raise ParameterError(f"rating must be in [1, 5], got {rating}")
    return 1 if rating >= 3.0 else 0


@dataclass
class Document:
    """One tokenized review with per-target labels."""

    id: str
    tokens: list
    labels: list
    raw_ratings: list | None = None
    sentence_spans: list = field(default_factory=list)
    sentence_aspects: list | None = None
    gold_word_aspects: list | None = None  # per token: 0 = irrelevant, i = aspect i-1

    def __len__(self):
        return len(self.tokens)


@dataclass
class Corpus:
    documents: list
    aspect_names: list
    splits: dict = field(default_factory=dict)  # name -> list of document indices

    @property
    def n_aspects(self):
        return len(self.aspect_names)

    def split(self, name):
        return [self.documents[i] for i in self.splits.get(name, [])]

    def by_id(self, doc_id):
        for d in self.documents:
            if d.id == doc_id:
                return d
        raise KeyError(doc_id)


def assign_splits(n_docs, seed, fractions=(0.8, 0.1, 0.1)):
    """Deterministic shuffled 80/10/10 train/valid/test index assignment."""
    order = Rng(seed).permutation(n_docs)
    n_train = int(round(fractions[0] * n_docs))
    n_valid = int(round(fractions[1] * n_docs))
    return {
        "train": sorted(int(i) for i in order[:n_train]),
        "valid": sorted(int(i) for i in order[n_train:n_train + n_valid]),
        "test": sorted(int(i) for i in order[n_train + n_valid:]),
    }


def load_corpus(path, aspect_names=None, seed=0):
    """Parse a JSON-lines corpus file; binarize ratings; assign seeded splits."""
    documents = []
    n_aspects = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON record: {e.msg}", line=line_no) from e
            for key in ("id", "text", "ratings"):
                if key not in rec:
                    raise ParseError(f"record missing field {key!r}", line=line_no)
            tokens = tokenize(rec["text"])
            if not tokens:
                raise ParseError("record has empty text", line=line_no)
            ratings = [float(r) for r in rec["ratings"]]
            if n_aspects is None:
                n_aspects = len(ratings)
            elif len(ratings) != n_aspects:
                raise SchemaError(
                    f"line {line_no}: record has {len(ratings)} ratings, expected {n_aspects}")
            spans = sentence_spans(tokens)
            aspects = rec.get("sentence_aspects")
            if aspects is not None and len(aspects) != len(spans):
                raise SchemaError(
                    f"line {line_no}: {len(aspects)} sentence_aspects for {len(spans)} sentences")
            documents.append(Document(
                id=str(rec["id"]),
                tokens=tokens,
                labels=[binarize(r) for r in ratings],
                raw_ratings=ratings,
                sentence_spans=spans,
                sentence_aspects=aspects,
            ))
    if not documents:
        raise ParseError("corpus file contains no records", line=0)
    names = aspect_names or [f"aspect_{i}" for i in range(n_aspects)]
    if len(names) != n_aspects:
        raise SchemaError(f"{len(names)} aspect names for {n_aspects} ratings")
    return Corpus(documents, list(names), assign_splits(len(documents), seed))


def write_corpus(corpus, path):
    """Write documents back as JSON lines (splits are reassigned on load)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            rec = {
                "id": doc.id,
                "text": " ".join(doc.tokens),
                "ratings": doc.raw_ratings if doc.raw_ratings is not None
                else [5 if y else 1 for y in doc.labels],
            }
            if doc.sentence_aspects is not None:
                rec["sentence_aspects"] = doc.sentence_aspects
            fh.write(json.dumps(rec) + "\n")


def write_annotations(corpus, path):
    """Export per-sentence aspect annotations as JSON-lines triples."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            if doc.sentence_aspects is None:
                continue
            for s_idx, aspect in enumerate(doc.sentence_aspects):
                if aspect is None:
                    continue
                fh.write(json.dumps({
                    "id": doc.id, "sentence_index": s_idx, "aspect_index": aspect,
                }) + "\n")


def load_annotations(path):
    """Read annotation triples -> {doc_id: {sentence_index: aspect_index}}."""
    result = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                result.setdefault(str(rec["id"]), {})[int(rec["sentence_index"])] = \
                    int(rec["aspect_index"])
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ParseError(f"bad annotation record: {e}", line=line_no) from e
    return result


class Vocabulary:
    """Word <-> index map with PAD=0 and UNK=1."""

    def __init__(self, words):
        self.index_to_word = [PAD, UNK] + list(words)
        self.word_to_index = {w: i for i, w in enumerate(self.index_to_word)}
        if len(self.word_to_index) != len(self.index_to_word):
            raise SchemaError("duplicate words in vocabulary")

    def __len__(self):
        return len(self.index_to_word)

    def __contains__(self, word):
        return word in self.word_to_index

    def encode(self, tokens):
        unk = self.word_to_index[UNK]
        return np.array([self.word_to_index.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids):
        return [self.index_to_word[i] for i in ids]


def build_vocab(corpus, min_count=2):
    """Vocabulary over the train split: frequency >= min_count, ordered by
    frequency descending then lexicographic."""
    counts = {}
    for doc in corpus.split("train"):
        for tok in doc.tokens:
            counts[tok] = counts.get(tok, 0) + 1
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


class EmbeddingTable:
    """|V| x d float64 embedding matrix; PAD row is all zeros."""

    def __init__(self, matrix, trainable=True):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.trainable = trainable
        if not np.all(np.isfinite(self.matrix)):
            raise FormatError("embedding table contains non-finite entries")

    @property
    def dim(self):
        return self.matrix.shape[1]

    @classmethod
    def random(cls, vocab, dim, seed=0, trainable=True):
        rng = Rng(seed)
        matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
        matrix[0] = 0.0
        return cls(matrix, trainable=trainable)


def load_embeddings(path, vocab, seed=0, trainable=False):
    """Read "word v1 .. vd" lines; OOV rows drawn Uniform(-0.1, 0.1) from `seed`.

    An optional "count dim" header line is skipped.  PAD row stays zero.
    """
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if line_no == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header
                except ValueError:
                    pass
            word, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
                if dim == 0:
                    raise FormatError(f"line {line_no}: embedding row has no values")
            elif len(vals) != dim:
                raise FormatError(
                    f"line {line_no}: dimension {len(vals)} differs from {dim}")
            if word in vocab:
                vectors[word] = np.array([float(v) for v in vals])
    if dim is None:
        raise FormatError("embedding file contains no vectors")
    rng = Rng(seed)
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    matrix[0] = 0.0
    for word, vec in vectors.items():
        matrix[vocab.word_to_index[word]] = vec
    return EmbeddingTable(matrix, trainable=trainable)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

_STOPWORDS = ["the", "a", "an", "it", "is", "was", "and", "of", "to", "with",
              "very", "this", "that", "had", "but", "for", "on", "as", "so"]


def _coin_words(rng, count, length, taken):
    """Pronounceable unique fake words (consonant-vowel syllables)."""
    words = []
    while len(words) < count:
        w = "".join(
            _CONSONANTS[rng.integers(0, len(_CONSONANTS))] +
            _VOWELS[rng.integers(0, len(_VOWELS))]
            for _ in range(length))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


@dataclass
class SynthSpec:
    """Recipe for a synthetic multi-aspect review corpus with known rationales."""

    n_aspects: int
    content_words: list          # per aspect: disjoint content-word lists
    positive_words: list         # per aspect sentiment lexicons
    negative_words: list
    stopwords: list
    label_correlation: float = 0.0
    n_documents: int = 1000
    content_words_per_sentence: tuple = (4, 8)   # inclusive uniform range
    stopword_rate: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_correlation <= 1.0:
            raise ParameterError(
                f"label_correlation must be in [0, 1], got {self.label_correlation}")
        seen = set()
        for words in self.content_words:
            overlap = seen & set(words)
            if overlap:
                raise ParameterError(f"aspect content vocabularies overlap: {sorted(overlap)[:3]}")
            seen |= set(words)

    @classmethod
    def default(cls, n_aspects=4, n_documents=1000, label_correlation=0.7, seed=0,
                content_vocab_size=30, sentiment_vocab_size=6):
        rng = Rng(seed)
        taken = set(_STOPWORDS)
        content = [_coin_words(rng, content_vocab_size, 3, taken) for _ in range(n_aspects)]
        pos = [_coin_words(rng, sentiment_vocab_size, 4, taken) for _ in range(n_aspects)]
        neg = [_coin_words(rng, sentiment_vocab_size, 4, taken) for _ in range(n_aspects)]
        return cls(n_aspects=n_aspects, content_words=content, positive_words=pos,
                   negative_words=neg, stopwords=list(_STOPWORDS),
                   label_correlation=label_correlation, n_documents=n_documents,
                   seed=seed)

    def aspect_vocabulary(self, aspect):
        """All words whose gold aspect is `aspect` (content + both sentiment sets)."""
        return set(self.content_words[aspect]) | set(self.positive_words[aspect]) \
            | set(self.negative_words[aspect])


def _draw_labels(spec, rng):
    """Pairwise-correlated binary labels via a shared latent coin.

    Each aspect copies the latent with probability sqrt(rho), else draws
    independently; two aspects then correlate exactly when both copied, so
    the pairwise Pearson correlation equals rho.
    """
    copy_prob = np.sqrt(spec.label_correlation)
    shared = int(rng.uniform() < 0.5)
    labels = []
    for _ in range(spec.n_aspects):
        if rng.uniform() < copy_prob:
            labels.append(shared)
        else:
            labels.append(int(rng.uniform() < 0.5))
    return labels


def generate_synthetic(spec):
    """Generate a corpus of per-aspect sentences with gold word-level rationales.

    Each document holds one sentence per aspect (in shuffled order); every
    sentence draws content words from that aspect's vocabulary plus exactly
    one sentiment word agreeing with the document's label for the aspect.
    Stopwords and the closing period carry gold aspect 0 (irrelevant).
    """
    rng = Rng(spec.seed)
    lo, hi = spec.content_words_per_sentence
    documents = []
    for doc_idx in range(spec.n_documents):
        labels = _draw_labels(spec, rng)
        order = [int(a) for a in rng.permutation(spec.n_aspects)]
        tokens, gold, spans, span_aspects = [], [], [], []
        ratings = [0.0] * spec.n_aspects
        for aspect in order:
            start = len(tokens)
            n_content = int(rng.integers(lo, hi + 1))
            lexicon = spec.positive_words[aspect] if labels[aspect] \
                else spec.negative_words[aspect]
            words = [(str(rng.choice(spec.content_words[aspect])), aspect + 1)
                     for _ in range(n_content)]
            words.insert(int(rng.integers(0, n_content + 1)),
                         (str(rng.choice(lexicon)), aspect + 1))
            body = []
            for w, g in words:
                if rng.uniform() < spec.stopword_rate:
                    body.append((str(rng.choice(spec.stopwords)), 0))
                body.append((w, g))
            body.append((".", 0))
            for w, g in body:
                tokens.append(w)
                gold.append(g)
            spans.append((start, len(tokens)))
            span_aspects.append(aspect)
            ratings[aspect] = float(rng.choice([3, 4, 5] if labels[aspect] else [1, 2]))
        documents.append(Document(
            id=f"synth-{doc_idx:06d}",
            tokens=tokens,
            labels=labels,
            raw_ratings=ratings,
            sentence_spans=spans,
            sentence_aspects=span_aspects,
            gold_word_aspects=gold,
        ))
    names = [f"aspect_{i}" for i in range(spec.n_aspects)]
    return Corpus(documents, names, assign_splits(spec.n_documents, spec.seed))


def gold_scores(corpus):
    """Ground-truth word-aspect scores {doc_id: (L, T) 0/1 matrix} from gold labels."""
    out = {}
    for doc in corpus.documents:
        if doc.gold_word_aspects is None:
            continue
        m = np.zeros((len(doc.tokens), corpus.n_aspects))
        for pos, g in enumerate(doc.gold_word_aspects):
            if g > 0:
                m[pos, g - 1] = 1.0
        out[doc.id] = m
    return out


def label_matrix(docs):
    return np.array([d.labels for d in docs], dtype=np.float64)


def mean_pairwise_correlation(labels):
    """Mean absolute Pearson correlation over aspect pairs of a (n, T) label matrix."""
    labels = np.asarray(labels, dtype=np.float64)
    T = labels.shape[1]
    cors = []
    for i in range(T):
        for j in range(i + 1, T):
            a, b = labels[:, i], labels[:, j]
            sa, sb = a.std(), b.std()
            if sa == 0 or sb == 0:
                continue
            cors.append(abs(float(np.corrcoef(a, b)[0, 1])))
    return float(np.mean(cors)) if cors else 0.0


def pad_batch(docs, vocab, max_len=256):
    """Documents -> (ids, valid, labels) rectangular arrays.

    ids is PAD-filled (B, L) int64; valid marks real tokens; documents longer
    than max_len are truncated.
    """
    if not docs:
        raise ParameterError("pad_batch needs a nonempty batch")
    lengths = [min(len(d.tokens), max_len) for d in docs]
    width = max(lengths)
    ids = np.zeros((len(docs), width), dtype=np.int64)
    valid = np.zeros((len(docs), width), dtype=np.float64)
    for r, (doc, n) in enumerate(zip(docs, lengths)):
        ids[r, :n] = vocab.encode(doc.tokens[:n])
        valid[r, :n] = 1.0
    labels = np.array([d.labels for d in docs], dtype=np.int64)
    return ids, valid, labels
