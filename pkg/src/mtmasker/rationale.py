"""Rationale extraction: per-word winning targets and maximal same-target spans."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import MultiMask


@dataclass
class Span:
    target: int        # 1..T
    start: int
    end: int           # exclusive
    confidence: float  # mean winning probability over the span


@dataclass
class Rationale:
    word_targets: list          # per word: 0 (unassigned) or winning target 1..T
    word_confidences: list      # per word: winning probability
    spans: list = field(default_factory=list)

    def spans_for(self, target):
        return [s for s in self.spans if s.target == target]

    def to_record(self, doc_id, tokens=None):
        rec = {
            "id": doc_id,
            "word_targets": [int(t) for t in self.word_targets],
            "word_confidences": [float(c) for c in self.word_confidences],
            "spans": [{"aspect_index": s.target - 1, "start": s.start, "end": s.end,
                       "confidence": s.confidence} for s in self.spans],
        }
        if tokens is not None:
            rec["tokens"] = list(tokens)
        return rec


def extract(mask):
    """Assign each word its most likely target and merge runs into spans.

    Ties break toward the lowest index, so a fully uniform row falls to the
    irrelevant dimension and is left unassigned.
    """
    probs = mask.probs if isinstance(mask, MultiMask) else np.asarray(mask)
    winners = np.argmax(probs, axis=1)
    confidences = probs[np.arange(len(winners)), winners]
    spans = []
    pos = 0
    while pos < len(winners):
        end = pos + 1
        while end < len(winners) and winners[end] == winners[pos]:
            end += 1
        if winners[pos] != 0:
            spans.append(Span(int(winners[pos]), pos, end,
                              float(confidences[pos:end].mean())))
        pos = end
    return Rationale([int(w) for w in winners], [float(c) for c in confidences], spans)


def extract_thresholded(mask, target, percentile, thresholds):
    """Words whose probability for `target` reaches its percentile threshold.

    `thresholds` is the (T, 100) table from the percentile-curve evaluation;
    selection is independent of which target wins the argmax.
    """
    if thresholds is None:
        raise ContractError("percentile threshold table is required")
    probs = mask.probs if isinstance(mask, MultiMask) else np.asarray(mask)
    if not 1 <= target <= probs.shape[1] - 1:
        raise ContractError(f"target {target} outside 1..{probs.shape[1] - 1}")
    if not 0 <= percentile < 100:
        raise ContractError(f"percentile {percentile} outside 0..99")
    cut = thresholds[target - 1, percentile]
    return {int(i) for i in np.nonzero(probs[:, target] >= cut)[0]}


def write_rationales(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
