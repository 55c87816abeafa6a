"""Atomic file writes and the score-export interchange format.

All writes go through a temp file + rename so interrupted runs never leave
truncated artifacts.  Score files are CSV with a fixed header:
``doc_id,position,aspect_index,score``.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .errors import ParseError

SCORE_HEADER = ["doc_id", "position", "aspect_index", "score"]


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj, indent=2):
    atomic_write_text(path, json.dumps(obj, indent=indent, sort_keys=True) + "\n")


def atomic_write_jsonl(path, records):
    atomic_write_text(path, "".join(json.dumps(r) + "\n" for r in records))


def read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON record: {e.msg}", line=line_no) from e
    return records


def write_scores(scores, path):
    """Write {doc_id: (L, T) array} in the score-export CSV format."""
    rows = []
    for doc_id in sorted(scores):
        mat = scores[doc_id]
        for pos in range(mat.shape[0]):
            for aspect in range(mat.shape[1]):
                rows.append(f"{doc_id},{pos},{aspect},{float(mat[pos, aspect])!r}")
    atomic_write_text(path, ",".join(SCORE_HEADER) + "\n" + "\n".join(rows) + "\n")


def read_scores(path):
    """Read the score-export CSV back into {doc_id: (L, T) array}."""
    cells = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty score file", line=0) from None
        if header != SCORE_HEADER:
            raise ParseError(f"expected header {SCORE_HEADER}, got {header}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                doc_id, pos, aspect, score = row[0], int(row[1]), int(row[2]), float(row[3])
            except (IndexError, ValueError) as e:
                raise ParseError(f"bad score row: {e}", line=line_no) from e
            cells.setdefault(doc_id, {})[(pos, aspect)] = score
    out = {}
    for doc_id, entries in cells.items():
        length = max(p for p, _ in entries) + 1
        width = max(a for _, a in entries) + 1
        mat = np.zeros((length, width))
        for (pos, aspect), score in entries.items():
            mat[pos, aspect] = score
        out[doc_id] = mat
    return out
