"""Versioned checkpoint container: named parameter tensors + configuration.

Checkpoints are JSON with base64-encoded little-endian float64 buffers, so
the byte output is deterministic for identical parameters.  The embedding
matrix is always stored, trainable or not.  A contextualized checkpoint
nests its source masker checkpoint so it stays self-contained.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .data import Vocabulary
from .errors import ConfigError, FormatError
from .fileio import atomic_write_text

FORMAT_VERSION = 1

_KINDS = {}


def register_kind(kind, cls, fixed=None):
    _KINDS[kind] = (cls, fixed or {})


def estimator_class(kind):
    if kind not in _KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; valid kinds: "
                          f"{sorted(_KINDS)}", field="model.kind")
    return _KINDS[kind]


def _encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_array(entry):
    arr = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
    return arr.reshape(entry["shape"]).copy()


def _serializable_params(estimator):
    params = estimator.get_params()
    clean = {}
    for key, value in params.items():
        if key in ("embeddings", "masker"):
            continue  # reconstructed from stored arrays / nested checkpoint
        if isinstance(value, tuple):
            value = list(value)
        clean[key] = value
    return clean


def checkpoint_dict(estimator, kind):
    """Snapshot a fitted estimator into a JSON-serializable dict."""
    payload = {
        "format_version": FORMAT_VERSION,
        "model_kind": kind,
        "estimator_params": _serializable_params(estimator),
        "n_aspects": estimator.n_aspects_,
        "embed_dim": estimator.embed_dim_,
        "trainable_embeddings": estimator.trainable_embeddings,
        "vocab": estimator.vocab_.index_to_word[2:],
        "params": {"embedding": _encode_array(estimator.model_.embedding.data)},
    }
    for name, tensor in estimator.model_.reg.named():
        payload["params"][name] = _encode_array(tensor.data)
    if kind == "mtm-c":
        payload["masker"] = checkpoint_dict(estimator.masker, "mtm")
    return payload


def save_estimator(estimator, kind, path):
    atomic_write_text(path, json.dumps(checkpoint_dict(estimator, kind),
                                       sort_keys=True) + "\n")


def estimator_from_dict(payload):
    if payload.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported checkpoint format version {payload.get('format_version')}")
    kind = payload["model_kind"]
    cls, fixed = estimator_class(kind)
    params = dict(payload["estimator_params"])
    if "filter_widths" in params:
        params["filter_widths"] = tuple(params["filter_widths"])
    est = cls(**{**params, **fixed})
    if kind == "mtm-c":
        est.masker = estimator_from_dict(payload["masker"])
    est.n_aspects_ = payload["n_aspects"]
    est.embed_dim_ = payload["embed_dim"]
    est.vocab_ = Vocabulary(payload["vocab"])
    matrix = _decode_array(payload["params"]["embedding"])
    est.model_ = est._build_model(est.n_aspects_, matrix)
    est.model_.embedding.data[...] = matrix
    for name, tensor in est.model_.reg.named():
        if name not in payload["params"]:
            raise FormatError(f"checkpoint is missing parameter {name!r}")
        saved = _decode_array(payload["params"][name])
        if saved.shape != tensor.data.shape:
            raise FormatError(
                f"checkpoint parameter {name!r} has shape {saved.shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data[...] = saved
    return est


def load_estimator(path):
    """Rebuild a fitted estimator from a checkpoint file -> (estimator, kind)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return estimator_from_dict(payload), payload["model_kind"]
