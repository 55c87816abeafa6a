"""Command-line entry points.

Verbs: ``synth``, ``train``, ``search``, ``eval``, ``explain``, ``report``.
Every command reads a declarative JSON config (``--config``); ``--seed``
and ``--out`` override the config's ``seed`` and ``out_dir``.  The resolved
config is archived beside each command's outputs.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import evaluation as ev
from . import rationale as rat
from . import report as rep
from .data import (SynthSpec, generate_synthetic, gold_scores, load_annotations,
                   load_corpus, tokenize, write_annotations, write_corpus)
from .errors import (ConfigError, ContractError, FormatError, MtmError,
                     NumericError, ParameterError, ParseError, SchemaError)
from .fileio import (atomic_write_json, atomic_write_jsonl, atomic_write_text,
                     read_scores, write_scores)
from .training import MODEL_KINDS, SearchSpace, TrainConfig, random_search, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_USAGE, message)


class SystemExit_(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e


def _resolve(args):
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out_dir"] = args.out
    config.setdefault("seed", 0)
    if not config.get("out_dir"):
        raise ConfigError("an output directory is required (config.out_dir or --out)",
                          field="out_dir")
    os.makedirs(config["out_dir"], exist_ok=True)
    return config


def _archive(config):
    atomic_write_json(os.path.join(config["out_dir"], "config.json"), config)


def _load_corpus_block(config):
    block = config.get("corpus") or {}
    path = block.get("path")
    if not path:
        raise ConfigError("a corpus path is required", field="corpus.path")
    corpus = load_corpus(path, aspect_names=block.get("aspect_names"),
                         seed=config["seed"])
    return corpus, block


def _annotations_for(corpus, block):
    """Annotations from an explicit file, else from inline sentence aspects."""
    if block.get("annotations"):
        return load_annotations(block["annotations"])
    ann = {}
    for doc in corpus.documents:
        if doc.sentence_aspects is None:
            continue
        ann[doc.id] = {i: a for i, a in enumerate(doc.sentence_aspects)
                       if a is not None}
    return ann


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(config):
    block = dict(config.get("synth") or {})
    block.setdefault("seed", config["seed"])
    try:
        spec_kwargs = {k: block[k] for k in
                       ("n_aspects", "n_documents", "label_correlation", "seed",
                        "content_vocab_size", "sentiment_vocab_size") if k in block}
        spec = SynthSpec.default(**spec_kwargs)
    except TypeError as e:
        raise ConfigError(str(e), field="synth") from e
    corpus = generate_synthetic(spec)
    out = config["out_dir"]
    write_corpus(corpus, os.path.join(out, "corpus.jsonl"))
    write_annotations(corpus, os.path.join(out, "annotations.jsonl"))
    write_scores(gold_scores(corpus), os.path.join(out, "gold_scores.csv"))
    _archive(config)
    print(f"wrote {len(corpus.documents)} documents to {out}")
    return EXIT_OK


def _train_config(config):
    block = dict(config.get("train") or {})
    model_block = dict(config.get("model") or {})
    kind = model_block.pop("kind", "mtm")
    model_block.pop("masker_checkpoint", None)
    try:
        return TrainConfig(model_kind=kind, seed=config["seed"],
                           model=model_block, **block)
    except TypeError as e:
        raise ConfigError(str(e), field="train") from e


def cmd_train(config):
    corpus, _ = _load_corpus_block(config)
    train_cfg = _train_config(config)
    masker = None
    if train_cfg.model_kind == "mtm-c":
        source = (config.get("model") or {}).get("masker_checkpoint")
        if not source:
            raise ConfigError("mtm-c needs model.masker_checkpoint",
                              field="model.masker_checkpoint")
        masker, masker_kind = ckpt.load_estimator(source)
        if masker_kind != "mtm":
            raise ConfigError(f"masker checkpoint has kind {masker_kind!r}",
                              field="model.masker_checkpoint")
    estimator, log = train(corpus, train_cfg, masker=masker)
    out = config["out_dir"]
    ckpt.save_estimator(estimator, train_cfg.model_kind,
                        os.path.join(out, "checkpoint.json"))
    log.save(os.path.join(out, "trainlog.jsonl"))
    _archive(config)
    print(f"trained {train_cfg.model_kind}: best epoch {estimator.best_epoch_}, "
          f"validation macro-F1 {estimator.best_val_f1_:.2f}")
    return EXIT_OK


def cmd_search(config):
    corpus, _ = _load_corpus_block(config)
    train_cfg = _train_config(config)
    block = dict(config.get("search") or {})
    trials = block.pop("trials", None)
    try:
        space = SearchSpace(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in block.items()})
    except TypeError as e:
        raise ConfigError(str(e), field="search") from e
    results = random_search(space, corpus, train_cfg, trials=trials)
    records = [{"rank": r_i, "trial": r.trial, "settings": r.settings,
                "val_macro_f1": r.val_macro_f1, "error": r.error}
               for r_i, r in enumerate(results)]
    atomic_write_jsonl(os.path.join(config["out_dir"], "search_results.jsonl"),
                       records)
    _archive(config)
    best = results[0]
    print(f"{len(results)} trials; best macro-F1 "
          f"{best.val_macro_f1 if best.val_macro_f1 is not None else 'n/a'}")
    return EXIT_OK


def _doc_subset(corpus, split):
    docs = corpus.split(split) if split else corpus.documents
    if not docs:
        raise SchemaError(f"corpus has no documents in split {split!r}")
    return docs


def cmd_eval(config):
    corpus, corpus_block = _load_corpus_block(config)
    block = dict(config.get("eval") or {})
    split = block.get("split", "test")
    budget = float(block.get("budget_fraction", 0.15))
    docs = _doc_subset(corpus, split)
    annotations = _annotations_for(corpus, corpus_block)
    out = config["out_dir"]
    report = {"split": split, "n_documents": len(docs)}

    estimator = None
    if block.get("checkpoint"):
        estimator, kind = ckpt.load_estimator(block["checkpoint"])
        if estimator.n_aspects_ != corpus.n_aspects:
            raise SchemaError(
                f"checkpoint has {estimator.n_aspects_} aspects, "
                f"corpus has {corpus.n_aspects}")
        report["model_kind"] = kind
        report["parameter_count"] = ev.count_params(estimator.model_)
        predictions = estimator.predict(docs)
        labels = np.array([d.labels for d in docs])
        macro, per_aspect = ev.macro_f1(
            predictions, labels,
            positive_class_only=bool(block.get("positive_class_only", False)))
        report["macro_f1"] = macro
        report["per_aspect_f1"] = per_aspect
        if hasattr(estimator, "word_scores"):
            scores = estimator.word_scores(docs)
            write_scores(scores, os.path.join(out, "scores.csv"))
        else:
            scores = None
    elif block.get("scores"):
        scores = read_scores(block["scores"])
    else:
        raise ConfigError("eval needs a checkpoint or a scores file", field="eval")

    if scores is not None:
        scored_docs = [d for d in docs if d.id in scores]
        precision = ev.rationale_precision(scores, scored_docs, annotations, budget)
        report["rationale_precision"] = {
            "budget_fraction": budget,
            "per_aspect": precision.per_aspect,
            "highlighted": precision.highlighted,
            "n_documents": precision.n_documents,
            "n_skipped": precision.n_skipped,
        }
        curve = ev.percentile_curves(scores, scored_docs, annotations)
        report["percentile_curves"] = {
            "thresholds": curve.thresholds.tolist(),
            "precision": curve.precision.tolist(),
            "recall": curve.recall.tolist(),
            "f1": curve.f1.tolist(),
            "fraction": curve.fraction.tolist(),
            "degenerate_aspects": curve.degenerate,
        }
        dist = ev.aspect_word_distribution(scores, scored_docs)
        coherence = ev.coherence_report(dist, scored_docs)
        report["npmi"] = {
            "per_n_mean": {str(n): v for n, v in coherence.per_n_mean.items()},
            "mean": coherence.mean,
            "per_aspect": {str(a): {str(n): v for n, v in d.items()}
                           for a, d in coherence.per_aspect.items()},
        }
        report["top_words"] = {
            corpus.aspect_names[a]: dist.top_words(a, 10)
            for a in range(corpus.n_aspects)}

    atomic_write_json(os.path.join(out, "report.json"), report)
    flat = []
    if "macro_f1" in report:
        flat.append(("macro_f1", report["macro_f1"]))
        for i, v in enumerate(report["per_aspect_f1"]):
            flat.append((f"f1_aspect_{i}", v))
    if "parameter_count" in report:
        flat.append(("parameter_count", report["parameter_count"]))
    if "rationale_precision" in report:
        for i, v in enumerate(report["rationale_precision"]["per_aspect"]):
            flat.append((f"precision_aspect_{i}", v))
    if "npmi" in report:
        flat.append(("npmi_mean", report["npmi"]["mean"]))
    atomic_write_text(os.path.join(out, "metrics.tsv"),
                      "".join(f"{k}\t{v}\n" for k, v in flat))
    if "top_words" in report:
        lines = [f"{name}: {' '.join(words)}"
                 for name, words in report["top_words"].items()]
        atomic_write_text(os.path.join(out, "top_words.txt"), "\n".join(lines) + "\n")
    _archive(config)
    print(f"evaluation written to {out}")
    return EXIT_OK


def cmd_explain(config, text):
    block = dict(config.get("explain") or {})
    source = block.get("checkpoint")
    if not source:
        raise ConfigError("explain needs explain.checkpoint", field="explain.checkpoint")
    if text is None:
        text = block.get("text")
    if text is not None and os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    if not text or not text.strip():
        raise SystemExit_(EXIT_USAGE, "explain needs non-empty input text")
    estimator, kind = ckpt.load_estimator(source)
    if not hasattr(estimator, "transform"):
        raise ConfigError(f"model kind {kind!r} has no rationale surface",
                          field="explain.checkpoint")
    tokens = tokenize(text)
    if not tokens:
        raise SystemExit_(EXIT_USAGE, "input text has no tokens")
    mask = estimator.transform([tokens])[0]
    rationale = rat.extract(mask)
    record = rationale.to_record("explain-0", tokens)
    out = config["out_dir"]
    atomic_write_json(os.path.join(out, "explanation.json"), record)
    if block.get("html", True):
        colors = rep.palette(estimator.n_aspects_)
        fragment = rep.render_tokens(tokens, mask, colors)
        atomic_write_text(os.path.join(out, "explanation.html"), fragment + "\n")
    _archive(config)
    print(json.dumps(record))
    return EXIT_OK


def cmd_report(config):
    corpus, corpus_block = _load_corpus_block(config)
    block = dict(config.get("report") or {})
    split = block.get("split", "test")
    cap = int(block.get("max_documents", 20))
    docs = _doc_subset(corpus, split)[:cap]
    if block.get("checkpoint"):
        estimator, kind = ckpt.load_estimator(block["checkpoint"])
        if not hasattr(estimator, "transform"):
            raise ConfigError(f"model kind {kind!r} produces no masks",
                              field="report.checkpoint")
        masks = {d.id: m for d, m in zip(docs, estimator.transform(docs))}
    elif block.get("scores"):
        raw = read_scores(block["scores"])
        masks = {}
        for d in docs:
            if d.id not in raw:
                continue
            t_scores = raw[d.id]
            rest = np.clip(1.0 - t_scores.sum(axis=1, keepdims=True), 0.0, 1.0)
            masks[d.id] = np.concatenate([rest, t_scores], axis=1)
    else:
        raise ConfigError("report needs a checkpoint or a scores file", field="report")
    metrics = None
    if block.get("metrics"):
        metrics = {}
        with open(block["metrics"], encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    k, v = line.rstrip("\n").split("\t", 1)
                    try:
                        metrics[k] = float(v)
                    except ValueError:
                        metrics[k] = v
    path = os.path.join(config["out_dir"], "report.html")
    rep.write_report(path, docs, masks, corpus.aspect_names, metrics)
    _archive(config)
    print(f"report written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="mtmasker",
                     description="Multi-target rationale masking toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("synth", "generate a synthetic corpus with gold rationales"),
            ("train", f"train a model (kinds: {', '.join(MODEL_KINDS)})"),
            ("search", "random hyperparameter search"),
            ("eval", "evaluate a checkpoint or a score export"),
            ("explain", "extract rationales for free text"),
            ("report", "render the HTML heat-map report")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override config out_dir")
        if name == "explain":
            p.add_argument("--text", default=None,
                           help="text to explain (or a file path)")
    return parser


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "search": cmd_search,
             "eval": cmd_eval, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _resolve(args)
        if args.command == "explain":
            return cmd_explain(config, args.text)
        return _COMMANDS[args.command](config)
    except SystemExit_ as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, ParameterError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, SchemaError, FormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except MtmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
