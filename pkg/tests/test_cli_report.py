"""End-to-end command-line workflows and the HTML report."""

import json
import os
import re

import numpy as np
import pytest

from mtmasker import report as rep
from mtmasker.cli import main
from mtmasker.data import load_corpus
from mtmasker.fileio import read_scores, write_scores
from mtmasker.model import MultiMask


def run_cli(*argv):
    return main(list(argv))


def write_config(path, config):
    path.write_text(json.dumps(config))
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 3,
        "out_dir": str(out),
        "synth": {"n_aspects": 2, "n_documents": 60, "label_correlation": 0.5},
    }))
    assert run_cli("synth", "--config", str(cfg)) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 1,
        "out_dir": str(out),
        "corpus": {"path": str(synth_dir / "corpus.jsonl")},
        "model": {"kind": "mtm", "embed_dim": 16, "hidden_size": 8,
                  "feature_maps": 8, "classifier_hidden": 8, "min_count": 1},
        "train": {"batch_size": 32, "max_epochs": 2, "patience": 2},
    }))
    assert run_cli("train", "--config", str(cfg)) == 0
    return out


class TestSynth:
    def test_writes_three_files_exact_count(self, synth_dir):
        corpus = load_corpus(synth_dir / "corpus.jsonl", seed=3)
        assert len(corpus.documents) == 60
        assert (synth_dir / "annotations.jsonl").exists()
        assert (synth_dir / "gold_scores.csv").exists()
        assert (synth_dir / "config.json").exists()

    def test_deterministic_outputs(self, synth_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "seed": 3,
            "out_dir": str(tmp_path),
            "synth": {"n_aspects": 2, "n_documents": 60,
                      "label_correlation": 0.5},
        }))
        assert run_cli("synth", "--config", str(cfg)) == 0
        for name in ("corpus.jsonl", "annotations.jsonl", "gold_scores.csv"):
            assert (tmp_path / name).read_bytes() == \
                (synth_dir / name).read_bytes()

    def test_annotations_round_trip(self, synth_dir):
        corpus = load_corpus(synth_dir / "corpus.jsonl", seed=3)
        from mtmasker.data import load_annotations
        ann = load_annotations(synth_dir / "annotations.jsonl")
        doc = corpus.documents[0]
        assert set(ann[doc.id]) == set(range(len(doc.sentence_spans)))

    def test_gold_scores_parse_back(self, synth_dir):
        scores = read_scores(synth_dir / "gold_scores.csv")
        corpus = load_corpus(synth_dir / "corpus.jsonl", seed=3)
        doc = corpus.documents[0]
        assert scores[doc.id].shape == (len(doc.tokens), 2)

    def test_invalid_spec_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "synth": {"n_aspects": 2, "label_correlation": 4.0}})
        assert run_cli("synth", "--config", cfg) == 1


class TestTrain:
    def test_checkpoint_and_log_written(self, trained_dir):
        assert (trained_dir / "checkpoint.json").exists()
        assert (trained_dir / "trainlog.jsonl").exists()
        assert (trained_dir / "config.json").exists()

    def test_unknown_kind_lists_valid(self, synth_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "model": {"kind": "gpt"},
            "train": {"max_epochs": 1}})
        assert run_cli("train", "--config", cfg) == 1

    def test_mtm_c_without_source_is_config_error(self, synth_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "model": {"kind": "mtm-c", "embed_dim": 16, "min_count": 1},
            "train": {"max_epochs": 1}})
        assert run_cli("train", "--config", cfg) == 1

    def test_base_then_mtm_c_chain(self, synth_dir, trained_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "seed": 2,
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "model": {"kind": "mtm-c", "embed_dim": 16, "hidden_size": 8,
                      "feature_maps": 8, "classifier_hidden": 8, "min_count": 1,
                      "masker_checkpoint": str(trained_dir / "checkpoint.json")},
            "train": {"batch_size": 32, "max_epochs": 1}})
        assert run_cli("train", "--config", cfg) == 0
        assert (tmp_path / "checkpoint.json").exists()

    def test_missing_corpus_is_data_error(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "corpus": {"path": str(tmp_path / "nope.jsonl")},
            "train": {"max_epochs": 1}})
        assert run_cli("train", "--config", cfg) == 2


class TestEval:
    def test_eval_of_checkpoint(self, synth_dir, trained_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "seed": 3,
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "eval": {"checkpoint": str(trained_dir / "checkpoint.json"),
                     "split": "test", "budget_fraction": 0.2}})
        assert run_cli("eval", "--config", cfg) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert "macro_f1" in report and "parameter_count" in report
        assert set(report["npmi"]["per_n_mean"]) == \
            {"5", "10", "15", "20", "25", "30"}
        assert (tmp_path / "metrics.tsv").exists()
        assert (tmp_path / "top_words.txt").exists()
        assert (tmp_path / "scores.csv").exists()

    def test_eval_gold_scores_perfect_precision(self, synth_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "seed": 3,
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "eval": {"scores": str(synth_dir / "gold_scores.csv"),
                     "split": "test", "budget_fraction": 0.1}})
        assert run_cli("eval", "--config", cfg) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert all(p == 1.0 for p in report["rationale_precision"]["per_aspect"])

    def test_eval_deterministic(self, synth_dir, trained_dir, tmp_path):
        outputs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            cfg = write_config(tmp_path / f"{sub}.json", {
                "seed": 3,
                "out_dir": str(out),
                "corpus": {"path": str(synth_dir / "corpus.jsonl")},
                "eval": {"checkpoint": str(trained_dir / "checkpoint.json"),
                         "split": "valid"}})
            assert run_cli("eval", "--config", cfg) == 0
            outputs.append((out / "report.json").read_bytes())
        assert outputs[0] == outputs[1]

    def test_aspect_mismatch_is_data_error(self, trained_dir, tmp_path):
        other = tmp_path / "other"
        cfg = write_config(tmp_path / "s.json", {
            "seed": 0, "out_dir": str(other),
            "synth": {"n_aspects": 3, "n_documents": 30}})
        assert run_cli("synth", "--config", cfg) == 0
        cfg2 = write_config(tmp_path / "e.json", {
            "out_dir": str(tmp_path),
            "corpus": {"path": str(other / "corpus.jsonl")},
            "eval": {"checkpoint": str(trained_dir / "checkpoint.json")}})
        assert run_cli("eval", "--config", cfg2) == 2


class TestExplain:
    def test_rationale_record(self, trained_dir, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "explain": {"checkpoint": str(trained_dir / "checkpoint.json")}})
        code = run_cli("explain", "--config", cfg, "--text",
                       "the beer was nice. room was dirty.")
        assert code == 0
        record = json.loads((tmp_path / "explanation.json").read_text())
        n_tokens = len(record["tokens"])
        assert len(record["word_targets"]) == n_tokens
        covered = set()
        for span in record["spans"]:
            covered.update(range(span["start"], span["end"]))
        unassigned = {i for i, t in enumerate(record["word_targets"]) if t == 0}
        assert covered | unassigned == set(range(n_tokens))

    def test_empty_text_is_usage_error(self, trained_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "explain": {"checkpoint": str(trained_dir / "checkpoint.json")}})
        assert run_cli("explain", "--config", cfg, "--text", "   ") == 1

    def test_html_fragment_escapes_user_text(self, trained_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "out_dir": str(tmp_path),
            "explain": {"checkpoint": str(trained_dir / "checkpoint.json")}})
        code = run_cli("explain", "--config", cfg, "--text",
                       "<script>alert('x')</script> nice beer")
        assert code == 0
        # the tokenizer splits the tag, but no raw markup may survive
        fragment = (tmp_path / "explanation.html").read_text()
        assert "<script" not in fragment
        assert "&lt;" in fragment and "&gt;" in fragment


class TestReportCommand:
    def test_report_from_checkpoint(self, synth_dir, trained_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "seed": 3,
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "report": {"checkpoint": str(trained_dir / "checkpoint.json"),
                       "split": "test", "max_documents": 5}})
        assert run_cli("report", "--config", cfg) == 0
        html_text = (tmp_path / "report.html").read_text()
        assert "aspect changes" in html_text.lower()
        assert "rgba(" in html_text

    def test_report_is_self_contained(self, synth_dir, trained_dir, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "seed": 3,
            "out_dir": str(tmp_path),
            "corpus": {"path": str(synth_dir / "corpus.jsonl")},
            "report": {"checkpoint": str(trained_dir / "checkpoint.json")}})
        assert run_cli("report", "--config", cfg) == 0
        html_text = (tmp_path / "report.html").read_text()
        assert not re.search(r"(https?:)?//[\w.]+/", html_text)
        assert "src=" not in html_text and "href=" not in html_text


class TestUsage:
    def test_no_out_dir_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"synth": {"n_aspects": 2}})
        assert run_cli("synth", "--config", cfg) == 1

    def test_out_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {
            "synth": {"n_aspects": 2, "n_documents": 10}})
        out = tmp_path / "override"
        assert run_cli("synth", "--config", cfg, "--out", str(out)) == 0
        assert (out / "corpus.jsonl").exists()

    def test_bad_config_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli("synth", "--config", str(bad)) == 1


class TestHtmlRendering:
    def test_uniform_confidence_uniform_shade(self):
        probs = np.tile([0.1, 0.6, 0.3], (4, 1))
        html_out = rep.render_tokens(["a", "b", "c", "d"], probs,
                                     rep.palette(2))
        alphas = re.findall(r"rgba\(\d+,\d+,\d+,([\d.]+)\)", html_out)
        assert len(set(alphas)) == 1

    def test_irrelevant_words_unshaded(self):
        probs = np.array([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1]])
        html_out = rep.render_tokens(["the", "beer"], probs, rep.palette(2))
        assert html_out.count("rgba(") == 1

    def test_escapes_tokens(self):
        probs = np.array([[0.2, 0.8]])
        html_out = rep.render_tokens(["<b>"], probs, rep.palette(1))
        assert "<b>" not in html_out and "&lt;b&gt;" in html_out

    def test_palette_extension_warns(self):
        with pytest.warns(UserWarning):
            colors = rep.palette(10)
        assert len(colors) == 10
        assert len(set(colors)) == 10

    def test_opacity_affine_in_confidence(self):
        colors = rep.palette(1)
        alphas = []
        for conf in (0.25, 0.5, 0.75):
            probs = np.array([[1 - conf, conf]])
            html_out = rep.render_tokens(["w"], probs, colors)
            if conf <= 0.5:  # irrelevant wins at low confidence
                continue
            alphas.append(float(re.findall(r",([\d.]+)\)", html_out)[0]))
        np.testing.assert_allclose(alphas, [0.75], atol=1e-6)

    def test_switch_count_shown(self):
        from mtmasker.data import Document
        doc = Document(id="d", tokens=["a", "b", "c"], labels=[])
        probs = np.array([[0.1, 0.8, 0.1], [0.1, 0.1, 0.8], [0.1, 0.8, 0.1]])
        page = rep.render_report([doc], {"d": probs}, ["x", "y"])
        assert "aspect changes &#9733;: 2" in page.lower()
