"""Shared fixtures for the acceptance suite.

The trained-model fixtures are session-scoped because several acceptance
criteria evaluate the same desk-scale training run from different angles.
"""

import time

import numpy as np
import pytest

from mtmasker.data import SynthSpec, generate_synthetic
from mtmasker.estimators import MultiTargetMasker

# Desk-scale configuration: small enough to train on a laptop core in
# minutes, large enough for the masker to separate four aspects.
ACCEPT_MODEL = dict(embed_dim=32, hidden_size=32, feature_maps=32,
                    classifier_hidden=32, filter_widths=(3, 5), batch_size=256,
                    min_count=1, max_epochs=20, patience=5,
                    lambda_sel=0.03, lambda_cont=0.03, lambda_p=0.15, seed=0)


@pytest.fixture(scope="session")
def accept_corpus():
    spec = SynthSpec.default(n_aspects=4, n_documents=5000,
                             label_correlation=0.7, seed=42)
    corpus = generate_synthetic(spec)
    corpus.spec = spec
    return corpus


def fit_masker(corpus, **overrides):
    est = MultiTargetMasker(**{**ACCEPT_MODEL, **overrides})
    t0 = time.time()
    est.fit(corpus.split("train"), None,
            validation_data=(corpus.split("valid"), None))
    est.fit_seconds_ = time.time() - t0
    return est


@pytest.fixture(scope="session")
def trained_mtm(accept_corpus):
    return fit_masker(accept_corpus)


@pytest.fixture(scope="session")
def trained_mtm_nocont(accept_corpus):
    return fit_masker(accept_corpus, lambda_cont=0.0)
