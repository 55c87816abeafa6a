"""Multi-target rationale masking for multi-aspect text classification."""

from .autodiff import Adam, Rng, Tensor, clip_grad_norm
from .data import (Corpus, Document, EmbeddingTable, SynthSpec, Vocabulary,
                   binarize, build_vocab, generate_synthetic, load_corpus,
                   load_embeddings, pad_batch)
from .model import MtmConfig, MtmModel, MultiMask, beer_config, hotel_config
from .estimators import (AttentionClassifier, BaselineClassifier,
                         ContextualizedClassifier, MultiTargetMasker,
                         SharedAttentionClassifier)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Rng", "Tensor", "clip_grad_norm",
    "Corpus", "Document", "EmbeddingTable", "SynthSpec", "Vocabulary",
    "binarize", "build_vocab", "generate_synthetic", "load_corpus",
    "load_embeddings", "pad_batch",
    "MtmConfig", "MtmModel", "MultiMask", "beer_config", "hotel_config",
    "MultiTargetMasker", "BaselineClassifier", "SharedAttentionClassifier",
    "AttentionClassifier", "ContextualizedClassifier",
]
