"""Monolingual and multilingual hierarchical attention networks for
multi-label document classification over disjoint per-language label sets."""

__version__ = "0.1.0"

from .data import Document, EmbeddingTable, LabelVocab, load_corpus, load_embeddings
from .model import HanParams, ModelConfig, build_model, han_forward
from .multitask import MultiTaskConfig, SharingRegistry, SharingScheme, build_mhan, count_params
from .tensor import Tensor, backward, grad_check
from .train import TrainConfig, train

__all__ = [
    "Document",
    "EmbeddingTable",
    "HanParams",
    "LabelVocab",
    "ModelConfig",
    "MultiTaskConfig",
    "SharingRegistry",
    "SharingScheme",
    "Tensor",
    "TrainConfig",
    "backward",
    "build_mhan",
    "build_model",
    "count_params",
    "grad_check",
    "han_forward",
    "load_corpus",
    "load_embeddings",
    "train",
]
