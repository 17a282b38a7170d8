"""Monolingual document models: NN, HNN and HAN.

A HAN maps a document grid to a vector ``u`` through a word encoder, word
attention per sentence, a sentence encoder and sentence attention, then to
label probabilities through a sigmoid classifier. HNN swaps both attention
layers for average pooling and NN classifies the mean word embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import layers
from . import tensor as tn
from .data import (
    MAX_SENTENCES,
    MAX_WORDS,
    Batch,
    Document,
    EmbeddingTable,
    LabelVocab,
    encode_documents,
)
from .errors import ConfigError, ContractError
from .layers import AttentionParams, ClassifierParams, EncoderParams
from .seeding import derive_rng
from .tensor import ACTIVATIONS, Tensor

ARCHITECTURES = ("NN", "HNN", "HAN")
COMPONENTS = (
    "word_encoder",
    "word_attention",
    "sentence_encoder",
    "sentence_attention",
    "classifier",
)


@dataclass(frozen=True)
class ModelConfig:
    k: int
    architecture: str = "HAN"
    encoder: str = "dense"
    d: int = 40
    d_w: int = 100
    d_s: int = 100
    d_a: int = 100
    activation: str = "relu"
    strict_paper_scaling: bool = False
    constant_scaling: bool = False
    max_sentences: int = MAX_SENTENCES
    max_words: int = MAX_WORDS

    def validate(self) -> "ModelConfig":
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}")
        if self.encoder not in layers.ENCODER_KINDS:
            raise ConfigError(f"encoder must be one of {layers.ENCODER_KINDS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        for name in ("k", "d", "d_w", "d_s", "d_a", "max_sentences", "max_words"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @property
    def doc_dim(self) -> int:
        if self.architecture == "NN":
            return self.d
        return 2 * self.d_s if self.encoder == "bigru" else self.d_s


@dataclass
class HanParams:
    """Parameter bundle of one language's model.

    Components that a sharing scheme ties across languages are the very
    same objects in every language's bundle.
    """

    config: ModelConfig
    classifier: ClassifierParams
    word_encoder: EncoderParams | None = None
    word_attention: AttentionParams | None = None
    sentence_encoder: EncoderParams | None = None
    sentence_attention: AttentionParams | None = None

    def components(self) -> Iterator[tuple[str, object]]:
        for name in COMPONENTS:
            comp = getattr(self, name)
            if comp is not None:
                yield name, comp

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for cname, comp in self.components():
            for tname, t in comp.tensors.items():
                out.append((f"{cname}.{tname}", t))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def count(self) -> int:
        seen, total = set(), 0
        for t in self.parameters():
            if id(t) not in seen:
                seen.add(id(t))
                total += t.size
        return total


def build_component(cfg: ModelConfig, name: str, rng: np.random.Generator):
    if name == "word_encoder":
        return layers.init_encoder(cfg.encoder, cfg.d, cfg.d_w, rng)
    word_out = 2 * cfg.d_w if cfg.encoder == "bigru" else cfg.d_w
    if name == "word_attention":
        return layers.init_attention(word_out, cfg.d_a, rng)
    if name == "sentence_encoder":
        return layers.init_encoder(cfg.encoder, word_out, cfg.d_s, rng)
    if name == "sentence_attention":
        return layers.init_attention(cfg.doc_dim, cfg.d_a, rng)
    if name == "classifier":
        return layers.init_classifier(cfg.doc_dim, cfg.k, rng)
    raise ContractError(f"unknown component {name!r}")


def component_names(cfg: ModelConfig) -> tuple[str, ...]:
    if cfg.architecture == "NN":
        return ("classifier",)
    if cfg.architecture == "HNN":
        return ("word_encoder", "sentence_encoder", "classifier")
    return COMPONENTS


def build_model(cfg: ModelConfig, seed: int, stream: str = "model") -> HanParams:
    """Initialise a model; each component draws from its own seeded stream."""
    cfg.validate()
    comps = {
        name: build_component(cfg, name, derive_rng(seed, stream, name))
        for name in component_names(cfg)
    }
    return HanParams(config=cfg, **comps)


@dataclass
class Forward:
    u: Tensor
    y_hat: Tensor
    word_alpha: np.ndarray | None
    sentence_alpha: np.ndarray | None


def forward(batch: Batch, p: HanParams, emb: EmbeddingTable) -> Forward:
    """Run a same-language batch of document grids through the model."""
    cfg = p.config
    table = emb[batch.lang]
    x = table.matrix[batch.ids]
    word_mask = batch.word_mask
    sent_mask = word_mask.any(axis=-1)
    if not np.all(sent_mask.any(axis=-1)):
        raise ContractError("document with zero valid sentences")

    if cfg.architecture == "NN":
        counts = word_mask.sum(axis=(1, 2))
        weights = word_mask / counts[:, None, None]
        u = Tensor(np.einsum("bktd,bkt->bd", x, weights))
        return Forward(u, layers.classify(u, p.classifier), None, None)

    words = Tensor(x[sent_mask])
    wmask = word_mask[sent_mask]
    h_w = layers.encode(words, p.word_encoder, wmask, cfg.activation)
    word_alpha = None
    if cfg.architecture == "HAN":
        s, alpha = layers.attention_pool(
            h_w, p.word_attention, wmask, cfg.strict_paper_scaling, cfg.activation,
            cfg.max_words if cfg.constant_scaling else None,
        )
        word_alpha = np.zeros(word_mask.shape)
        word_alpha[sent_mask] = alpha.data
    else:
        s = layers.average_pool(h_w, wmask)

    slot = np.full(sent_mask.shape, -1, dtype=np.int64)
    slot[sent_mask] = np.arange(int(sent_mask.sum()))
    s_grid = tn.gather_rows(s, slot)
    h_s = layers.encode(s_grid, p.sentence_encoder, sent_mask, cfg.activation)
    sentence_alpha = None
    if cfg.architecture == "HAN":
        u, alpha = layers.attention_pool(
            h_s, p.sentence_attention, sent_mask, cfg.strict_paper_scaling, cfg.activation,
            cfg.max_sentences if cfg.constant_scaling else None,
        )
        sentence_alpha = alpha.data
    else:
        u = layers.average_pool(h_s, sent_mask)
    return Forward(u, layers.classify(u, p.classifier), word_alpha, sentence_alpha)


def document_batch(docs: Sequence[Document], emb: EmbeddingTable,
                   vocab: LabelVocab | None = None) -> Batch:
    """Encode a handful of same-language documents without an EncodedSet."""
    lang = docs[0].lang
    if vocab is None:
        labels = sorted({lab for d in docs for lab in d.labels})
        vocab = LabelVocab(lang, tuple(labels))
    enc = encode_documents(docs, emb, vocab)
    return enc.batch(np.arange(len(docs)))


def han_forward(doc: Document, p: HanParams, emb: EmbeddingTable, vocab: LabelVocab | None = None):
    """Single-document forward pass: ``(u, y_hat, attention)``.

    ``attention`` holds the word weights per sentence (``K x T``) and the
    sentence weights (``K``), trimmed to the document's extent.
    """
    if doc.lang not in emb:
        raise ContractError(f"unknown language {doc.lang!r}")
    if not doc.sentences:
        raise ContractError(f"document {doc.id} has no valid sentence")
    out = forward(document_batch([doc], emb, vocab), p, emb)
    attn = {
        "word": None if out.word_alpha is None else out.word_alpha[0],
        "sentence": None if out.sentence_alpha is None else out.sentence_alpha[0],
    }
    return out.u[0], out.y_hat[0], attn


def format_vector(values) -> str:
    return " ".join(f"{float(v):.6g}" for v in values)


EXPORT_HEADER = "id\tlang\tlabels\tvector"


def export_doc_vectors(
    docs: Sequence[Document],
    params: HanParams | Mapping[str, HanParams],
    emb: EmbeddingTable,
    out_path,
    batch_size: int = 64,
) -> int:
    """Write one ``id, lang, gold labels, u`` record per document.

    Returns the number of records written.
    """
    lines = [EXPORT_HEADER]
    by_lang: dict[str, list[Document]] = {}
    for d in docs:
        by_lang.setdefault(d.lang, []).append(d)
    vectors: dict[tuple[str, str], np.ndarray] = {}
    for lang, group in by_lang.items():
        p = params[lang] if isinstance(params, Mapping) else params
        for start in range(0, len(group), batch_size):
            chunk = group[start:start + batch_size]
            out = forward(document_batch(chunk, emb), p, emb)
            for d, row in zip(chunk, out.u.data):
                vectors[(lang, d.id)] = row
    for d in docs:
        lines.append("\t".join([d.id, d.lang, ",".join(d.labels), format_vector(vectors[(d.lang, d.id)])]))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(docs)
