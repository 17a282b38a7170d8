"""Synthetic multilingual topic corpora with aligned or rotated embeddings.

Topics are centroids in a shared ``d``-dimensional space. Every language
has a translation of each concept (topical and filler words); aligned
tables place translations within ``sigma`` of each other, while the
non-aligned variant additionally rotates each language's space by an
independent random orthogonal matrix. Documents draw one to three topics,
emit a mix of topical and filler words, and are labelled with their topics
using language-specific label names.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Document, EmbeddingTable, save_embeddings, write_corpus
from .errors import ConfigError
from .seeding import derive_rng

LANGUAGES = ("en", "de", "es", "pt", "uk", "ru", "ar", "fa")


@dataclass
class SynthConfig:
    M: int = 2
    docs_per_lang: int = 200
    k: int = 5
    d: int = 40
    sigma: float = 0.1
    seed: int = 0
    aligned: bool = True
    words_per_topic: int = 12
    filler_words: int = 60
    topic_spread: float = 0.6
    topical_rate: float = 0.25
    sentences: tuple[int, int] = (3, 8)
    words: tuple[int, int] = (5, 12)
    max_topics: int = 3
    languages: tuple[str, ...] = field(default=())

    def langs(self) -> tuple[str, ...]:
        if self.languages:
            return tuple(self.languages)
        return LANGUAGES[: self.M]

    def validate(self) -> None:
        if self.k < 2 or self.d < 2:
            raise ConfigError(f"synthetic corpus needs k >= 2 and d >= 2, got k={self.k} d={self.d}")
        if not 1 <= self.M <= len(LANGUAGES) and not self.languages:
            raise ConfigError(f"M must be between 1 and {len(LANGUAGES)}")
        if self.languages and len(self.languages) != self.M:
            raise ConfigError("languages must list exactly M codes")
        if self.docs_per_lang < 1 or self.sigma < 0:
            raise ConfigError("docs_per_lang must be positive and sigma non-negative")


@dataclass
class SynthCorpus:
    config: SynthConfig
    docs: dict[str, list[Document]]
    aligned: EmbeddingTable
    nonaligned: EmbeddingTable
    rotations: dict[str, np.ndarray]
    concepts: dict[str, np.ndarray]

    def embeddings(self, aligned: bool = True) -> EmbeddingTable:
        return self.aligned if aligned else self.nonaligned


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR with sign correction."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _ball(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    """``n`` points drawn uniformly from the ball of the given radius."""
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, size=(n, 1)) ** (1.0 / d)
    return direction * r


def _concept_names(cfg: SynthConfig) -> list[str]:
    names = [f"t{j:02d}w{w:02d}" for j in range(cfg.k) for w in range(cfg.words_per_topic)]
    return names + [f"f{j:03d}" for j in range(cfg.filler_words)]


def synth_corpus(
    M: int = 2,
    docs_per_lang: int = 200,
    k: int = 5,
    d: int = 40,
    seed: int = 0,
    sigma: float = 0.1,
    **extra,
) -> SynthCorpus:
    cfg = SynthConfig(M=M, docs_per_lang=docs_per_lang, k=k, d=d, sigma=sigma, seed=seed, **extra)
    return generate(cfg)


def generate(cfg: SynthConfig) -> SynthCorpus:
    cfg.validate()
    langs = cfg.langs()
    rng = derive_rng(cfg.seed, "synth", "concepts")
    centroids = rng.standard_normal((cfg.k, cfg.d))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    topical = np.repeat(centroids, cfg.words_per_topic, axis=0)
    topical = topical + cfg.topic_spread * rng.standard_normal(topical.shape) / np.sqrt(cfg.d)
    filler = rng.standard_normal((cfg.filler_words, cfg.d)) / np.sqrt(cfg.d) * 1.2
    concept_vecs = np.vstack([topical, filler])
    names = _concept_names(cfg)

    aligned_vecs: dict[str, dict[str, np.ndarray]] = {}
    rotated_vecs: dict[str, dict[str, np.ndarray]] = {}
    rotations: dict[str, np.ndarray] = {}
    for lang in langs:
        lrng = derive_rng(cfg.seed, "synth", "lang", lang)
        # each translation sits within sigma/2 of the concept, so any two
        # translations are closer than sigma
        vecs = concept_vecs + _ball(lrng, len(names), cfg.d, cfg.sigma / 2)
        rot = random_rotation(derive_rng(cfg.seed, "synth", "rotation", lang), cfg.d)
        rotations[lang] = rot
        aligned_vecs[lang] = {f"{lang}_{n}": v for n, v in zip(names, vecs)}
        rotated_vecs[lang] = {f"{lang}_{n}": v for n, v in zip(names, vecs @ rot.T)}

    popularity = 1.0 / np.sqrt(np.arange(1, cfg.k + 1))
    popularity /= popularity.sum()
    n_topical = cfg.words_per_topic
    docs: dict[str, list[Document]] = {}
    for lang in langs:
        drng = derive_rng(cfg.seed, "synth", "docs", lang)
        out = []
        for i in range(cfg.docs_per_lang):
            n_topics = int(drng.integers(1, min(cfg.max_topics, cfg.k) + 1))
            topics = np.sort(drng.choice(cfg.k, n_topics, replace=False, p=popularity))
            sentences = []
            for _ in range(int(drng.integers(cfg.sentences[0], cfg.sentences[1] + 1))):
                sent = []
                for _ in range(int(drng.integers(cfg.words[0], cfg.words[1] + 1))):
                    if drng.random() < cfg.topical_rate:
                        j = int(topics[drng.integers(n_topics)])
                        w = int(drng.integers(n_topical))
                        sent.append(f"{lang}_t{j:02d}w{w:02d}")
                    else:
                        sent.append(f"{lang}_f{int(drng.integers(cfg.filler_words)):03d}")
                sentences.append(tuple(sent))
            labels = tuple(f"{lang}-topic{int(j):02d}" for j in topics)
            out.append(Document(f"{lang}-{i:05d}", lang, tuple(sentences), labels))
        docs[lang] = out

    return SynthCorpus(
        config=cfg,
        docs=docs,
        aligned=EmbeddingTable.from_vectors(aligned_vecs, cfg.d, aligned=True),
        nonaligned=EmbeddingTable.from_vectors(rotated_vecs, cfg.d, aligned=False),
        rotations=rotations,
        concepts={"centroids": centroids, "vectors": concept_vecs},
    )


def write_synth(corpus: SynthCorpus, out_dir) -> dict[str, Path]:
    """Write ``corpus.jsonl``, both embedding files and the generator config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out_dir / "corpus.jsonl",
        "embeddings": out_dir / "embeddings.aligned.txt",
        "embeddings_nonaligned": out_dir / "embeddings.nonaligned.txt",
        "config": out_dir / "synth_config.json",
    }
    write_corpus([d for lang in corpus.config.langs() for d in corpus.docs[lang]], paths["corpus"])
    save_embeddings(corpus.aligned, paths["embeddings"])
    save_embeddings(corpus.nonaligned, paths["embeddings_nonaligned"])
    cfg = asdict(corpus.config)
    paths["config"].write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return paths
