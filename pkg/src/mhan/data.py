"""Corpus and embedding ingestion, label vocabularies, splits and padding.

Corpus files are JSON lines, one document per line::

    {"id": "d1", "lang": "en", "sentences": [["a", "b"], ["c"]], "labels": ["x"]}

Embedding files use the word2vec text format (``vocab_size dim`` header,
then ``token v1 ... vd``). Tokens are either bare words in a per-language
file or ``lang:word`` keys in a single multilingual file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataFormatError
from .seeding import derive_rng

log = logging.getLogger(__name__)

MAX_SENTENCES = 30
MAX_WORDS = 30
LANG_CODE = re.compile(r"^[a-z]{2,3}$")

TIERS = {
    "tiny": (0.001, 0.001),
    "small": (0.01, 0.01),
    "medium": (0.1, 0.1),
}


@dataclass(frozen=True)
class Document:
    id: str
    lang: str
    sentences: tuple[tuple[str, ...], ...]
    labels: tuple[str, ...]
    specific_labels: tuple[str, ...] | None = None

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    @property
    def sentence_lengths(self) -> list[int]:
        return [len(s) for s in self.sentences]

    def label_set(self, kind: str = "general") -> tuple[str, ...]:
        if kind == "specific" and self.specific_labels is not None:
            return self.specific_labels
        return self.labels

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "lang": self.lang,
            "sentences": [list(s) for s in self.sentences],
            "labels": list(self.labels),
        }
        if self.specific_labels is not None:
            rec["specific_labels"] = list(self.specific_labels)
        return rec


@dataclass
class LoadReport:
    records: int = 0
    accepted: int = 0
    rejected: list[tuple[int, str, str]] = field(default_factory=list)
    truncated_sentences: int = 0
    truncated_documents: int = 0

    def as_dict(self) -> dict:
        return {
            "records": self.records,
            "accepted": self.accepted,
            "rejected": len(self.rejected),
            "rejected_detail": [
                {"line": line, "id": doc_id, "reason": why} for line, doc_id, why in self.rejected
            ],
            "truncated_sentences": self.truncated_sentences,
            "truncated_documents": self.truncated_documents,
        }


def _str_list(value, what, path, line):
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise DataFormatError(f"{what} must be a list of strings", path, line)
    return value


def parse_record(
    rec: dict,
    path=None,
    line=None,
    max_sentences: int = MAX_SENTENCES,
    max_words: int = MAX_WORDS,
    languages: Iterable[str] | None = None,
) -> tuple[Document, int, bool]:
    """Validate one corpus record and truncate it to the grid.

    Returns the document, the number of truncated sentences and whether the
    document itself was cut.
    """
    if not isinstance(rec, dict):
        raise DataFormatError("record must be a JSON object", path, line)
    for key in ("id", "lang", "sentences", "labels"):
        if key not in rec:
            raise DataFormatError(f"missing field {key!r}", path, line)
    doc_id, lang = rec["id"], rec["lang"]
    if not isinstance(doc_id, str):
        raise DataFormatError("id must be a string", path, line)
    if not isinstance(lang, str) or not LANG_CODE.match(lang):
        raise DataFormatError(f"unknown language code {lang!r}", path, line)
    if languages is not None and lang not in set(languages):
        raise DataFormatError(f"unknown language code {lang!r}", path, line)
    if not isinstance(rec["sentences"], list):
        raise DataFormatError("sentences must be a list of token lists", path, line)
    sentences = [_str_list(s, "sentence", path, line) for s in rec["sentences"]]
    labels = _str_list(rec["labels"], "labels", path, line)
    specific = rec.get("specific_labels")
    if specific is not None:
        specific = tuple(_str_list(specific, "specific_labels", path, line))

    cut_words = sum(1 for s in sentences if len(s) > max_words)
    kept = [tuple(s[:max_words]) for s in sentences if s]
    cut_doc = len(kept) > max_sentences
    kept = kept[:max_sentences]
    doc = Document(doc_id, lang, tuple(kept), tuple(labels), specific)
    return doc, cut_words, cut_doc


def load_corpus(
    path,
    max_sentences: int = MAX_SENTENCES,
    max_words: int = MAX_WORDS,
    languages: Iterable[str] | None = None,
) -> tuple[dict[str, list[Document]], LoadReport]:
    """Read a JSON-lines corpus into per-language document lists.

    Empty sentences are dropped; documents left with no sentence or with no
    label are rejected and listed in the report.
    """
    path = Path(path)
    report = LoadReport()
    out: dict[str, list[Document]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            report.records += 1
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", path, lineno) from exc
            doc, cut_words, cut_doc = parse_record(
                rec, path, lineno, max_sentences, max_words, languages
            )
            report.truncated_sentences += cut_words
            report.truncated_documents += int(cut_doc)
            if not doc.sentences:
                report.rejected.append((lineno, doc.id, "no valid sentence"))
                continue
            if not doc.labels:
                report.rejected.append((lineno, doc.id, "no labels"))
                continue
            out.setdefault(doc.lang, []).append(doc)
            report.accepted += 1
    return out, report


def write_corpus(docs: Iterable[Document], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")


def corpus_sha(docs_by_lang: Mapping[str, Sequence[Document]]) -> str:
    """SHA-256 of a canonical serialization, independent of dict order."""
    h = hashlib.sha256()
    for lang in sorted(docs_by_lang):
        for doc in sorted(docs_by_lang[lang], key=lambda d: d.id):
            h.update(json.dumps(doc.to_record(), sort_keys=True, ensure_ascii=False).encode())
            h.update(b"\n")
    return h.hexdigest()


# ---------------------------------------------------------------- embeddings


@dataclass
class LanguageEmbeddings:
    """Vocabulary and vectors for one language.

    ``matrix`` has one extra trailing all-zero row used for OOV tokens and
    padding.
    """

    vocab: dict[str, int]
    matrix: np.ndarray

    @property
    def oov_index(self) -> int:
        return len(self.vocab)

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.oov_index)

    def lookup(self, token: str) -> np.ndarray:
        return self.matrix[self.index(token)]


@dataclass
class EmbeddingTable:
    dim: int
    languages: dict[str, LanguageEmbeddings]
    aligned: bool = True
    duplicates: int = 0

    def __getitem__(self, lang: str) -> LanguageEmbeddings:
        try:
            return self.languages[lang]
        except KeyError:
            raise ContractError(f"no embeddings for language {lang!r}") from None

    def __contains__(self, lang: str) -> bool:
        return lang in self.languages

    def lookup(self, lang: str, token: str) -> np.ndarray:
        return self[lang].lookup(token)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for lang in sorted(self.languages):
            h.update(lang.encode())
            h.update(np.ascontiguousarray(self.languages[lang].matrix).tobytes())
        return h.hexdigest()

    @classmethod
    def from_vectors(
        cls, vectors: Mapping[str, Mapping[str, np.ndarray]], dim: int, aligned: bool = True
    ) -> "EmbeddingTable":
        langs = {}
        for lang, words in vectors.items():
            vocab = {w: i for i, w in enumerate(words)}
            matrix = np.zeros((len(vocab) + 1, dim))
            for w, i in vocab.items():
                matrix[i] = words[w]
            matrix.setflags(write=False)
            langs[lang] = LanguageEmbeddings(vocab, matrix)
        return cls(dim, langs, aligned)


def _read_word2vec(path: Path, expected_d: int):
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise DataFormatError("header must be 'vocab_size dim'", path, 1)
        size, dim = int(header[0]), int(header[1])
        if dim != expected_d:
            raise DataFormatError(f"dimension {dim} does not match expected {expected_d}", path, 1)
        rows = 0
        for lineno, raw in enumerate(fh, start=2):
            parts = raw.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) != dim + 1:
                raise DataFormatError(
                    f"expected {dim} values, found {len(parts) - 1}", path, lineno
                )
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise DataFormatError("unparseable float", path, lineno) from exc
            if not np.all(np.isfinite(vec)):
                raise DataFormatError("non-finite vector", path, lineno)
            rows += 1
            yield parts[0], vec, lineno
        if rows != size:
            raise DataFormatError(f"header announces {size} rows, found {rows}", path)


def load_embeddings(
    path,
    expected_d: int,
    lang: str | None = None,
    aligned: bool = True,
    table: EmbeddingTable | None = None,
) -> EmbeddingTable:
    """Load a word2vec text file into an (optionally existing) table.

    Without ``lang`` every key must be ``lang:word``. Duplicate keys keep
    the last vector and are counted in ``table.duplicates``.
    """
    path = Path(path)
    vectors: dict[str, dict[str, np.ndarray]] = {}
    duplicates = 0
    if table is not None:
        if table.dim != expected_d:
            raise ConfigError(f"table has dim {table.dim}, expected {expected_d}")
        for code, le in table.languages.items():
            vectors[code] = {w: le.matrix[i] for w, i in le.vocab.items()}
        duplicates = table.duplicates
    for key, vec, lineno in _read_word2vec(path, expected_d):
        if lang is None:
            code, sep, word = key.partition(":")
            if not sep or not LANG_CODE.match(code) or not word:
                raise DataFormatError(f"key {key!r} is not of the form lang:word", path, lineno)
        else:
            code, word = lang, key
        words = vectors.setdefault(code, {})
        if word in words:
            duplicates += 1
        words[word] = vec
    if duplicates:
        log.warning("%s: %d duplicate embedding keys, last occurrence kept", path, duplicates)
    out = EmbeddingTable.from_vectors(vectors, expected_d, aligned)
    out.duplicates = duplicates
    return out


def save_embeddings(table: EmbeddingTable, path, lang: str | None = None) -> None:
    """Write word2vec text; with ``lang`` only that language, with bare keys."""
    langs = [lang] if lang is not None else sorted(table.languages)
    rows = []
    for code in langs:
        le = table[code]
        for word, i in le.vocab.items():
            key = word if lang is not None else f"{code}:{word}"
            rows.append(key + " " + " ".join(repr(float(v)) for v in le.matrix[i]))
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(rows)} {table.dim}\n")
        for row in rows:
            fh.write(row + "\n")


# ---------------------------------------------------------------- labels


@dataclass(frozen=True)
class LabelVocab:
    lang: str
    labels: tuple[str, ...]
    kind: str = "general"

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        idx = self.index
        y = np.zeros(len(self.labels))
        for label in labels:
            if label in idx:
                y[idx[label]] = 1.0
        return y

    def indices(self, labels: Iterable[str]) -> set[int]:
        idx = self.index
        return {idx[label] for label in labels if label in idx}


def build_label_vocab(
    train: Mapping[str, Sequence[Document]],
    kind: str = "general",
    min_count: int | None = None,
) -> dict[str, LabelVocab]:
    """Independent per-language label vocabularies.

    Labels are ordered by descending training frequency, ties broken
    lexicographically. ``min_count`` defaults to 1 for general labels and
    100 for specific ones.
    """
    if kind not in ("general", "specific"):
        raise ConfigError(f"label type must be general or specific, got {kind!r}")
    if min_count is None:
        min_count = 100 if kind == "specific" else 1
    out = {}
    for lang, docs in train.items():
        if not docs:
            raise ContractError(f"empty training split for {lang!r}")
        counts = Counter(label for d in docs for label in d.label_set(kind))
        kept = sorted((lab for lab, c in counts.items() if c >= min_count),
                      key=lambda lab: (-counts[lab], lab))
        if not kept:
            raise ContractError(f"no {kind} label of {lang!r} occurs {min_count} times")
        out[lang] = LabelVocab(lang, tuple(kept), kind)
    return out


def label_frequencies(docs: Sequence[Document], vocab: LabelVocab) -> np.ndarray:
    counts = np.zeros(len(vocab), dtype=int)
    for d in docs:
        for j in vocab.indices(d.label_set(vocab.kind)):
            counts[j] += 1
    return counts


# ---------------------------------------------------------------- splits


@dataclass
class Split:
    train: list[Document]
    valid: list[Document]
    test: list[Document]


def split_corpus(docs_by_lang: Mapping[str, Sequence[Document]], seed: int) -> dict[str, Split]:
    """Random 80/10/10 split per language.

    Validation and test sizes are ``floor(N / 10)``; the remainder trains.
    """
    out = {}
    for lang in sorted(docs_by_lang):
        docs = list(docs_by_lang[lang])
        n = len(docs)
        if n < 10:
            raise ContractError(f"{lang!r} has {n} documents; at least 10 are needed to split")
        perm = derive_rng(seed, "split", lang).permutation(n)
        n_hold = n // 10
        valid = [docs[i] for i in perm[:n_hold]]
        test = [docs[i] for i in perm[n_hold:2 * n_hold]]
        train = [docs[i] for i in perm[2 * n_hold:]]
        out[lang] = Split(train, valid, test)
    return out


def subsample_low_resource(train: Sequence[Document], fraction: float, seed: int) -> list[Document]:
    """Uniform subset of ``ceil(fraction * N)`` documents (at least one)."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    n = len(train)
    if fraction == 1:
        return list(train)
    # tolerate float noise such as 0.001 * 1000 = 1.0000000000000002
    size = max(1, math.ceil(round(fraction * n, 9)))
    chosen = np.sort(derive_rng(seed, "subsample", str(fraction)).choice(n, size, replace=False))
    return [train[i] for i in chosen]


def tier_fractions(tier: str) -> list[float]:
    """The five fractions spanning a low-resource tier."""
    try:
        start, step = TIERS[tier]
    except KeyError:
        raise ConfigError(f"unknown tier {tier!r}; choose from {sorted(TIERS)}") from None
    return [round(start + i * step, 6) for i in range(5)]


# ---------------------------------------------------------------- grid encoding


def pad_ids(sentences: Sequence[Sequence[int]], k_max: int, t_max: int, pad: int = 0):
    """Place ragged id lists in a ``k_max x t_max`` grid with a validity mask."""
    grid = np.full((k_max, t_max), pad, dtype=np.int64)
    mask = np.zeros((k_max, t_max), dtype=bool)
    for i, sent in enumerate(sentences[:k_max]):
        sent = list(sent)[:t_max]
        grid[i, : len(sent)] = sent
        mask[i, : len(sent)] = True
    return grid, mask


def unpad_ids(grid: np.ndarray, mask: np.ndarray) -> list[list[int]]:
    return [[int(v) for v in row[m]] for row, m in zip(grid, mask) if m.any()]


@dataclass
class Batch:
    lang: str
    ids: np.ndarray
    word_mask: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class EncodedSet:
    """Documents of one language turned into padded id grids and k-hot rows."""

    lang: str
    doc_ids: list[str]
    ids: np.ndarray
    mask: np.ndarray
    y: np.ndarray
    docs: list[Document]

    def __len__(self) -> int:
        return len(self.doc_ids)

    def batch(self, indices) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        mask = self.mask[indices]
        k = max(1, int(mask.any(axis=2).sum(axis=1).max())) if len(indices) else 1
        t = max(1, int(mask.sum(axis=2).max())) if len(indices) else 1
        return Batch(self.lang, self.ids[indices, :k, :t], mask[:, :k, :t], self.y[indices])

    def gold_sets(self) -> list[set[int]]:
        return [set(np.flatnonzero(row).tolist()) for row in self.y]


def encode_documents(
    docs: Sequence[Document],
    emb: EmbeddingTable,
    vocab: LabelVocab,
    max_sentences: int = MAX_SENTENCES,
    max_words: int = MAX_WORDS,
) -> EncodedSet:
    if docs:
        langs = {d.lang for d in docs}
        if len(langs) != 1:
            raise ContractError(f"documents mix languages {sorted(langs)}")
    lang = vocab.lang
    table = emb[lang]
    n = len(docs)
    ids = np.full((n, max_sentences, max_words), table.oov_index, dtype=np.int64)
    mask = np.zeros((n, max_sentences, max_words), dtype=bool)
    y = np.zeros((n, len(vocab)))
    for i, d in enumerate(docs):
        if d.lang != lang:
            raise ContractError(f"document {d.id} is {d.lang}, vocabulary is {lang}")
        sent_ids = [[table.index(tok) for tok in s] for s in d.sentences]
        ids[i], mask[i] = pad_ids(sent_ids, max_sentences, max_words, table.oov_index)
        y[i] = vocab.encode(d.label_set(vocab.kind))
    return EncodedSet(lang, [d.id for d in docs], ids, mask, y, list(docs))


def keep_labeled(docs: Sequence[Document], vocab: LabelVocab) -> list[Document]:
    """Drop documents none of whose labels survive in ``vocab``."""
    return [d for d in docs if vocab.indices(d.label_set(vocab.kind))]
