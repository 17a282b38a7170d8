import numpy as np
import pytest

from mhan.data import Document, EmbeddingTable

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.acceptance_lines = ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Register one PASS/FAIL line for the acceptance summary."""

    def record(cid: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
        print(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")

    return record


WORDS = ["alpha", "beta", "gamma", "delta", "eps"]


@pytest.fixture
def tiny_emb():
    rng = np.random.default_rng(7)
    vecs = {lang: {w: rng.uniform(-1, 1, size=4) for w in WORDS} for lang in ("en", "de")}
    return EmbeddingTable.from_vectors(vecs, dim=4)


def make_doc(i, lang="en", sentences=(("alpha", "beta"), ("gamma",)), labels=("a",)):
    return Document(f"{lang}{i}", lang, tuple(tuple(s) for s in sentences), tuple(labels))


@pytest.fixture
def tiny_docs():
    rng = np.random.default_rng(3)
    docs = []
    for i in range(6):
        sents = tuple(
            tuple(rng.choice(WORDS, size=int(rng.integers(1, 5))).tolist())
            for _ in range(int(rng.integers(1, 4)))
        )
        docs.append(make_doc(i, sentences=sents, labels=("a", "b")[: 1 + i % 2]))
    return docs
