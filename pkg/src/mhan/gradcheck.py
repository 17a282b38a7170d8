"""Finite-difference checks of whole HAN compositions on random small shapes."""

from __future__ import annotations

import numpy as np

from . import layers
from . import tensor as tn
from .data import Batch, EmbeddingTable, LanguageEmbeddings
from .model import ModelConfig, build_model, forward
from .seeding import derive_rng


def random_problem(encoder: str, seed: int, strict: bool | None = None, max_dim: int = 5,
                   max_len: int = 4, docs: int = 2):
    """A random HAN with parameters in [-1, 1] and a small random batch."""
    rng = derive_rng(seed, "gradcheck", encoder)
    dim = lambda: int(rng.integers(1, max_dim + 1))  # noqa: E731
    cfg = ModelConfig(
        k=dim(), encoder=encoder, d=dim(), d_w=dim(), d_s=dim(), d_a=dim(),
        strict_paper_scaling=bool(seed % 2) if strict is None else strict,
    )
    params = build_model(cfg, seed)
    for t in params.parameters():
        t.data[...] = rng.uniform(-1, 1, size=t.shape)

    vocab_size = 6
    matrix = np.vstack([rng.uniform(-1, 1, size=(vocab_size, cfg.d)), np.zeros((1, cfg.d))])
    emb = EmbeddingTable(cfg.d, {"xx": LanguageEmbeddings({str(i): i for i in range(vocab_size)}, matrix)})

    n_sent = rng.integers(1, max_len + 1, size=docs)
    k_max = int(n_sent.max())
    mask = np.zeros((docs, k_max, max_len), dtype=bool)
    for b in range(docs):
        for s in range(n_sent[b]):
            mask[b, s, : rng.integers(1, max_len + 1)] = True
    t_max = int(mask.sum(axis=2).max())
    mask = mask[:, :, :t_max]
    ids = np.where(mask, rng.integers(0, vocab_size + 1, size=mask.shape), vocab_size)
    y = (rng.random((docs, cfg.k)) < 0.5).astype(float)
    return params, emb, Batch("xx", ids, mask, y)


def composite_grad_check(encoder: str, seeds=range(10), eps: float = 1e-4) -> float:
    """Max relative error of encoder + attention + classifier + BCE gradients."""
    worst = 0.0
    for seed in seeds:
        params, emb, batch = random_problem(encoder, seed)

        def loss():
            return tn.tsum(layers.bce_loss(batch.y, forward(batch, params, emb).y_hat))

        worst = max(worst, tn.grad_check(loss, params.parameters(), eps))
    return worst
