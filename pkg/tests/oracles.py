"""Independent reference computations used by several test modules."""

from __future__ import annotations

from itertools import product

from mhan.multitask import SHARED, SharingScheme

# Table-1 style label-set sizes used for heterogeneous k.
GENERAL_K = (327, 367, 159, 95, 28, 102, 91, 71)
SPECIFIC_K = (1058, 809, 684, 301, 260, 814, 344, 127)


def encoder_count(kind: str, d_in: int, d_h: int) -> int:
    if kind == "dense":
        return d_in * d_h + d_h
    gru = 3 * (d_in * d_h + d_h * d_h + d_h)
    return gru if kind == "gru" else 2 * gru


def component_counts(kind: str, k: int, d=40, d_w=100, d_s=100, d_a=100) -> dict[str, int]:
    width = 2 if kind == "bigru" else 1
    return {
        "word_encoder": encoder_count(kind, d, d_w),
        "word_attention": width * d_w * d_a + 2 * d_a,
        "sentence_encoder": encoder_count(kind, width * d_w, d_s),
        "sentence_attention": width * d_s * d_a + 2 * d_a,
        "classifier": width * d_s * k + k,
    }


def scheme_total(kind: str, ks, scheme: SharingScheme, **dims) -> int:
    """Distinct parameters: shared components once, the rest per language."""
    shared = SHARED[scheme] if len(ks) > 1 else ()
    per_lang = [component_counts(kind, k, **dims) for k in ks]
    total = sum(per_lang[0][c] for c in shared)
    for counts in per_lang:
        total += sum(v for c, v in counts.items() if c not in shared)
    return total


def brute_force_f1(gold, pred, n_labels: int) -> float:
    """Enumerate every (document, label) pair."""
    tp = fp = fn = 0
    for i, j in product(range(len(gold)), range(n_labels)):
        g, p = j in gold[i], j in pred[i]
        tp += g and p
        fp += p and not g
        fn += g and not p
    if tp == 0:
        return 0.0
    prec, rec = tp / (tp + fp), tp / (tp + fn)
    return 2 * prec * rec / (prec + rec)
