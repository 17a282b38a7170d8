"""Decision thresholds, micro-averaged F1 and cumulative TP differences."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError

# label-vocabulary size at which the full-resource threshold drops
LARGE_LABEL_SET = 400


@dataclass(frozen=True)
class ThresholdPolicy:
    mode: str = "full_resource"
    override: float | None = None

    def __post_init__(self):
        if self.mode not in ("full_resource", "low_resource"):
            raise ConfigError(f"threshold mode must be full_resource or low_resource, got {self.mode!r}")

    @classmethod
    def parse(cls, mode: str, override: float | None = None) -> "ThresholdPolicy":
        aliases = {"full": "full_resource", "low": "low_resource"}
        return cls(aliases.get(mode, mode), override)

    def threshold(self, k: int) -> float:
        if self.override is not None:
            return self.override
        if self.mode == "low_resource":
            return 0.3
        return 0.4 if k < LARGE_LABEL_SET else 0.2


def predict_labels(y_hat, policy: ThresholdPolicy, k: int | None = None) -> set[int]:
    """Indices whose probability strictly exceeds the policy threshold."""
    y_hat = np.asarray(y_hat, dtype=float)
    tau = policy.threshold(len(y_hat) if k is None else k)
    return set(np.flatnonzero(y_hat > tau).tolist())


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    documents: int
    per_label: dict[int, dict[str, int]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "documents": self.documents,
        }


def micro_f1(gold: Sequence[set], pred: Sequence[set]) -> EvalReport:
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold label sets but {len(pred)} predictions")
    tp, fp, fn = Counter(), Counter(), Counter()
    for g, p in zip(gold, pred):
        g, p = set(g), set(p)
        for j in g & p:
            tp[j] += 1
        for j in p - g:
            fp[j] += 1
        for j in g - p:
            fn[j] += 1
    TP, FP, FN = sum(tp.values()), sum(fp.values()), sum(fn.values())
    precision = TP / (TP + FP) if TP + FP else 0.0
    recall = TP / (TP + FN) if TP + FN else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    labels = sorted(set(tp) | set(fp) | set(fn))
    per_label = {j: {"tp": tp[j], "fp": fp[j], "fn": fn[j]} for j in labels}
    return EvalReport(precision, recall, f1, TP, FP, FN, len(gold), per_label)


def cumulative_tp_diff(
    mono_preds: Sequence[set],
    multi_preds: Sequence[set],
    gold: Sequence[set],
    label_order: Sequence[int],
) -> np.ndarray:
    """Prefix sums of per-label TP(multi) - TP(mono), labels in the given order.

    ``label_order`` should list labels by descending training frequency.
    """
    if not len(mono_preds) == len(multi_preds) == len(gold):
        raise ContractError("prediction lists are not aligned with the gold labels")
    known = set(label_order)
    seen = set().union(*gold, *mono_preds, *multi_preds) if gold else set()
    unknown = seen - known
    if unknown:
        raise ContractError(f"labels {sorted(unknown)} are missing from the label order")
    diff = Counter()
    for g, a, b in zip(gold, mono_preds, multi_preds):
        for j in set(g) & set(b):
            diff[j] += 1
        for j in set(g) & set(a):
            diff[j] -= 1
    return np.cumsum([diff[j] for j in label_order]).astype(int)
