"""Low-resource transfer harness: monolingual HAN vs multilingual variants."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .data import (
    Document,
    EmbeddingTable,
    build_label_vocab,
    encode_documents,
    keep_labeled,
    split_corpus,
    subsample_low_resource,
    tier_fractions,
)
from .errors import ConfigError
from .metrics import ThresholdPolicy
from .model import ModelConfig
from .multitask import MultiTaskConfig, SharingScheme, build_mhan
from .train import TrainConfig, evaluate_set, train

log = logging.getLogger(__name__)

MULTI_SCHEMES = (SharingScheme.ENC, SharingScheme.ATT, SharingScheme.BOTH)


@dataclass
class Run:
    seed: int
    fraction: float
    model: str
    valid_f1: float
    test_f1: float
    epochs: int


@dataclass
class SweepResult:
    target: str
    aux: str
    runs: list[Run] = field(default_factory=list)
    groups: dict[str, list[float]] = field(default_factory=dict)

    def models(self) -> list[str]:
        return list(dict.fromkeys(r.model for r in self.runs))

    def seed_means(self, group: str, model: str) -> dict[int, float]:
        """Mean test F1 over the group's fractions, one value per seed."""
        fracs = set(self.groups[group])
        per_seed: dict[int, list[float]] = {}
        for r in self.runs:
            if r.model == model and r.fraction in fracs:
                per_seed.setdefault(r.seed, []).append(r.test_f1)
        return {s: float(np.mean(v)) for s, v in sorted(per_seed.items())}

    def table(self) -> dict[str, dict[str, dict[str, float]]]:
        out = {}
        for group in self.groups:
            out[group] = {}
            for model in self.models():
                vals = list(self.seed_means(group, model).values())
                out[group][model] = {
                    "mean": float(np.mean(vals)),
                    "min": float(np.min(vals)),
                    "max": float(np.max(vals)),
                }
        return out

    def gap(self, group: str, model: str = "ensemble", baseline: str = "mono") -> float:
        a = self.seed_means(group, model)
        b = self.seed_means(group, baseline)
        return float(np.mean([a[s] - b[s] for s in a]))

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "aux": self.aux,
            "groups": self.groups,
            "table": self.table(),
            "runs": [r.__dict__ for r in self.runs],
        }


def resolve_groups(tiers: Sequence[str] | None, fractions: Sequence[float] | None) -> dict[str, list[float]]:
    if fractions:
        return {"custom": [float(f) for f in fractions]}
    if not tiers:
        raise ConfigError("give tiers or fractions")
    return {t: tier_fractions(t) for t in tiers}


def low_resource_sweep(
    docs: Mapping[str, Sequence[Document]],
    emb: EmbeddingTable,
    target: str,
    aux: str,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int] = (0,),
    tiers: Sequence[str] | None = None,
    fractions: Sequence[float] | None = None,
    schemes: Sequence[SharingScheme] = MULTI_SCHEMES,
    policy: ThresholdPolicy | None = None,
) -> SweepResult:
    """Train mono-HAN and MHAN variants on a subsampled target language.

    The auxiliary language keeps its full training split. For every
    fraction, the ``ensemble`` entry is the multilingual scheme with the
    best target validation F1.
    """
    if target == aux:
        raise ConfigError("target and auxiliary languages must differ")
    policy = policy or ThresholdPolicy("low_resource")
    groups = resolve_groups(tiers, fractions)
    all_fracs = sorted({f for fs in groups.values() for f in fs})
    result = SweepResult(target, aux, groups=groups)
    pair = {target: docs[target], aux: docs[aux]}

    for seed in seeds:
        splits = split_corpus(pair, seed)
        vocab = build_label_vocab({lang: s.train for lang, s in splits.items()})
        cfgs = {lang: replace(model_cfg, k=len(vocab[lang])) for lang in pair}
        valid = {lang: encode_documents(keep_labeled(splits[lang].valid, vocab[lang]), emb, vocab[lang])
                 for lang in pair}
        test = {lang: encode_documents(keep_labeled(splits[lang].test, vocab[lang]), emb, vocab[lang])
                for lang in pair}
        aux_train = encode_documents(keep_labeled(splits[aux].train, vocab[aux]), emb, vocab[aux])
        tcfg = replace(train_cfg, seed=seed, select_on=target)
        for frac in all_fracs:
            sub = subsample_low_resource(splits[target].train, frac, seed)
            tgt_train = encode_documents(keep_labeled(sub, vocab[target]), emb, vocab[target])

            def run(name, langs, scheme):
                registry = build_mhan({lang: cfgs[lang] for lang in langs}, scheme, seed)
                mt = MultiTaskConfig(tuple(langs), tcfg.epoch_size, tcfg.batch_size)
                sets = {target: tgt_train, aux: aux_train}
                res = train(registry, {lang: sets[lang] for lang in langs},
                            {lang: valid[lang] for lang in langs}, emb, tcfg, mt, policy)
                v = evaluate_set(registry[target], valid[target], emb, policy).report.f1
                t = evaluate_set(registry[target], test[target], emb, policy).report.f1
                log.info("seed %d fraction %g %s: valid %.4f test %.4f", seed, frac, name, v, t)
                r = Run(seed, frac, name, v, t, res.epochs_run)
                result.runs.append(r)
                return r

            run("mono", [target], SharingScheme.MONO)
            multi = [run(f"mhan-{s.value}", [target, aux], s) for s in schemes]
            best = max(multi, key=lambda r: r.valid_f1)
            result.runs.append(Run(seed, frac, "ensemble", best.valid_f1, best.test_f1, best.epochs))
    return result
