"""Training loop, evaluation helpers and checkpoint files."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import layers
from .data import EmbeddingTable, EncodedSet
from .errors import ConfigError, DataFormatError, MhanError, NonFiniteError
from .metrics import EvalReport, ThresholdPolicy, micro_f1
from .model import HanParams, ModelConfig, forward
from .multitask import MultiTaskConfig, SharingRegistry, SharingScheme, build_mhan, cyclic_batch, joint_step
from .optim import make_optimizer
from .seeding import derive_rng

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mhan-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(MhanError, FloatingPointError):
    """The joint loss became non-finite."""


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epoch_size: int = 25_000
    max_epochs: int = 100
    patience: int | None = 5
    seed: int = 0
    clip_norm: float | None = None
    select_on: str | None = None

    def validate(self) -> "TrainConfig":
        if self.optimizer.lower() not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.lr < 0 or self.max_epochs < 1 or self.epoch_size < 1 or self.batch_size < 1:
            raise ConfigError("lr must be >= 0 and epoch/batch sizes and max_epochs positive")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be positive or None")
        return self

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class SetEval:
    report: EvalReport
    loss: float
    predictions: list[set[int]]
    probabilities: np.ndarray


def evaluate_set(
    params: HanParams,
    enc: EncodedSet,
    emb: EmbeddingTable,
    policy: ThresholdPolicy,
    batch_size: int = 256,
) -> SetEval:
    """Predict every document of ``enc`` and score against its gold labels."""
    k = params.config.k
    tau = policy.threshold(k)
    probs = np.zeros((len(enc), k))
    loss_sum = 0.0
    for start in range(0, len(enc), batch_size):
        idx = np.arange(start, min(start + batch_size, len(enc)))
        b = enc.batch(idx)
        out = forward(b, params, emb)
        probs[idx] = out.y_hat.data
        loss_sum += float(layers.bce_loss(b.y, out.y_hat).data.sum())
    preds = [set(np.flatnonzero(row > tau).tolist()) for row in probs]
    report = micro_f1(enc.gold_sets(), preds)
    loss = loss_sum / len(enc) if len(enc) else 0.0
    return SetEval(report, loss, preds, probs)


@dataclass
class TrainResult:
    log: list[dict]
    best_epoch: int
    best_score: tuple[float, float]
    epochs_run: int


def _snapshot(registry: SharingRegistry) -> list[np.ndarray]:
    return [t.data.copy() for t in registry.parameters()]


def _restore(registry: SharingRegistry, snap: list[np.ndarray]) -> None:
    for t, data in zip(registry.parameters(), snap):
        t.data[...] = data


def train(
    registry: SharingRegistry,
    train_sets: Mapping[str, EncodedSet],
    valid_sets: Mapping[str, EncodedSet],
    emb: EmbeddingTable,
    tcfg: TrainConfig,
    mtcfg: MultiTaskConfig | None = None,
    policy: ThresholdPolicy | None = None,
    log_path=None,
    stop_when: Callable[[dict], bool] | None = None,
) -> TrainResult:
    """Minimise the joint objective with cyclic multilingual batches.

    Each epoch draws ``epoch_size`` documents per language. Validation
    micro-F1 is tracked per epoch (ties broken by lower validation loss) and
    the best epoch's parameters are restored before returning. Training
    stops after ``patience`` epochs without improvement, or as soon as
    ``stop_when`` returns true for an epoch's log record.
    """
    tcfg.validate()
    langs = registry.languages
    if mtcfg is None:
        mtcfg = MultiTaskConfig(langs, tcfg.epoch_size, tcfg.batch_size)
    mtcfg.validate()
    policy = policy or ThresholdPolicy()
    for lang in langs:
        if lang not in train_sets or len(train_sets[lang]) == 0:
            raise ConfigError(f"no training documents for {lang!r}")
    gammas = {lang: mtcfg.gamma(lang) for lang in langs}
    opt = make_optimizer(tcfg.optimizer, registry.parameters(), tcfg.lr,
                         tcfg.beta1, tcfg.beta2, tcfg.eps)
    rng = derive_rng(tcfg.seed, "train", "batches")
    sizes = {lang: len(train_sets[lang]) for lang in langs}
    steps = math.ceil(len(langs) * mtcfg.epoch_size / mtcfg.batch_size)

    history: list[dict] = []
    best_score = (-math.inf, -math.inf)
    best_epoch, wait = 0, 0
    best = _snapshot(registry)
    log_file = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, tcfg.max_epochs + 1):
            joint_total = 0.0
            lang_sum = {lang: 0.0 for lang in langs}
            lang_n = {lang: 0 for lang in langs}
            for step in range(steps):
                batch = cyclic_batch(sizes, mtcfg.batch_size, rng)
                try:
                    res = joint_step(batch, registry, train_sets, emb, opt, gammas, tcfg.clip_norm)
                except NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"non-finite value at epoch {epoch}, step {step}: {exc}"
                    ) from exc
                loss = res.loss.item()
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
                joint_total += loss
                for lang, value in res.per_language.items():
                    lang_sum[lang] += value * res.counts[lang]
                    lang_n[lang] += res.counts[lang]

            per_lang = {}
            for lang in langs:
                entry = {"loss": lang_sum[lang] / max(lang_n[lang], 1)}
                if lang in valid_sets and len(valid_sets[lang]):
                    ev = evaluate_set(registry[lang], valid_sets[lang], emb, policy)
                    entry["valid_f1"] = ev.report.f1
                    entry["valid_loss"] = ev.loss
                per_lang[lang] = entry
            score = _selection_score(per_lang, tcfg.select_on)
            improved = score > best_score
            if improved:
                best_score, best_epoch, wait = score, epoch, 0
                best = _snapshot(registry)
            else:
                wait += 1
            record = {
                "epoch": epoch,
                "joint_loss": joint_total / steps,
                "per_lang": per_lang,
                "best_epoch": best_epoch,
            }
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log.debug("epoch %d joint loss %.5f score %s", epoch, record["joint_loss"], score)
            if tcfg.patience is not None and wait >= tcfg.patience:
                break
            if stop_when is not None and stop_when(record):
                break
    finally:
        if log_file:
            log_file.close()
    _restore(registry, best)
    return TrainResult(history, best_epoch, best_score, len(history))


def _selection_score(per_lang: dict, select_on: str | None) -> tuple[float, float]:
    langs = [select_on] if select_on else list(per_lang)
    entries = [per_lang[lang] for lang in langs if "valid_f1" in per_lang[lang]]
    if not entries:
        # no validation data: fall back to training loss
        return (0.0, -float(np.mean([per_lang[lang]["loss"] for lang in langs])))
    return (
        float(np.mean([e["valid_f1"] for e in entries])),
        -float(np.mean([e["valid_loss"] for e in entries])),
    )


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, registry: SharingRegistry, config: Mapping | None = None) -> None:
    """Write config echo and every distinct tensor as deterministic JSON."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": dict(config or {}),
        "scheme": registry.scheme.value,
        "languages": list(registry.languages),
        "model_configs": {lang: registry.configs[lang].to_dict() for lang in registry.languages},
        "tensors": [
            {"name": name, "shape": list(t.shape), "data": [float(v) for v in t.data.reshape(-1)]}
            for name, t in registry.named_parameters()
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[SharingRegistry, dict]:
    """Rebuild a registry from a checkpoint file; returns it with the config echo."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"checkpoint is not valid JSON ({exc.msg})", path) from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError("not a checkpoint file", path)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {payload.get('version')}", path)
    configs = {lang: ModelConfig.from_dict(payload["model_configs"][lang])
               for lang in payload["languages"]}
    registry = build_mhan(configs, SharingScheme.parse(payload["scheme"]), seed=0)
    tensors = dict(registry.named_parameters())
    stored = {t["name"]: t for t in payload["tensors"]}
    if set(stored) != set(tensors):
        raise DataFormatError("checkpoint tensors do not match the model layout", path)
    for name, t in tensors.items():
        rec = stored[name]
        if tuple(rec["shape"]) != t.shape:
            raise DataFormatError(f"shape mismatch for {name}", path)
        t.data[...] = np.asarray(rec["data"], dtype=float).reshape(t.shape)
    return registry, payload.get("config", {})
