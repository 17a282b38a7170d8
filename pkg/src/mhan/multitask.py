"""Sharing schemes across languages, the joint objective and cyclic batching."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import layers
from . import tensor as tn
from .data import EmbeddingTable, EncodedSet
from .errors import ConfigError, ContractError
from .model import HanParams, ModelConfig, build_component, component_names, forward
from .seeding import derive_rng
from .tensor import Tensor


class SharingScheme(enum.Enum):
    MONO = "mono"
    ENC = "enc"
    ATT = "att"
    BOTH = "both"

    @classmethod
    def parse(cls, value) -> "SharingScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"sharing must be one of mono|enc|att|both, got {value!r}") from None

    @property
    def shared_components(self) -> tuple[str, ...]:
        return SHARED[self]


SHARED = {
    SharingScheme.MONO: (),
    SharingScheme.ENC: ("word_encoder", "sentence_encoder"),
    # attention biases travel with their weight matrices
    SharingScheme.ATT: ("word_attention", "sentence_attention"),
    SharingScheme.BOTH: ("word_encoder", "sentence_encoder", "word_attention", "sentence_attention"),
}

# config fields that must agree across languages for shared tensors to typecheck
_SHARED_FIELDS = ("architecture", "encoder", "d", "d_w", "d_s", "d_a", "activation")


@dataclass
class MultiTaskConfig:
    languages: tuple[str, ...]
    epoch_size: int = 25_000
    batch_size: int = 16
    gammas: dict[str, float] | None = None

    def validate(self) -> "MultiTaskConfig":
        m = len(self.languages)
        if m < 1:
            raise ConfigError("at least one language is required")
        if self.batch_size < 1 or self.batch_size % m:
            raise ConfigError(f"batch size {self.batch_size} is not divisible by M={m}")
        if self.epoch_size < 1:
            raise ConfigError("epoch size must be positive")
        return self

    def gamma(self, lang: str) -> float:
        if self.gammas is None:
            return 1.0
        return float(self.gammas.get(lang, 1.0))


@dataclass
class SharingRegistry:
    """Per-language model views whose shared components are one object."""

    scheme: SharingScheme
    languages: tuple[str, ...]
    views: dict[str, HanParams]
    configs: dict[str, ModelConfig] = field(default_factory=dict)

    def __getitem__(self, lang: str) -> HanParams:
        try:
            return self.views[lang]
        except KeyError:
            raise ContractError(f"language {lang!r} is not in the registry") from None

    def tensor(self, role: str, lang: str) -> Tensor:
        return dict(self[lang].named_tensors())[role]

    def is_shared(self, component: str) -> bool:
        return component in self.scheme.shared_components and len(self.languages) > 1

    def scope(self, role: str) -> str:
        return "shared" if self.is_shared(role.split(".", 1)[0]) else "language"

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Every distinct tensor once, named ``shared/<role>`` or ``<lang>/<role>``."""
        out, seen = [], set()
        for lang in self.languages:
            for role, t in self[lang].named_tensors():
                if id(t) in seen:
                    continue
                seen.add(id(t))
                prefix = "shared" if self.scope(role) == "shared" else lang
                out.append((f"{prefix}/{role}", t))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def build_mhan(
    configs: Mapping[str, ModelConfig],
    scheme: SharingScheme | str,
    seed: int,
) -> SharingRegistry:
    """Build one model per language and tie the scheme's components."""
    scheme = SharingScheme.parse(scheme)
    langs = tuple(configs)
    if not langs:
        raise ConfigError("no languages given")
    first = configs[langs[0]].validate()
    for lang in langs[1:]:
        cfg = configs[lang].validate()
        if scheme is not SharingScheme.MONO:
            for f in _SHARED_FIELDS:
                if getattr(cfg, f) != getattr(first, f):
                    raise ConfigError(
                        f"{f} differs between {langs[0]} and {lang}; sharing needs equal dims"
                    )
    shared_names = scheme.shared_components if len(langs) > 1 else ()
    available = component_names(first)
    missing = [c for c in shared_names if c not in available]
    if missing:
        raise ConfigError(f"{first.architecture} has no {', '.join(missing)} to share")

    shared = {
        name: build_component(first, name, derive_rng(seed, "shared", name))
        for name in shared_names
    }
    views = {}
    for lang in langs:
        cfg = configs[lang]
        comps = {}
        for name in component_names(cfg):
            if name in shared:
                comps[name] = shared[name]
            else:
                comps[name] = build_component(cfg, name, derive_rng(seed, lang, name))
        views[lang] = HanParams(config=cfg, **comps)
    return SharingRegistry(scheme, langs, views, dict(configs))


@dataclass
class ParamCount:
    total: int
    shared: int
    per_language: dict[str, int]
    specific: dict[str, int]
    shares_attention_bias: bool = True

    @property
    def average_per_language(self) -> float:
        return self.total / len(self.per_language)

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "shared": self.shared,
            "per_language": self.per_language,
            "specific": self.specific,
            "average_per_language": self.average_per_language,
            "shares_attention_bias": self.shares_attention_bias,
        }


def count_params(registry: SharingRegistry) -> ParamCount:
    """Distinct-tensor parameter counts; shared tensors count once."""
    shared = 0
    specific = {lang: 0 for lang in registry.languages}
    for name, t in registry.named_parameters():
        scope = name.split("/", 1)[0]
        if scope == "shared":
            shared += t.size
        else:
            specific[scope] += t.size
    per_language = {lang: registry[lang].count() for lang in registry.languages}
    return ParamCount(shared + sum(specific.values()), shared, per_language, specific)


def cyclic_batch(
    sizes: Mapping[str, int] | Mapping[str, Sequence],
    batch_size: int,
    rng: np.random.Generator,
) -> list[tuple[str, int]]:
    """A minibatch of ``(language, index)`` pairs, ``batch_size / M`` per language.

    Languages are interleaved round-robin; indices are uniform with
    replacement within each language.
    """
    langs = list(sizes)
    m = len(langs)
    if m == 0 or batch_size % m:
        raise ConfigError(f"batch size {batch_size} is not divisible by M={m}")
    counts = {lang: (v if isinstance(v, int) else len(v)) for lang, v in sizes.items()}
    for lang, n in counts.items():
        if n < 1:
            raise ContractError(f"language {lang!r} has no training documents")
    per_lang = batch_size // m
    picks = {lang: rng.integers(counts[lang], size=per_lang) for lang in langs}
    return [(lang, int(picks[lang][i])) for i in range(per_lang) for lang in langs]


@dataclass
class JointLoss:
    loss: Tensor
    per_language: dict[str, float]
    counts: dict[str, int]


def joint_loss(
    batch: Sequence[tuple[str, int]],
    registry: SharingRegistry,
    sets: Mapping[str, EncodedSet],
    emb: EmbeddingTable,
    gammas: Mapping[str, float] | None = None,
    languages: Sequence[str] | None = None,
) -> JointLoss:
    """``(1/B) * sum_docs gamma_l * BCE`` over a mixed-language batch.

    ``languages`` restricts the sum to a subset while keeping the ``1/B``
    normaliser, which lets callers split the objective by language.
    """
    groups: dict[str, list[int]] = {}
    for lang, idx in batch:
        if lang not in registry.views:
            raise ContractError(f"language {lang!r} is not in the registry")
        groups.setdefault(lang, []).append(idx)
    total: Tensor | None = None
    per_language, counts = {}, {}
    for lang in registry.languages:
        if lang not in groups or (languages is not None and lang not in languages):
            continue
        enc = sets[lang]
        b = enc.batch(groups[lang])
        out = forward(b, registry[lang], emb)
        doc_losses = layers.bce_loss(b.y, out.y_hat)
        gamma = 1.0 if gammas is None else float(gammas.get(lang, 1.0))
        part = tn.tsum(doc_losses) * (gamma / len(batch))
        per_language[lang] = float(doc_losses.data.mean())
        counts[lang] = len(groups[lang])
        total = part if total is None else total + part
    if total is None:
        total = Tensor(0.0)
    return JointLoss(total, per_language, counts)


def clip_global_norm(params: Sequence[Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def joint_step(
    batch: Sequence[tuple[str, int]],
    registry: SharingRegistry,
    sets: Mapping[str, EncodedSet],
    emb: EmbeddingTable,
    optimizer,
    gammas: Mapping[str, float] | None = None,
    clip_norm: float | None = None,
) -> JointLoss:
    """Zero grads, one backward pass over the joint loss, one optimizer update."""
    optimizer.zero_grad()
    result = joint_loss(batch, registry, sets, emb, gammas)
    result.loss.backward()
    if clip_norm is not None:
        clip_global_norm(optimizer.params, clip_norm)
    optimizer.step()
    return result
