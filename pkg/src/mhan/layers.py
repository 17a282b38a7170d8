"""Encoders, attention pooling, the sigmoid classifier and the BCE loss.

All functions accept arbitrary leading batch axes. Sequences are laid out as
``[..., T, features]`` with a boolean ``mask[..., T]`` that is true on valid
positions; valid positions always form a prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError, EmptySequenceError, ShapeError
from .tensor import Tensor

ENCODER_KINDS = ("dense", "gru", "bigru")
GRU_GATES = ("z", "r", "h")
PROB_CLAMP = 1e-7


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _param(data, name) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class EncoderParams:
    kind: str
    d_in: int
    d_h: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @property
    def out_dim(self) -> int:
        return 2 * self.d_h if self.kind == "bigru" else self.d_h


@dataclass
class AttentionParams:
    W: Tensor
    b: Tensor
    u: Tensor

    @property
    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b, "u": self.u}


@dataclass
class ClassifierParams:
    W: Tensor
    b: Tensor

    @property
    def tensors(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}


def _gru_tensors(d_in, d_h, rng, prefix=""):
    out = {}
    for g in GRU_GATES:
        out[f"{prefix}W_{g}"] = _param(glorot(rng, d_in, d_h, (d_in, d_h)), f"{prefix}W_{g}")
    for g in GRU_GATES:
        out[f"{prefix}U_{g}"] = _param(glorot(rng, d_h, d_h, (d_h, d_h)), f"{prefix}U_{g}")
    for g in GRU_GATES:
        out[f"{prefix}b_{g}"] = _param(np.zeros(d_h), f"{prefix}b_{g}")
    return out


def init_encoder(kind: str, d_in: int, d_h: int, rng: np.random.Generator) -> EncoderParams:
    if kind not in ENCODER_KINDS:
        raise ContractError(f"unknown encoder kind {kind!r}")
    if d_in < 1 or d_h < 1:
        raise ContractError(f"encoder dims must be positive, got {d_in}x{d_h}")
    if kind == "dense":
        tensors = {
            "W": _param(glorot(rng, d_in, d_h, (d_in, d_h)), "W"),
            "b": _param(np.zeros(d_h), "b"),
        }
    elif kind == "gru":
        tensors = _gru_tensors(d_in, d_h, rng)
    else:
        tensors = {**_gru_tensors(d_in, d_h, rng, "fwd."), **_gru_tensors(d_in, d_h, rng, "bwd.")}
    return EncoderParams(kind, d_in, d_h, tensors)


def init_attention(d_enc: int, d_a: int, rng: np.random.Generator) -> AttentionParams:
    return AttentionParams(
        W=_param(glorot(rng, d_enc, d_a, (d_enc, d_a)), "W"),
        b=_param(np.zeros(d_a), "b"),
        u=_param(glorot(rng, d_a, 1, (d_a,)), "u"),
    )


def init_classifier(d_s: int, k: int, rng: np.random.Generator) -> ClassifierParams:
    return ClassifierParams(
        W=_param(glorot(rng, d_s, k, (d_s, k)), "W"),
        b=_param(np.zeros(k), "b"),
    )


def _check_input(x: Tensor, p: EncoderParams, expected: str):
    if p.kind != expected:
        raise ContractError(f"expected a {expected} encoder, got {p.kind}")
    if x.shape[-1] != p.d_in:
        raise ShapeError(f"encoder expects input width {p.d_in}, got shape {x.shape}")


def _check_prefix(mask: np.ndarray):
    if mask.shape[-1] > 1 and np.any(mask[..., 1:] & ~mask[..., :-1]):
        raise ContractError("mask is not a prefix mask (valid positions after padding)")


def dense_encode(x: Tensor, p: EncoderParams, act: str = "relu") -> Tensor:
    """Position-wise ``act(x_t W + b)``."""
    _check_input(x, p, "dense")
    return tn.activation(x @ p.tensors["W"] + p.tensors["b"], act)


def _gru_scan(x: Tensor, t: dict[str, Tensor], mask: np.ndarray, prefix: str) -> Tensor:
    lead = x.shape[:-2]
    steps = x.shape[-2]
    d_h = t[f"{prefix}U_z"].shape[0]
    xs = {g: x @ t[f"{prefix}W_{g}"] + t[f"{prefix}b_{g}"] for g in GRU_GATES}
    h = Tensor(np.zeros(lead + (d_h,)))
    outs = []
    for s in range(steps):
        step = (Ellipsis, s, slice(None))
        z = tn.sigmoid(xs["z"][step] + h @ t[f"{prefix}U_z"])
        r = tn.sigmoid(xs["r"][step] + h @ t[f"{prefix}U_r"])
        cand = tn.tanh(xs["h"][step] + (r * h) @ t[f"{prefix}U_h"])
        new = h + z * (cand - h)
        m = mask[..., s]
        if m.all():
            h = new
        else:
            h = h + (new - h) * m[..., None].astype(float)
        outs.append(h)
    return tn.stack(outs, axis=-2)


def gru_encode(x: Tensor, p: EncoderParams, mask) -> Tensor:
    """Unidirectional GRU over ``x[..., T, d_in]`` with ``h_0 = 0``.

    Padded steps carry the previous state forward unchanged.
    """
    _check_input(x, p, "gru")
    mask = np.asarray(mask, dtype=bool)
    _check_prefix(mask)
    return _gru_scan(x, p.tensors, mask, "")


def reverse_index(mask: np.ndarray) -> np.ndarray:
    """Per-row time index that reverses the valid prefix and fixes padding."""
    steps = mask.shape[-1]
    lengths = mask.sum(axis=-1, keepdims=True)
    t = np.arange(steps)
    return np.where(t < lengths, lengths - 1 - t, t)


def bigru_encode(x: Tensor, p: EncoderParams, mask) -> Tensor:
    """Forward and backward GRU states concatenated, forward half first."""
    _check_input(x, p, "bigru")
    mask = np.asarray(mask, dtype=bool)
    _check_prefix(mask)
    fwd = _gru_scan(x, p.tensors, mask, "fwd.")
    axis = x.ndim - 2
    rev = reverse_index(mask)
    bwd = _gru_scan(tn.take_along(x, rev, axis=axis), p.tensors, mask, "bwd.")
    bwd = tn.take_along(bwd, rev, axis=axis)
    return tn.concat([fwd, bwd], axis=-1)


def encode(x: Tensor, p: EncoderParams, mask, act: str = "relu") -> Tensor:
    if p.kind == "dense":
        return dense_encode(x, p, act)
    if p.kind == "gru":
        return gru_encode(x, p, mask)
    return bigru_encode(x, p, mask)


def _effective_lengths(mask: np.ndarray) -> np.ndarray:
    lengths = mask.sum(axis=-1)
    if np.any(lengths == 0):
        raise EmptySequenceError("pooling over a sequence with no valid positions")
    return lengths


def attention_pool(
    h: Tensor,
    a: AttentionParams,
    mask,
    strict_paper_scaling: bool = True,
    act: str = "relu",
    constant_length: int | None = None,
) -> tuple[Tensor, Tensor]:
    """Attention-weighted sum of ``h[..., T, d]``; returns ``(pooled, alpha)``.

    With ``strict_paper_scaling`` the sum is divided by the effective length
    (or by ``constant_length`` when given).
    """
    mask = np.asarray(mask, dtype=bool)
    if h.shape[-1] != a.W.shape[0]:
        raise ShapeError(f"attention expects width {a.W.shape[0]}, got {h.shape}")
    lengths = _effective_lengths(mask)
    v = tn.activation(h @ a.W + a.b, act)
    alpha = tn.masked_softmax(v @ a.u, mask)
    pooled = tn.tsum(tn.expand_dims(alpha, -1) * h, axis=-2)
    if strict_paper_scaling:
        denom = float(constant_length) if constant_length else lengths[..., None]
        pooled = pooled * (1.0 / denom)
    return pooled, alpha


def average_pool(h: Tensor, mask) -> Tensor:
    """Mean over valid positions."""
    mask = np.asarray(mask, dtype=bool)
    lengths = _effective_lengths(mask)
    weights = mask / lengths[..., None]
    return tn.tsum(h * weights[..., None], axis=-2)


def classify(u: Tensor, c: ClassifierParams) -> Tensor:
    """Independent per-label probabilities ``sigmoid(u W_c + b_c)``."""
    if u.shape[-1] != c.W.shape[0]:
        raise ShapeError(f"classifier expects width {c.W.shape[0]}, got {u.shape}")
    return tn.sigmoid(u @ c.W + c.b)


def bce_loss(y, y_hat: Tensor) -> Tensor:
    """Binary cross-entropy averaged over the label axis.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=float)
    if y.shape != y_hat.shape:
        raise ShapeError(f"label shape {y.shape} does not match predictions {y_hat.shape}")
    p = tn.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = tn.log(p) * y + tn.log(1.0 - p) * (1.0 - y)
    return tn.mean(-ll, axis=-1)
