"""SGD and Adam over a list of distinct parameter tensors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


def _distinct(params: Sequence[Tensor]) -> list[Tensor]:
    seen, out = set(), []
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        self.params = _distinct(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self) -> None:
        if self.lr == 0:
            return
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class Adam(Optimizer):
    """Adam with bias correction; one moment pair per distinct tensor."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {id(p): np.zeros_like(p.data) for p in self.params}
        self.v = {id(p): np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p in self.params:
            if p.grad is None:
                continue
            m, v = self.m[id(p)], self.v[id(p)]
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> Optimizer:
    name = name.lower()
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr, beta1, beta2, eps)
    raise ConfigError(f"optimizer must be sgd or adam, got {name!r}")
