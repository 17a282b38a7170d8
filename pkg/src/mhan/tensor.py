"""Dense float64 tensors with a dynamic reverse-mode tape.

Every operation that involves a tensor with ``requires_grad`` records a node
holding its parents and a closure mapping the output gradient to per-parent
gradients. :func:`backward` walks the recorded graph once in reverse
topological order and sums gradients arriving along different paths, which
is what makes a tensor shared by several language models receive the sum of
their contributions.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, EmptySequenceError, NonFiniteError, ShapeError

DTYPE = np.float64

ACTIVATIONS = ("relu", "sigmoid", "tanh")


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap an op output and record it on the tape when any parent needs grad."""
    out = Tensor.__new__(Tensor)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("operation produced a non-finite value")
    out.data = data
    out.grad = None
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return _result(
        data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is passed only where the input was inside."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _result(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """``a[..., n] @ b[n, p]``; leading axes of ``a`` act as a batch.

    ``b`` may also be a vector ``[n]``, in which case the last axis is
    contracted away.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data) if a.ndim > 1 else g * b.data
            gb = np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)),) * 2)
            return ga, gb
        ga = g @ b.data.T
        if a.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _result(data, (a, b), grad_fn)


# ---------------------------------------------------------------- reductions / shape


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(data, dtype=DTYPE), (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def expand_dims(a: Tensor, axis: int) -> Tensor:
    return reshape(a, np.expand_dims(a.data, axis).shape)


def getitem(a: Tensor, index) -> Tensor:
    data = a.data[index]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(data, dtype=DTYPE), (a,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    ax = axis % data.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(data, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % data.ndim
    return _result(
        data,
        tensors,
        lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))),
    )


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor by an integer array of any shape.

    Negative indices produce all-zero rows, which is how padded slots of a
    document grid are filled.
    """
    index = np.asarray(index)
    valid = index >= 0
    safe = np.where(valid, index, 0)
    data = a.data[safe] * valid[..., None]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, safe[valid], g[valid])
        return (full,)

    return _result(data, (a,), grad_fn)


def take_along(a: Tensor, index: np.ndarray, axis: int = 1) -> Tensor:
    """``np.take_along_axis`` with gradient; ``index`` lacks the trailing axis."""
    index = np.asarray(index)
    idx = index.reshape(index.shape + (1,) * (a.ndim - index.ndim))
    idx = np.broadcast_to(idx, index.shape + a.shape[index.ndim:])
    data = np.take_along_axis(a.data, idx, axis=axis)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        # indices may repeat, so scatter-add explicitly
        grids = list(np.indices(idx.shape, sparse=True))
        grids[axis % a.ndim] = idx
        np.add.at(full, tuple(grids), g)
        return (full,)

    return _result(data, (a,), grad_fn)


# ---------------------------------------------------------------- softmax


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions get exactly zero probability. Every row must have at
    least one valid position.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    if not np.all(mask.any(axis=-1)):
        raise EmptySequenceError("softmax over an empty sequence (all positions masked)")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _result(y, (logits,), grad_fn)


# ---------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that need grad, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from a scalar ``loss``.

    Leaf gradients accumulate onto existing ``.grad`` buffers; callers zero
    them between optimizer steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- finite differences


def grad_check(
    f: Callable[[], Tensor],
    params: Tensor | Iterable[Tensor],
    eps: float = 1e-4,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    Returns the largest ``|analytic - numeric| / max(1, |analytic|, |numeric|)``
    over every element of every parameter.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = [params] if isinstance(params, Tensor) else list(params)
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    for pi, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            try:
                flat[j] = orig + eps
                up = f().item()
                flat[j] = orig - eps
                down = f().item()
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"non-finite value while perturbing parameter {pi} element {j}"
                ) from exc
            finally:
                flat[j] = orig
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[j]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
